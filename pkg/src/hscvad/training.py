"""Two-stage training.

Stage 1 optimizes the summed per-stream objective (reconstruction, scene and
object contrast against the memory banks, scene classification) with
AdaGrad, momentum-updating each sample's memory slot after every step.
Stage 2 fits the binary abnormality head on frozen motion latents of
original and augmented samples.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset
from .errors import TrainingError
from .evaluate import stream_scores
from .losses import LossSwitches, StreamBatch, combined_loss, cross_entropy_batch
from .model import STREAMS, HscModel, MemoryBank, ModelConfig, encode, encoder_input, memory_update
from .nn import AdaGradState, adagrad_step, mlp2_apply, mlp2_backward

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    tau: float = 0.5
    momentum: float = 0.9
    lr: float = 0.01
    batch_size: int = 128
    epochs: int = 30
    d_latent: int = 64
    seed: int = 0
    scene_contrast: bool = True
    object_contrast: bool = True
    linear_classification: bool = True
    exclude_self: bool = False
    scene_aware: bool = True
    # stage 2
    percentile: float = 95.0
    stage2_epochs: int = 60
    stage2_lr: float = 0.01
    stage2_batch_size: int = 128

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.lr < 0 or self.stage2_lr < 0:
            raise ValueError("learning rates must be >= 0")
        if self.batch_size < 1 or self.stage2_batch_size < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.epochs < 0 or self.stage2_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        if not 0.0 <= self.percentile <= 100.0:
            raise ValueError("percentile must be in [0, 100]")

    def switches(self) -> LossSwitches:
        return LossSwitches(self.scene_contrast, self.object_contrast, self.linear_classification, True, self.exclude_self)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StreamData:
    """All training rows of one stream; row index doubles as memory slot."""

    scene: np.ndarray  # (n, D_B) scene features
    targets: np.ndarray  # (n, D_*) object features
    scene_labels: np.ndarray
    cls: np.ndarray
    sample_ids: np.ndarray

    def __len__(self):
        return len(self.targets)


@dataclass
class TrainingSet:
    streams: dict  # stream -> StreamData
    row_of_sample: dict  # stream -> (n_samples,) row index or -1
    class_names: dict  # stream -> list of class names
    num_scenes: int
    n_samples: int


def class_label_of(sample, stream: str) -> str:
    if stream == "app":
        return sample.object_class
    return sample.action_class if sample.action_class is not None else "none"


def build_training_set(dataset: Dataset, scene_features, num_scenes: int | None = None, class_names: dict | None = None) -> TrainingSet:
    """Arrange a scene-labelled dataset into per-stream training arrays."""
    labels = [c.scene_label for c in dataset.clips]
    if any(l is None for l in labels):
        raise TrainingError("every clip needs a scene label before training")
    if num_scenes is None:
        num_scenes = max(labels) + 1 if labels else 1
    scene_features = np.asarray(scene_features, dtype=np.float64)
    if class_names is None:
        class_names = {}
        for s in STREAMS:
            pool = {class_label_of(x, s) for x in dataset.samples if s == "app" or x.motion is not None}
            class_names[s] = sorted(pool)
    streams, row_of = {}, {}
    n = len(dataset.samples)
    for s in STREAMS:
        idx = [i for i, x in enumerate(dataset.samples) if s == "app" or x.motion is not None]
        vocab = {name: k for k, name in enumerate(class_names[s])}
        clip_rows = [dataset.clip_index[dataset.samples[i].clip_key] for i in idx]
        width = dataset.dims["appearance" if s == "app" else "motion"]
        targets = np.stack([dataset.samples[i].appearance if s == "app" else dataset.samples[i].motion for i in idx]) if idx else np.zeros((0, width))
        streams[s] = StreamData(
            scene=scene_features[clip_rows] if idx else np.zeros((0, scene_features.shape[1])),
            targets=targets,
            scene_labels=np.array([labels[r] for r in clip_rows], dtype=np.int64),
            cls=np.array([vocab.get(class_label_of(dataset.samples[i], s), -1) for i in idx], dtype=np.int64),
            sample_ids=np.array(idx, dtype=np.int64),
        )
        rows = np.full(n, -1, dtype=np.int64)
        rows[idx] = np.arange(len(idx))
        row_of[s] = rows
    return TrainingSet(streams, row_of, class_names, num_scenes, n)


def init_banks(model: HscModel, tset: TrainingSet, momentum: float) -> dict:
    banks = {}
    for s in STREAMS:
        d = tset.streams[s]
        if len(d):
            rows = encode(model, s, d.scene, d.targets)
        else:
            rows = np.zeros((0, model.config.d_latent))
        banks[s] = MemoryBank(rows, momentum, d.scene_labels, d.cls, d.sample_ids)
    return banks


def make_batch(model: HscModel, tset: TrainingSet, stream: str, sample_idx) -> StreamBatch:
    rows = tset.row_of_sample[stream][sample_idx]
    rows = rows[rows >= 0]
    d = tset.streams[stream]
    return StreamBatch(
        inputs=encoder_input(model, stream, d.scene[rows], d.targets[rows]),
        targets=d.targets[rows],
        scene=d.scene_labels[rows],
        cls=d.cls[rows],
        slots=rows,
    )


@dataclass
class Stage1Result:
    model: HscModel
    banks: dict
    optimizer: AdaGradState
    history: list = field(default_factory=list)
    training_set: TrainingSet | None = None


def model_config_for(dataset: Dataset, num_scenes: int, config: TrainConfig) -> ModelConfig:
    return ModelConfig(
        d_app=dataset.dims["appearance"],
        d_mot=dataset.dims["motion"],
        d_scene=dataset.dims["scene"],
        num_scenes=num_scenes,
        d_latent=config.d_latent,
        scene_aware=config.scene_aware,
    )


def train_stage1(dataset: Dataset, scene_features, config: TrainConfig, num_scenes: int | None = None) -> Stage1Result:
    """Train encoders, decoders and scene heads on the original samples."""
    if not dataset.samples:
        raise TrainingError("empty training set")
    tset = build_training_set(dataset, scene_features, num_scenes)
    rng = np.random.default_rng(config.seed)
    model = HscModel.init(model_config_for(dataset, tset.num_scenes, config), rng)
    banks = init_banks(model, tset, config.momentum)
    params = {k: v for k, v in model.named_arrays().items() if not k.startswith("bin.")}
    opt = AdaGradState.zeros_like(params)
    switches = config.switches()
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(tset.n_samples)
        sums: dict[str, float] = {}
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            batches = {s: make_batch(model, tset, s, idx) for s in STREAMS}
            res = combined_loss(model, batches, banks, config.tau, switches, batch_size=len(idx))
            adagrad_step(params, res.grads, opt, config.lr)
            model.touch()
            for s, lat in res.latents.items():
                memory_update(banks[s], batches[s].slots, lat)
            for k, v in res.terms.items():
                sums[k] = sums.get(k, 0.0) + v * len(idx)
            sums["total"] = sums.get("total", 0.0) + res.total * len(idx)
            for k, v in res.skipped.items():
                sums[f"skipped.{k}"] = sums.get(f"skipped.{k}", 0.0) + v
        record = {"epoch": epoch}
        for k, v in sorted(sums.items()):
            record[k] = v if k.startswith("skipped.") else v / tset.n_samples
        history.append(record)
        log.info(json.dumps({"event": "epoch", **record}, sort_keys=True))
    return Stage1Result(model, banks, opt, history, tset)


def motion_scores(model: HscModel, bank: MemoryBank, scene_feats, motion_feats) -> np.ndarray:
    if len(motion_feats) == 0:
        return np.zeros(0)
    return stream_scores(model, "mot", bank, scene_feats, motion_feats)


@dataclass
class PseudoLabels:
    labels: np.ndarray  # 1 = abnormal
    scores: np.ndarray
    threshold: float


def pseudo_label_augmented(model: HscModel, banks: dict, augmented_scene, augmented_motion, reference_scores, percentile: float = 95.0) -> PseudoLabels:
    """Label augmented motion samples abnormal when their motion-stream
    reconstruction score exceeds the given percentile of the original
    training samples' scores."""
    augmented_motion = np.atleast_2d(np.asarray(augmented_motion, dtype=np.float64))
    if augmented_motion.size == 0:
        raise TrainingError("no augmented samples to label")
    ref = np.asarray(reference_scores, dtype=np.float64)
    if ref.size == 0:
        raise TrainingError("need original training scores for the threshold")
    threshold = float(np.percentile(ref, percentile))
    scores = motion_scores(model, banks["mot"], augmented_scene, augmented_motion)
    return PseudoLabels((scores > threshold).astype(np.int64), scores, threshold)


@dataclass
class Stage2Result:
    history: list
    accuracy: float


def train_stage2(model: HscModel, latents, labels, config: TrainConfig) -> Stage2Result:
    """Fit the binary head on fixed motion latents (label 1 = abnormal).

    ``latents`` normally stacks the original normal samples' latents and the
    pseudo-labelled augmented ones. The encoders are not touched.
    """
    x = np.asarray(latents, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if len(x) != len(y) or len(x) == 0:
        raise TrainingError("latents and labels must be non-empty and aligned")
    if len(np.unique(y)) < 2:
        raise TrainingError("stage-2 training needs both normal and abnormal samples")
    rng = np.random.default_rng(config.seed + 1)
    head = model.init_binary(rng)
    opt = AdaGradState.zeros_like(head)
    history = []
    for epoch in range(config.stage2_epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(order), config.stage2_batch_size):
            idx = order[start : start + config.stage2_batch_size]
            logits, cache = mlp2_apply(head, x[idx])
            loss, dlog = cross_entropy_batch(logits, y[idx])
            _, grads = mlp2_backward(head, cache, dlog / len(idx))
            adagrad_step(head, grads, opt, config.stage2_lr)
            total += float(loss.sum())
        history.append({"epoch": epoch, "loss": total / len(x)})
        log.info(json.dumps({"event": "stage2_epoch", "epoch": epoch, "loss": total / len(x)}))
    logits, _ = mlp2_apply(head, x)
    acc = float(np.mean(np.argmax(logits, axis=1) == y))
    return Stage2Result(history, acc)
