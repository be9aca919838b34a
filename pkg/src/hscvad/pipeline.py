"""End-to-end workflow: cluster scenes, train, augment + refine, evaluate.

``HscState`` bundles everything a checkpoint stores. The functions here are
what the CLI and the demo scripts call.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt
from .data import Dataset
from .errors import CheckpointError, TrainingError
from .evaluate import ObjectScores, ScoreSeries, build_series, score_clips, score_samples
from .model import STREAMS, HscModel, MemoryBank, ModelConfig, encode
from .nn import AdaGradState, Mlp2Params
from .scene import SceneClustering, assign_scene_labels, clip_scene_features, fit_scene_clustering
from .skeleton import COCO17, AugmentConfig, augment_tracklet, motion_featurize
from .training import (
    TrainConfig,
    build_training_set,
    motion_scores,
    pseudo_label_augmented,
    train_stage1,
    train_stage2,
)

STAGE2_MODES = ("off", "ma-", "ma-+")

# wide rotations used to manufacture abnormal skeletons for the MA-+ mode
SEVERE_ANGLE_RANGE = (-math.pi, math.pi)


@dataclass(eq=False)
class HscState:
    model: HscModel
    banks: dict
    clustering: SceneClustering
    train_config: TrainConfig
    class_names: dict
    optimizer: AdaGradState | None = None
    history: list = field(default_factory=list)
    stage2: dict = field(default_factory=dict)
    replay: list = field(default_factory=list)  # augmentation draws of the last refine()


def label_scenes(dataset: Dataset, eps: float = 0.15, min_pts: int = 3):
    """Cluster training scene features; returns (labelled dataset, clustering, features)."""
    feats = clip_scene_features(dataset)
    clustering = fit_scene_clustering(feats, eps, min_pts)
    return assign_scene_labels(dataset, clustering, feats, use_fit_labels=True), clustering, feats


def fit(train: Dataset, config: TrainConfig | None = None, eps: float = 0.15, min_pts: int = 3) -> HscState:
    """Stage-1 training on the original (non-augmented) training split."""
    config = config or TrainConfig()
    labelled, clustering, feats = label_scenes(train, eps, min_pts)
    res = train_stage1(labelled, feats, config, num_scenes=clustering.num_clusters)
    return HscState(res.model, res.banks, clustering, config, res.training_set.class_names, res.optimizer, res.history)


@dataclass
class AugmentedSet:
    scene: np.ndarray  # (n, D_B)
    motion: np.ndarray  # (n, D_M)
    severe: np.ndarray  # generator flag: drawn with the wide angle range
    source: np.ndarray  # training sample index
    replay: list


def augment_samples(train: Dataset, mode: str, aug: AugmentConfig, copies: int = 1, scene_features=None) -> AugmentedSet:
    """Spatio-temporal augmentation of every training tracklet with a skeleton.

    ``ma-`` draws only from ``aug.angle_range``; ``ma-+`` additionally draws
    an equal number of copies with the wide range.
    """
    if mode not in ("ma-", "ma-+"):
        raise ValueError(f"augmentation mode must be 'ma-' or 'ma-+', got {mode!r}")
    if scene_features is None:
        scene_features = clip_scene_features(train)
    rng = np.random.default_rng(aug.seed)
    severe_cfg = AugmentConfig(aug.p_spatial, aug.p_temporal, SEVERE_ANGLE_RANGE, aug.min_frames, aug.per_frame_rotation, aug.max_cut_retries, aug.seed)
    configs = [(aug, False)] + ([(severe_cfg, True)] if mode == "ma-+" else [])
    scene, motion, severe, source, replay = [], [], [], [], []
    for i, s in enumerate(train.samples):
        if s.skeleton is None:
            continue
        row = train.clip_index[s.clip_key]
        for cfg, is_severe in configs:
            for c in range(copies):
                out = augment_tracklet(s.skeleton, COCO17, cfg, rng)
                if len(out.frames) < 2:
                    continue
                scene.append(scene_features[row])
                motion.append(motion_featurize(out.frames))
                severe.append(is_severe)
                source.append(i)
                replay.append(out.replay_record(sample=i, copy=c, severe=is_severe))
    if not motion:
        raise TrainingError("no training sample has a skeleton to augment")
    return AugmentedSet(np.stack(scene), np.stack(motion), np.array(severe), np.array(source), replay)


def refine(state: HscState, train: Dataset, mode: str = "ma-+", aug: AugmentConfig | None = None, copies: int = 1) -> dict:
    """Stage 2: pseudo-label augmented samples and fit the binary head."""
    if mode == "off":
        state.model.binary = None
        state.stage2 = {"mode": "off"}
        return state.stage2
    aug = aug or AugmentConfig(seed=state.train_config.seed)
    labelled, _, feats = label_scenes_with(state, train)
    tset = build_training_set(labelled, feats, state.clustering.num_clusters, state.class_names)
    mot = tset.streams["mot"]
    ref_scores = motion_scores(state.model, state.banks["mot"], mot.scene, mot.targets)
    augmented = augment_samples(train, mode, aug, copies, feats)
    pl = pseudo_label_augmented(state.model, state.banks, augmented.scene, augmented.motion, ref_scores, state.train_config.percentile)
    orig_lat = encode(state.model, "mot", mot.scene, mot.targets)
    aug_lat = encode(state.model, "mot", augmented.scene, augmented.motion)
    latents = np.concatenate([orig_lat, aug_lat])
    labels = np.concatenate([np.zeros(len(orig_lat), dtype=np.int64), pl.labels])
    res = train_stage2(state.model, latents, labels, state.train_config)
    state.stage2 = {
        "mode": mode,
        "threshold": pl.threshold,
        "n_augmented": int(len(pl.labels)),
        "n_abnormal": int(pl.labels.sum()),
        "abnormal_rate_mild": float(pl.labels[~augmented.severe].mean()),
        "abnormal_rate_severe": float(pl.labels[augmented.severe].mean()) if augmented.severe.any() else None,
        "train_accuracy": res.accuracy,
        "history": res.history,
    }
    state.replay = augmented.replay
    return state.stage2


def label_scenes_with(state: HscState, dataset: Dataset):
    """Scene labels for ``dataset`` from a fitted state's centroids."""
    feats = clip_scene_features(dataset)
    use_fit = dataset.split == "train" and len(state.clustering.labels) == len(dataset.clips)
    return assign_scene_labels(dataset, state.clustering, feats, use_fit_labels=use_fit), state.clustering, feats


@dataclass
class EvalResult:
    auc: float
    auc_raw: float
    series: ScoreSeries
    objects: ObjectScores
    scene_features: np.ndarray


def evaluate(
    state: HscState,
    test: Dataset,
    sigma_clips: float = 2.0,
    memory_size: int | None = None,
    memory_seed: int = 0,
    normalize: bool = False,
    use_binary: bool | None = None,
    memory_fraction: float | None = None,
) -> EvalResult:
    """Score ``test`` and compute smoothed and raw micro-AUC.

    ``memory_size`` keeps that many random slots of every bank;
    ``memory_fraction`` instead keeps ``ceil(fraction * len(bank))`` per bank.
    Both draw from ``memory_seed``.
    """
    if memory_size is not None and memory_fraction is not None:
        raise ValueError("give memory_size or memory_fraction, not both")
    feats = clip_scene_features(test)
    banks = state.banks
    if memory_size is not None:
        if memory_size < 1:
            raise ValueError("memory_size must be >= 1")
        banks = {s: b.subsample(memory_size, memory_seed) for s, b in banks.items()}
    elif memory_fraction is not None:
        if not 0.0 < memory_fraction <= 1.0:
            raise ValueError("memory_fraction must be in (0, 1]")
        banks = {s: b.subsample(max(1, math.ceil(memory_fraction * len(b))), memory_seed) for s, b in banks.items()}
    obj = score_samples(state.model, banks, test, feats, use_binary=use_binary, normalize=normalize)
    clip = score_clips(obj.final, test)
    series = build_series(clip, test, sigma_clips)
    return EvalResult(series.auc(True), series.auc(False), series, obj, feats)


# --- checkpoint mapping ------------------------------------------------------


def state_to_arrays(state: HscState) -> tuple[dict, dict]:
    arrays = dict(state.model.named_arrays())
    for s, b in state.banks.items():
        arrays[f"bank.{s}.rows"] = b.rows
        arrays[f"bank.{s}.scene"] = b.scene_labels.astype(np.float64)
        arrays[f"bank.{s}.cls"] = b.class_labels.astype(np.float64)
        arrays[f"bank.{s}.sample"] = b.sample_ids.astype(np.float64)
    arrays["scene.centroids"] = state.clustering.centroids
    arrays["scene.labels"] = state.clustering.labels.astype(np.float64)
    if state.clustering.raw_labels is not None:
        arrays["scene.raw_labels"] = state.clustering.raw_labels.astype(np.float64)
    if state.optimizer is not None:
        for k, v in state.optimizer.accum.items():
            arrays[f"opt.{k}"] = v
    cfg = state.model.config
    meta = {
        "model": {
            "d_app": cfg.d_app, "d_mot": cfg.d_mot, "d_scene": cfg.d_scene, "num_scenes": cfg.num_scenes,
            "d_latent": cfg.d_latent, "scene_aware": cfg.scene_aware,
        },
        "train_config": state.train_config.to_dict(),
        "class_names": state.class_names,
        "clustering": {"eps": state.clustering.eps, "min_pts": state.clustering.min_pts},
        "momentum": {s: b.momentum for s, b in state.banks.items()},
        "optimizer_eps": None if state.optimizer is None else state.optimizer.eps,
        "history": state.history,
        "stage2": {k: v for k, v in state.stage2.items() if k != "history"},
    }
    return arrays, meta


def save_state(state: HscState, path) -> None:
    arrays, meta = state_to_arrays(state)
    ckpt.save_checkpoint(path, arrays, meta)


def _mlp(arrays, prefix):
    return Mlp2Params(*(arrays[f"{prefix}.{n}"] for n in ("W1", "b1", "W2", "b2")))


def load_state(path) -> HscState:
    arrays, meta = ckpt.load_checkpoint(path)
    try:
        mc = ModelConfig(**meta["model"])
        enc = {s: _mlp(arrays, f"enc.{s}") for s in STREAMS}
        dec = {s: _mlp(arrays, f"dec.{s}") for s in STREAMS}
        lc = {s: arrays[f"lc.{s}"] for s in STREAMS}
        binary = _mlp(arrays, "bin") if "bin.W1" in arrays else None
        model = HscModel(mc, enc, dec, lc, binary)
        banks = {
            s: MemoryBank(
                arrays[f"bank.{s}.rows"], meta["momentum"][s], arrays[f"bank.{s}.scene"].astype(np.int64),
                arrays[f"bank.{s}.cls"].astype(np.int64), arrays[f"bank.{s}.sample"].astype(np.int64),
            )
            for s in STREAMS
        }
        raw = arrays.get("scene.raw_labels")
        clustering = SceneClustering(
            meta["clustering"]["eps"], meta["clustering"]["min_pts"], arrays["scene.labels"].astype(np.int64),
            arrays["scene.centroids"], None if raw is None else raw.astype(np.int64),
        )
        opt_arrays = {k[4:]: v for k, v in arrays.items() if k.startswith("opt.")}
        optimizer = AdaGradState(opt_arrays, meta["optimizer_eps"]) if opt_arrays else None
        tc = TrainConfig(**meta["train_config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"checkpoint is missing or has malformed entries: {exc}") from None
    return HscState(model, banks, clustering, tc, meta["class_names"], optimizer, meta.get("history", []), meta.get("stage2", {}))
