"""Scene-aware encoders, object-centric decoders, heads and memory banks.

Two streams share one structure: ``app`` (appearance) and ``mot`` (motion).
Each stream has an encoder MLP whose output is l2-normalized into a latent
code, a decoder MLP reconstructing only the object feature from the latent,
and a linear scene classifier. A binary abnormality head sits on motion
latents and is trained separately.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .nn import Mlp2Params, init_mlp2, l2_normalize, mlp2_apply, softmax

STREAMS = ("app", "mot")


@dataclass
class ModelConfig:
    d_app: int
    d_mot: int
    d_scene: int
    num_scenes: int
    d_latent: int = 64
    scene_aware: bool = True
    enc_hidden: int | None = None
    dec_hidden: int | None = None
    binary_hidden: int | None = None

    def __post_init__(self):
        if min(self.d_app, self.d_mot, self.d_scene, self.num_scenes, self.d_latent) <= 0:
            raise ShapeError("model dimensions must be positive")

    def obj_dim(self, stream: str) -> int:
        return {"app": self.d_app, "mot": self.d_mot}[stream]

    def enc_in(self, stream: str) -> int:
        return self.obj_dim(stream) + (self.d_scene if self.scene_aware else 0)


@dataclass(eq=False)
class HscModel:
    config: ModelConfig
    encoders: dict[str, Mlp2Params]
    decoders: dict[str, Mlp2Params]
    classifiers: dict[str, np.ndarray]
    binary: Mlp2Params | None = None

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator) -> "HscModel":
        enc, dec, lc = {}, {}, {}
        for s in STREAMS:
            enc[s] = init_mlp2(config.enc_in(s), config.d_latent, rng, config.enc_hidden)
            dec[s] = init_mlp2(config.d_latent, config.obj_dim(s), rng, config.dec_hidden)
            bound = np.sqrt(6.0 / (config.d_latent + config.num_scenes))
            lc[s] = rng.uniform(-bound, bound, size=(config.num_scenes, config.d_latent))
        return cls(config, enc, dec, lc)

    def init_binary(self, rng: np.random.Generator) -> Mlp2Params:
        self.binary = init_mlp2(self.config.d_latent, 2, rng, self.config.binary_hidden)
        return self.binary

    def named_arrays(self) -> dict[str, np.ndarray]:
        """Every parameter array by a stable dotted name (views, not copies)."""
        out = {}
        for s in STREAMS:
            for name, arr in self.encoders[s].arrays().items():
                out[f"enc.{s}.{name}"] = arr
            for name, arr in self.decoders[s].arrays().items():
                out[f"dec.{s}.{name}"] = arr
            out[f"lc.{s}"] = self.classifiers[s]
        if self.binary is not None:
            for name, arr in self.binary.arrays().items():
                out[f"bin.{name}"] = arr
        return out

    def stream_arrays(self, stream: str) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.named_arrays().items() if k.split(".")[1:2] == [stream]}

    def touch(self) -> None:
        """Invalidate forward caches after an in-place parameter update."""
        for s in STREAMS:
            self.encoders[s].version += 1
            self.decoders[s].version += 1
        if self.binary is not None:
            self.binary.version += 1

    def copy(self) -> "HscModel":
        return HscModel(
            self.config,
            {s: p.copy() for s, p in self.encoders.items()},
            {s: p.copy() for s, p in self.decoders.items()},
            {s: a.copy() for s, a in self.classifiers.items()},
            None if self.binary is None else self.binary.copy(),
        )


def _check_stream(stream):
    if stream not in STREAMS:
        raise ValueError(f"unknown stream {stream!r}")


def encoder_input(model: HscModel, stream: str, scene_feat, obj_feat) -> np.ndarray:
    _check_stream(stream)
    cfg = model.config
    obj = np.asarray(obj_feat, dtype=np.float64)
    if obj.shape[-1] != cfg.obj_dim(stream):
        raise ShapeError(f"{stream} feature has dim {obj.shape[-1]}, expected {cfg.obj_dim(stream)}")
    if not cfg.scene_aware:
        return obj
    scene = np.asarray(scene_feat, dtype=np.float64)
    if scene.shape[-1] != cfg.d_scene:
        raise ShapeError(f"scene feature has dim {scene.shape[-1]}, expected {cfg.d_scene}")
    if scene.ndim != obj.ndim:
        raise ShapeError("scene and object features must both be vectors or both batches")
    return np.concatenate([scene, obj], axis=-1)


def encode(model: HscModel, stream: str, scene_feat, obj_feat) -> np.ndarray:
    """Unit-norm latent code of ``[scene, object]`` (vector or row batch)."""
    x = encoder_input(model, stream, scene_feat, obj_feat)
    z, _ = mlp2_apply(model.encoders[stream], x)
    latent, _ = l2_normalize(z)
    return latent


def decode(model: HscModel, stream: str, latent) -> np.ndarray:
    _check_stream(stream)
    y, _ = mlp2_apply(model.decoders[stream], latent)
    return y


def classify_scene(model: HscModel, stream: str, latent) -> np.ndarray:
    _check_stream(stream)
    latent = np.asarray(latent, dtype=np.float64)
    lam = model.classifiers[stream]
    if latent.shape[-1] != lam.shape[1]:
        raise ShapeError(f"latent dim {latent.shape[-1]} != classifier input {lam.shape[1]}")
    return latent @ lam.T


def binary_logits(model: HscModel, latent_mot) -> np.ndarray:
    if model.binary is None:
        raise ValueError("model has no binary classifier")
    y, _ = mlp2_apply(model.binary, latent_mot)
    return y


def binary_classify(model: HscModel, latent_mot):
    """Probability of the ``abnormal`` class (index 1); float or array."""
    p = softmax(binary_logits(model, latent_mot), axis=-1)[..., 1]
    return float(p) if np.ndim(p) == 0 else p


@dataclass(eq=False)
class MemoryBank:
    """One unit-norm latent slot per training sample of a stream."""

    rows: np.ndarray
    momentum: float = 0.9
    scene_labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    class_labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    sample_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        n = len(self.rows)
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        for name in ("scene_labels", "class_labels", "sample_ids"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            if arr.size == 0 and n:
                arr = np.zeros(n, dtype=np.int64) if name != "sample_ids" else np.arange(n)
            if arr.shape != (n,):
                raise ShapeError(f"{name} must have one entry per slot")
            setattr(self, name, arr)

    def __len__(self) -> int:
        return len(self.rows)

    def subset(self, index) -> "MemoryBank":
        index = np.asarray(index)
        return MemoryBank(
            self.rows[index].copy(), self.momentum, self.scene_labels[index], self.class_labels[index], self.sample_ids[index]
        )

    def subsample(self, size: int, seed: int) -> "MemoryBank":
        """Uniform random subset of ``size`` slots (whole bank if larger)."""
        if size >= len(self):
            return self.subset(np.arange(len(self)))
        pick = np.sort(np.random.default_rng(seed).choice(len(self), size=size, replace=False))
        return self.subset(pick)

    def copy(self) -> "MemoryBank":
        return self.subset(np.arange(len(self)))


def memory_update(bank: MemoryBank, slot, latent) -> MemoryBank:
    """Momentum update ``row <- normalize((1 - m) * latent + m * row)`` in place.

    ``slot`` may be an int or an index array with one latent row per slot.
    """
    slot_arr = np.atleast_1d(np.asarray(slot))
    if np.any(slot_arr < 0) or np.any(slot_arr >= len(bank)):
        raise IndexError(f"memory slot out of range (bank size {len(bank)})")
    latent = np.atleast_2d(np.asarray(latent, dtype=np.float64))
    if latent.shape != (len(slot_arr), bank.rows.shape[1]):
        raise ShapeError("latent shape does not match slots / bank width")
    m = bank.momentum
    if len(np.unique(slot_arr)) == len(slot_arr):
        mixed = (1.0 - m) * latent + m * bank.rows[slot_arr]
        bank.rows[slot_arr], _ = l2_normalize(mixed)
        return bank
    # repeated slots must be applied in sequence
    for s, f in zip(slot_arr, latent):
        mixed = (1.0 - m) * f + m * bank.rows[s]
        bank.rows[s], _ = l2_normalize(mixed)
    return bank


def memory_retrieve(bank: MemoryBank, latent) -> tuple[np.ndarray, np.ndarray]:
    """Softmax-of-dot-product weights over all slots and the weighted latent.

    Accepts one latent ``(D,)`` or a batch ``(B, D)``.
    """
    if len(bank) == 0:
        raise ValueError("cannot retrieve from an empty memory bank")
    latent = np.asarray(latent, dtype=np.float64)
    if latent.shape[-1] != bank.rows.shape[1]:
        raise ShapeError("latent width does not match memory bank")
    w = softmax(latent @ bank.rows.T, axis=-1)
    return w, w @ bank.rows
