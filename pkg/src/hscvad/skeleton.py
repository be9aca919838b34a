"""Skeleton kinematic tree, rotation/cutting augmentation and the motion featurizer.

Skeleton sequences are float arrays of shape ``(T, K, 2)`` holding pixel
coordinates for ``K`` keypoints over ``T`` frames. A single frame is ``(K, 2)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DegenerateInputError, ShapeError

COCO17_NAMES = (
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
)

# root is the left hip; the head hangs off the left shoulder
COCO17_PARENTS = (5, 0, 0, 1, 2, 11, 12, 5, 6, 7, 8, 11, 11, 11, 12, 13, 14)
COCO17_HEAD = frozenset({0, 1, 2, 3, 4})


@dataclass(frozen=True)
class KinematicTree:
    parents: tuple[int, ...]
    head: frozenset[int] = frozenset()
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        n = len(self.parents)
        roots = [k for k, p in enumerate(self.parents) if p == k]
        if len(roots) != 1:
            raise ValueError(f"kinematic tree needs exactly one root, found {roots}")
        if any(not 0 <= p < n for p in self.parents):
            raise ValueError("parent index out of range")
        # every node must reach the root without revisiting
        for k in range(n):
            seen, cur = set(), k
            while self.parents[cur] != cur:
                if cur in seen:
                    raise ValueError(f"cycle through keypoint {k}")
                seen.add(cur)
                cur = self.parents[cur]
        if any(not 0 <= h < n for h in self.head):
            raise ValueError("head index out of range")

    @property
    def size(self) -> int:
        return len(self.parents)

    @property
    def root(self) -> int:
        return next(k for k, p in enumerate(self.parents) if p == k)

    @cached_property
    def children(self) -> tuple[tuple[int, ...], ...]:
        kids = [[] for _ in self.parents]
        for k, p in enumerate(self.parents):
            if p != k:
                kids[p].append(k)
        return tuple(tuple(sorted(c)) for c in kids)

    @cached_property
    def order(self) -> tuple[int, ...]:
        """Breadth-first order from the root, children by index."""
        out, queue = [], [self.root]
        while queue:
            k = queue.pop(0)
            out.append(k)
            queue.extend(self.children[k])
        return tuple(out)

    def descendants(self, k: int) -> list[int]:
        out, stack = [], list(self.children[k])
        while stack:
            c = stack.pop()
            out.append(c)
            stack.extend(self.children[c])
        return sorted(out)

    @cached_property
    def bones(self) -> tuple[tuple[int, int], ...]:
        return tuple((k, p) for k, p in enumerate(self.parents) if p != k)

    @cached_property
    def non_leaf(self) -> tuple[int, ...]:
        return tuple(k for k in range(self.size) if self.children[k])

    @cached_property
    def rotatable(self) -> tuple[int, ...]:
        """Keypoints eligible for rotation, in root-down order."""
        return tuple(k for k in self.order if k != self.root and k not in self.head)


COCO17 = KinematicTree(COCO17_PARENTS, COCO17_HEAD, COCO17_NAMES)

KEYPOINT_SCHEMES = {"coco17": COCO17}


@dataclass
class AugmentConfig:
    p_spatial: float = 0.5
    p_temporal: float = 0.5
    angle_range: tuple[float, float] = (-math.pi / 6, math.pi / 6)
    min_frames: int = 4
    per_frame_rotation: bool = False
    max_cut_retries: int = 10
    seed: int = 0

    def __post_init__(self):
        for name in ("p_spatial", "p_temporal"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be a probability, got {v}")
        lo, hi = self.angle_range
        if lo > hi:
            raise ValueError("angle_range must satisfy min <= max")
        self.angle_range = (float(lo), float(hi))
        if self.min_frames < 1:
            raise ValueError("min_frames must be >= 1")


def rotate_keypoint(point, parent, alpha: float) -> np.ndarray:
    """Rotate ``point`` about ``parent`` using the row-vector rotation
    ``(K - P) @ [[cos a, sin a], [-sin a, cos a]] + P``.

    Works on a single point ``(2,)`` or a stack of points ``(n, 2)``.
    """
    point = np.asarray(point, dtype=np.float64)
    parent = np.asarray(parent, dtype=np.float64)
    c, s = math.cos(alpha), math.sin(alpha)
    rot = np.array([[c, s], [-s, c]])
    return (point - parent) @ rot + parent


def _check_frame(frame, tree: KinematicTree) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (tree.size, 2):
        raise ShapeError(f"frame shape {frame.shape} does not match a {tree.size}-keypoint tree")
    return frame


def draw_rotation_plan(tree: KinematicTree, config: AugmentConfig, rng: np.random.Generator) -> list[tuple[int, float]]:
    """Select keypoints to rotate and their angles.

    One uniform draw decides each eligible keypoint (root-down order); a
    second draw gives the angle for the selected ones.
    """
    lo, hi = config.angle_range
    plan = []
    for k in tree.rotatable:
        if rng.random() < config.p_spatial:
            plan.append((k, float(rng.uniform(lo, hi))))
    return plan


def apply_rotation_plan(frame, tree: KinematicTree, plan) -> np.ndarray:
    """Rotate each planned keypoint and its whole subtree about its parent."""
    out = _check_frame(frame, tree).copy()
    for k, alpha in plan:
        if k == tree.root:
            continue
        idx = [k] + tree.descendants(k)
        out[idx] = rotate_keypoint(out[idx], out[tree.parents[k]], alpha)
    return out


def spatial_transform(frame, tree: KinematicTree, config: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    frame = _check_frame(frame, tree)
    return apply_rotation_plan(frame, tree, draw_rotation_plan(tree, config, rng))


def draw_temporal_cut(n_frames: int, config: AugmentConfig, rng: np.random.Generator) -> list[int]:
    """Indices of surviving frames after independent per-frame dropping."""
    if n_frames < 1:
        raise ValueError("cannot cut an empty sequence")
    need = min(config.min_frames, n_frames)
    for _ in range(config.max_cut_retries + 1):
        keep = np.flatnonzero(rng.random(n_frames) >= config.p_temporal)
        if keep.size >= need:
            return keep.tolist()
    return list(range(need))


def temporal_cut(frames, config: AugmentConfig, rng: np.random.Generator) -> list:
    frames = list(frames)
    return [frames[i] for i in draw_temporal_cut(len(frames), config, rng)]


@dataclass
class AugmentedTracklet:
    frames: np.ndarray
    rotations: list = field(default_factory=list)  # one plan, or one per frame
    kept: list[int] = field(default_factory=list)

    def replay_record(self, **extra) -> dict:
        return {**extra, "rotations": self.rotations, "kept": self.kept}


def augment_tracklet(seq, tree: KinematicTree, config: AugmentConfig, rng: np.random.Generator) -> AugmentedTracklet:
    """Spatial rotation on every frame followed by temporal cutting.

    By default one rotation plan is drawn per tracklet and applied to all of
    its frames, so the altered pose is temporally coherent; set
    ``per_frame_rotation`` to draw a fresh plan per frame instead.
    """
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 3 or seq.shape[1:] != (tree.size, 2) or len(seq) == 0:
        raise ShapeError(f"skeleton sequence shape {seq.shape} invalid for a {tree.size}-keypoint tree")
    if config.per_frame_rotation:
        plans = [draw_rotation_plan(tree, config, rng) for _ in seq]
        rotated = np.stack([apply_rotation_plan(f, tree, p) for f, p in zip(seq, plans)])
        rotations = plans
    else:
        plan = draw_rotation_plan(tree, config, rng)
        rotated = np.stack([apply_rotation_plan(f, tree, plan) for f in seq])
        rotations = [plan]
    kept = draw_temporal_cut(len(seq), config, rng)
    return AugmentedTracklet(rotated[kept], rotations, kept)


def write_replay_log(path, records) -> None:
    """One JSON object per augmented tracklet with every random draw."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def bone_lengths(frame, tree: KinematicTree) -> np.ndarray:
    frame = _check_frame(frame, tree)
    kids = [k for k, _ in tree.bones]
    pars = [p for _, p in tree.bones]
    return np.linalg.norm(frame[kids] - frame[pars], axis=1)


def motion_feature_dim(tree: KinematicTree = COCO17) -> int:
    return 2 * len(tree.non_leaf) + 2 * tree.size


def motion_featurize(seq, tree: KinematicTree = COCO17) -> np.ndarray:
    """Hand-crafted motion descriptor of a skeleton sequence.

    Each frame is centred on the root keypoint and divided by its mean bone
    length. The descriptor concatenates, in order:

    * mean and std (over frames) of the joint angle at every non-leaf
      keypoint, i.e. the signed angle from the incoming bone (or the x axis
      at the root) to the bone towards the first child;
    * mean and max of each keypoint's frame-to-frame displacement.
    """
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 3 or seq.shape[1:] != (tree.size, 2):
        raise ShapeError(f"skeleton sequence shape {seq.shape} invalid for a {tree.size}-keypoint tree")
    if len(seq) < 2:
        raise ShapeError("motion featurization needs at least two frames")
    if not np.all(np.isfinite(seq)):
        raise ValueError("non-finite keypoint coordinates")

    kids = np.array([k for k, _ in tree.bones])
    pars = np.array([p for _, p in tree.bones])
    scale = np.linalg.norm(seq[:, kids] - seq[:, pars], axis=2).mean(axis=1)
    if np.any(scale <= 1e-12):
        raise DegenerateInputError("degenerate skeleton: all keypoints coincide")
    norm = (seq - seq[:, tree.root : tree.root + 1]) / scale[:, None, None]

    nl = list(tree.non_leaf)
    first_child = [tree.children[k][0] for k in nl]
    out_vec = norm[:, first_child] - norm[:, nl]
    ref = np.empty_like(out_vec)
    for j, k in enumerate(nl):
        if k == tree.root:
            ref[:, j] = (1.0, 0.0)
        else:
            ref[:, j] = norm[:, k] - norm[:, tree.parents[k]]
    cross = ref[..., 0] * out_vec[..., 1] - ref[..., 1] * out_vec[..., 0]
    dot = np.sum(ref * out_vec, axis=-1)
    angles = np.arctan2(cross, dot)

    disp = np.linalg.norm(np.diff(norm, axis=0), axis=2)
    return np.concatenate([angles.mean(axis=0), angles.std(axis=0), disp.mean(axis=0), disp.max(axis=0)])
