"""Domain records and the newline-delimited JSON dataset format.

A dataset file starts with one header object followed by ``clip`` and
``sample`` records, one JSON object per line. See ``docs/formats.md``.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DatasetError
from .skeleton import KEYPOINT_SCHEMES

DATASET_FORMAT = "hscvad-dataset"
DATASET_VERSION = 1


@dataclass(eq=False)
class TrackletSample:
    video_id: str
    clip_index: int
    object_id: int
    appearance: np.ndarray
    object_class: str
    skeleton: Optional[np.ndarray] = None  # (T, K, 2)
    motion: Optional[np.ndarray] = None
    action_class: Optional[str] = None
    anomaly_label: Optional[int] = None

    @property
    def clip_key(self) -> tuple[str, int]:
        return (self.video_id, self.clip_index)

    @property
    def has_motion(self) -> bool:
        return self.motion is not None


@dataclass(eq=False)
class ClipRecord:
    video_id: str
    clip_index: int
    frame_count: int
    seg_grids: Optional[np.ndarray] = None  # (T, H, W) integer class ids
    scene_feature: Optional[np.ndarray] = None
    scene_label: Optional[int] = None
    anomaly_label: Optional[int] = None

    @property
    def key(self) -> tuple[str, int]:
        return (self.video_id, self.clip_index)


@dataclass
class SegmentationSpec:
    num_classes: int
    foreground: tuple[int, ...] = ()
    pool_size: int = 8


@dataclass(eq=False)
class Dataset:
    split: str
    dims: dict  # {"appearance": D_A, "motion": D_M, "scene": D_B}
    clips: list[ClipRecord] = field(default_factory=list)
    samples: list[TrackletSample] = field(default_factory=list)
    keypoint_scheme: str = "coco17"
    segmentation: Optional[SegmentationSpec] = None

    def __post_init__(self):
        self._index = None

    @property
    def clip_index(self) -> dict[tuple[str, int], int]:
        if self._index is None:
            self._index = {c.key: i for i, c in enumerate(self.clips)}
        return self._index

    def clip_of(self, sample: TrackletSample) -> ClipRecord:
        return self.clips[self.clip_index[sample.clip_key]]

    def with_clips(self, clips) -> "Dataset":
        return Dataset(self.split, dict(self.dims), list(clips), self.samples, self.keypoint_scheme, self.segmentation)

    def with_samples(self, samples) -> "Dataset":
        return Dataset(self.split, dict(self.dims), self.clips, list(samples), self.keypoint_scheme, self.segmentation)

    def validate(self) -> "Dataset":
        validate_dataset(self)
        return self


def _vec(values, record, name, dim=None):
    try:
        arr = np.asarray(values, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise DatasetError(f"{name} is not numeric", record) from exc
    if arr.ndim != 1:
        raise DatasetError(f"{name} must be a flat list", record)
    if dim is not None and arr.shape[0] != dim:
        raise DatasetError(f"{name} has dimension {arr.shape[0]}, expected {dim}", record)
    if not np.all(np.isfinite(arr)):
        raise DatasetError(f"{name} contains non-finite values", record)
    return arr


def _check_clip(clip: ClipRecord, ds: Dataset, record=None):
    if clip.clip_index < 0:
        raise DatasetError("clip_index must be >= 0", record)
    if clip.frame_count < 1:
        raise DatasetError("frame_count must be >= 1", record)
    if (clip.seg_grids is None) == (clip.scene_feature is None):
        raise DatasetError("clip needs exactly one of seg_grids / scene_feature", record)
    if clip.scene_feature is not None:
        if clip.scene_feature.shape != (ds.dims["scene"],):
            raise DatasetError(
                f"scene_feature has dimension {clip.scene_feature.shape[0]}, expected {ds.dims['scene']}", record
            )
    else:
        g = clip.seg_grids
        if g.ndim != 3 or g.shape[0] == 0:
            raise DatasetError("seg_grids must be a non-empty list of 2-D grids", record)
        if ds.segmentation is None:
            raise DatasetError("seg_grids present but header has no segmentation section", record)
        if g.min() < 0 or g.max() >= ds.segmentation.num_classes:
            raise DatasetError("segmentation class id out of range", record)
        p = ds.segmentation.pool_size
        d_b = ds.segmentation.num_classes * -(-g.shape[1] // p) * -(-g.shape[2] // p)
        if d_b != ds.dims["scene"]:
            raise DatasetError(f"grids pool to dimension {d_b}, header says {ds.dims['scene']}", record)
    if ds.split == "test" and clip.anomaly_label not in (0, 1):
        raise DatasetError("test clips need an anomaly_label in {0, 1}", record)


def _check_sample(s: TrackletSample, ds: Dataset, record=None):
    if s.clip_index < 0:
        raise DatasetError("clip_index must be >= 0", record)
    if s.appearance.shape != (ds.dims["appearance"],):
        raise DatasetError(
            f"appearance has dimension {s.appearance.shape[0]}, expected {ds.dims['appearance']}", record
        )
    if s.motion is not None and s.motion.shape != (ds.dims["motion"],):
        raise DatasetError(f"motion has dimension {s.motion.shape[0]}, expected {ds.dims['motion']}", record)
    if s.skeleton is not None:
        k = KEYPOINT_SCHEMES[ds.keypoint_scheme].size
        if s.skeleton.ndim != 3 or s.skeleton.shape[1:] != (k, 2):
            raise DatasetError(f"skeleton frames must have {k} (x, y) keypoints", record)
        if not np.all(np.isfinite(s.skeleton)):
            raise DatasetError("skeleton contains non-finite coordinates", record)
    if ds.split == "test" and s.anomaly_label not in (0, 1):
        raise DatasetError("test samples need an anomaly_label in {0, 1}", record)
    if s.clip_key not in ds.clip_index:
        raise DatasetError(f"sample references unknown clip {s.clip_key}", record)


def validate_dataset(ds: Dataset) -> None:
    if ds.split not in ("train", "test"):
        raise DatasetError(f"unknown split {ds.split!r}")
    if ds.keypoint_scheme not in KEYPOINT_SCHEMES:
        raise DatasetError(f"unknown keypoint scheme {ds.keypoint_scheme!r}")
    seen = set()
    for i, c in enumerate(ds.clips):
        if c.key in seen:
            raise DatasetError(f"duplicate clip {c.key}", i)
        seen.add(c.key)
        _check_clip(c, ds, i)
    ds._index = None
    for i, s in enumerate(ds.samples):
        _check_sample(s, ds, i)


def _header(ds: Dataset) -> dict:
    head = {
        "type": "header",
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "split": ds.split,
        "dims": {k: int(ds.dims[k]) for k in ("appearance", "motion", "scene")},
        "keypoint_scheme": ds.keypoint_scheme,
    }
    if ds.segmentation is not None:
        head["segmentation"] = {
            "num_classes": ds.segmentation.num_classes,
            "foreground": list(ds.segmentation.foreground),
            "pool_size": ds.segmentation.pool_size,
        }
    return head


def _opt_list(a):
    return None if a is None else a.tolist()


def clip_to_json(c: ClipRecord) -> dict:
    rec = {"type": "clip", "video_id": c.video_id, "clip_index": c.clip_index, "frame_count": c.frame_count}
    if c.seg_grids is not None:
        rec["seg_grids"] = c.seg_grids.tolist()
    else:
        rec["scene_feature"] = c.scene_feature.tolist()
    rec["scene_label"] = c.scene_label
    rec["anomaly_label"] = c.anomaly_label
    return rec


def sample_to_json(s: TrackletSample) -> dict:
    return {
        "type": "sample",
        "video_id": s.video_id,
        "clip_index": s.clip_index,
        "object_id": s.object_id,
        "object_class": s.object_class,
        "action_class": s.action_class,
        "anomaly_label": s.anomaly_label,
        "appearance": s.appearance.tolist(),
        "motion": _opt_list(s.motion),
        "skeleton": _opt_list(s.skeleton),
    }


def save_dataset(ds: Dataset, path) -> None:
    lines = [_header(ds)]
    lines += [clip_to_json(c) for c in ds.clips]
    lines += [sample_to_json(s) for s in ds.samples]
    with open(path, "w", encoding="utf-8") as fh:
        for obj in lines:
            fh.write(json.dumps(obj, separators=(",", ":")) + "\n")


def _int_or_none(v, record, name):
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, int):
        raise DatasetError(f"{name} must be an integer", record)
    return v


def _clip_from_json(rec, ds, i) -> ClipRecord:
    try:
        grids = rec.get("seg_grids")
        feat = rec.get("scene_feature")
        clip = ClipRecord(
            video_id=str(rec["video_id"]),
            clip_index=int(rec["clip_index"]),
            frame_count=int(rec["frame_count"]),
            seg_grids=None if grids is None else np.asarray(grids, dtype=np.int64),
            scene_feature=None if feat is None else _vec(feat, i, "scene_feature"),
            scene_label=_int_or_none(rec.get("scene_label"), i, "scene_label"),
            anomaly_label=_int_or_none(rec.get("anomaly_label"), i, "anomaly_label"),
        )
    except KeyError as exc:
        raise DatasetError(f"clip record missing field {exc}", i) from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, DatasetError):
            raise
        raise DatasetError(f"malformed clip record: {exc}", i) from None
    _check_clip(clip, ds, i)
    return clip


def _sample_from_json(rec, ds, i) -> TrackletSample:
    try:
        skel = rec.get("skeleton")
        mot = rec.get("motion")
        sample = TrackletSample(
            video_id=str(rec["video_id"]),
            clip_index=int(rec["clip_index"]),
            object_id=int(rec["object_id"]),
            appearance=_vec(rec["appearance"], i, "appearance"),
            object_class=str(rec["object_class"]),
            skeleton=None if skel is None else np.asarray(skel, dtype=np.float64),
            motion=None if mot is None else _vec(mot, i, "motion"),
            action_class=None if rec.get("action_class") is None else str(rec["action_class"]),
            anomaly_label=_int_or_none(rec.get("anomaly_label"), i, "anomaly_label"),
        )
    except KeyError as exc:
        raise DatasetError(f"sample record missing field {exc}", i) from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, DatasetError):
            raise
        raise DatasetError(f"malformed sample record: {exc}", i) from None
    return sample


def load_dataset(path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines()]
    if not lines:
        raise DatasetError("empty dataset file (no header)", 0)
    records = []
    for i, ln in enumerate(lines):
        if not ln.strip():
            raise DatasetError("blank line", i)
        try:
            records.append(json.loads(ln))
        except json.JSONDecodeError as exc:
            raise DatasetError(f"invalid JSON: {exc.msg}", i) from None

    head = records[0]
    if not isinstance(head, dict) or head.get("type") != "header" or head.get("format") != DATASET_FORMAT:
        raise DatasetError("first line must be an hscvad-dataset header", 0)
    if head.get("version") != DATASET_VERSION:
        raise DatasetError(f"unsupported dataset version {head.get('version')}", 0)
    try:
        dims = {k: int(head["dims"][k]) for k in ("appearance", "motion", "scene")}
    except (KeyError, TypeError, ValueError):
        raise DatasetError("header dims must give appearance, motion and scene", 0) from None
    if min(dims.values()) <= 0:
        raise DatasetError("header dims must be positive", 0)
    seg = None
    if head.get("segmentation") is not None:
        s = head["segmentation"]
        seg = SegmentationSpec(int(s["num_classes"]), tuple(int(c) for c in s.get("foreground", ())), int(s.get("pool_size", 8)))
    ds = Dataset(head.get("split", ""), dims, keypoint_scheme=head.get("keypoint_scheme", "coco17"), segmentation=seg)
    if ds.split not in ("train", "test"):
        raise DatasetError(f"unknown split {ds.split!r}", 0)
    if ds.keypoint_scheme not in KEYPOINT_SCHEMES:
        raise DatasetError(f"unknown keypoint scheme {ds.keypoint_scheme!r}", 0)

    clips, samples, sample_lines, seen = [], [], [], set()
    for i, rec in enumerate(records[1:], start=1):
        kind = rec.get("type") if isinstance(rec, dict) else None
        if kind == "clip":
            clip = _clip_from_json(rec, ds, i)
            if clip.key in seen:
                raise DatasetError(f"duplicate clip {clip.key}", i)
            seen.add(clip.key)
            clips.append(clip)
        elif kind == "sample":
            samples.append(_sample_from_json(rec, ds, i))
            sample_lines.append(i)
        else:
            raise DatasetError(f"unknown record type {kind!r}", i)
    ds.clips = clips
    ds._index = None
    for s, i in zip(samples, sample_lines):
        _check_sample(s, ds, i)
    ds.samples = samples
    return ds


def datasets_equal(a: Dataset, b: Dataset) -> bool:
    """Structural equality, exact on every float payload."""

    def same(x, y):
        if x is None or y is None:
            return x is None and y is None
        return np.array_equal(x, y)

    if (a.split, a.dims, a.keypoint_scheme, a.segmentation) != (b.split, b.dims, b.keypoint_scheme, b.segmentation):
        return False
    if len(a.clips) != len(b.clips) or len(a.samples) != len(b.samples):
        return False
    for c, d in zip(a.clips, b.clips):
        if (c.key, c.frame_count, c.scene_label, c.anomaly_label) != (d.key, d.frame_count, d.scene_label, d.anomaly_label):
            return False
        if not (same(c.seg_grids, d.seg_grids) and same(c.scene_feature, d.scene_feature)):
            return False
    for s, t in zip(a.samples, b.samples):
        meta = lambda r: (r.clip_key, r.object_id, r.object_class, r.action_class, r.anomaly_label)  # noqa: E731
        if meta(s) != meta(t):
            return False
        if not (same(s.appearance, t.appearance) and same(s.motion, t.motion) and same(s.skeleton, t.skeleton)):
            return False
    return True


def replace_clip(clip: ClipRecord, **changes) -> ClipRecord:
    return dataclasses.replace(clip, **changes)
