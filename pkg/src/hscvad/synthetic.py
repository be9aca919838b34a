"""Desk-scale multi-scene benchmark with planted scene-dependent anomalies.

Each scene has its own background layout and its own inventory of normal
(object class, action class) pairs. A test anomaly is a pair that is normal
in some other scene but never occurs in the training data of the scene it
is planted in, so it can only be detected with background context.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import ClipRecord, Dataset, SegmentationSpec, TrackletSample, save_dataset
from .skeleton import COCO17, motion_feature_dim, motion_featurize

PERSON_FG = 6
VEHICLE_FG = 7

DEFAULT_INVENTORY = {
    # a pedestrian walkway: people walking or standing, occasionally jumping (rare normal)
    0: [("pedestrian", "walk", 0.6), ("pedestrian", "stand", 0.3), ("pedestrian", "jump", 0.1)],
    # a shared path where cyclists, joggers and the odd vehicle are normal
    1: [("pedestrian", "walk", 0.4), ("cyclist", "ride", 0.3), ("pedestrian", "run", 0.2), ("vehicle", None, 0.1)],
}
DEFAULT_PLAN = [(0, "cyclist", "ride"), (0, "pedestrian", "run"), (0, "vehicle", None)]


@dataclass
class ScenarioConfig:
    num_scenes: int = 2
    inventory: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_INVENTORY.items()})
    anomaly_plan: list = field(default_factory=lambda: list(DEFAULT_PLAN))
    train_videos_per_scene: int = 8
    test_videos_per_scene: int = 8
    clips_per_video: int = 11
    test_clips_per_video: int = 10
    frames_per_clip: int = 8
    objects_per_clip: tuple = (2, 4)
    anomaly_video_fraction: float = 0.8
    anomaly_block: tuple = (2, 4)
    d_app: int = 32
    grid_size: tuple = (16, 16)
    pool_size: int = 4
    num_seg_classes: int = 8
    noise: float = 0.1
    appearance_scale: float = 0.4  # keeps S_app on the scale of a probability
    scene_offset: float = 0.3
    keypoint_noise: float = 0.01
    seed: int = 0

    def __post_init__(self):
        self.inventory = {int(k): [tuple(p) for p in v] for k, v in self.inventory.items()}
        self.anomaly_plan = [tuple(p) for p in self.anomaly_plan]
        self.objects_per_clip = tuple(self.objects_per_clip)
        self.anomaly_block = tuple(self.anomaly_block)
        self.grid_size = tuple(self.grid_size)

    @property
    def d_mot(self) -> int:
        return motion_feature_dim(COCO17)

    @property
    def d_scene(self) -> int:
        h, w = self.grid_size
        p = self.pool_size
        return self.num_seg_classes * -(-h // p) * -(-w // p)

    def validate(self) -> None:
        if sorted(self.inventory) != list(range(self.num_scenes)):
            raise ValueError("inventory must list every scene 0..num_scenes-1")
        for scene, pairs in self.inventory.items():
            if not pairs:
                raise ValueError(f"scene {scene} has no normal pairs")
            if any(f <= 0 for *_, f in pairs):
                raise ValueError("pair frequencies must be positive")
        for scene, obj, act in self.anomaly_plan:
            if not 0 <= scene < self.num_scenes:
                raise ValueError(f"anomaly plan names unknown scene {scene}")
            own = {(o, a) for o, a, _ in self.inventory[scene]}
            if (obj, act) in own:
                raise ValueError(f"infeasible plan: ({obj}, {act}) is normal training data in scene {scene}")
            others = {(o, a) for s, ps in self.inventory.items() if s != scene for o, a, _ in ps}
            if (obj, act) not in others:
                raise ValueError(f"({obj}, {act}) is not normal in any other scene, so it is not scene-dependent")
        lo, hi = self.objects_per_clip
        if not 1 <= lo <= hi:
            raise ValueError("objects_per_clip must satisfy 1 <= min <= max")
        if self.frames_per_clip < 2:
            raise ValueError("frames_per_clip must be >= 2 for motion features")
        if self.num_seg_classes <= VEHICLE_FG:
            raise ValueError(f"need more than {VEHICLE_FG} segmentation classes")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["inventory"] = {str(k): [list(p) for p in v] for k, v in self.inventory.items()}
        d["anomaly_plan"] = [list(p) for p in self.anomaly_plan]
        return d


# --- skeleton animation -----------------------------------------------------

# bone length and absolute rest direction (radians, y up)
_BONES = {
    12: (0.5, math.pi), 5: (1.5, math.pi / 2), 6: (1.5, math.pi / 2),
    7: (0.8, -math.pi / 2), 9: (0.7, 0.0), 8: (0.8, -math.pi / 2), 10: (0.7, 0.0),
    13: (1.1, -math.pi / 2), 15: (1.0, 0.0), 14: (1.1, -math.pi / 2), 16: (1.0, 0.0),
    0: (0.56, 2.03), 1: (0.14, 0.785), 2: (0.14, 2.356), 3: (0.11, -0.46), 4: (0.11, 3.6),
}

ACTIONS = {
    # freq (cycles/frame), leg swing, knee bend, arm swing, elbow bend, lean, bounce, thigh offset, arm offset
    "walk": dict(freq=0.12, leg=0.35, knee=0.3, arm=0.3, elbow=0.2, lean=0.0, bounce=0.03, thigh=0.0, arm_off=0.0),
    "run": dict(freq=0.2, leg=0.75, knee=0.9, arm=0.6, elbow=1.3, lean=0.25, bounce=0.12, thigh=0.0, arm_off=0.0),
    "stand": dict(freq=0.05, leg=0.02, knee=0.02, arm=0.03, elbow=0.05, lean=0.0, bounce=0.0, thigh=0.0, arm_off=0.0),
    "ride": dict(freq=0.15, leg=0.4, knee=0.6, arm=0.02, elbow=0.4, lean=0.5, bounce=0.0, thigh=1.0, arm_off=1.1),
    "jump": dict(freq=0.15, leg=0.1, knee=0.8, arm=0.9, elbow=0.3, lean=0.0, bounce=0.6, thigh=0.3, arm_off=1.5),
}


def animate_skeleton(action: str, n_frames: int, rng: np.random.Generator, view_angle: float = 0.0, noise: float = 0.01) -> np.ndarray:
    """Pixel-space (n_frames, 17, 2) skeleton for a parametric action cycle."""
    p = {k: v * rng.uniform(0.9, 1.1) for k, v in ACTIONS[action].items()}
    phase = rng.uniform(0, 2 * math.pi)
    scale = rng.uniform(20.0, 40.0)
    origin = rng.uniform(50.0, 200.0, size=2)
    tree = COCO17
    frames = np.zeros((n_frames, tree.size, 2))
    for t in range(n_frames):
        w = 2 * math.pi * p["freq"] * t + phase
        s, c = math.sin(w), math.cos(w)
        direction = {}
        # absolute bone directions
        torso = math.pi / 2 - p["lean"]
        direction[12] = math.pi
        direction[5] = direction[6] = torso
        direction[7] = -math.pi / 2 + p["arm_off"] + p["arm"] * s
        direction[8] = -math.pi / 2 + p["arm_off"] - p["arm"] * s
        direction[9] = direction[7] + p["elbow"]
        direction[10] = direction[8] + p["elbow"]
        direction[13] = -math.pi / 2 + p["thigh"] + p["leg"] * s
        direction[14] = -math.pi / 2 + p["thigh"] - p["leg"] * s
        direction[15] = direction[13] - p["knee"] * (1 + c) / 2
        direction[16] = direction[14] - p["knee"] * (1 - c) / 2
        pos = np.zeros((tree.size, 2))
        pos[tree.root] = (0.0, abs(s) * p["bounce"])
        for k in tree.order[1:]:
            length, rest = _BONES[k]
            if k in direction:
                ang = direction[k]
            else:
                # head keypoints keep their rest offset, tilted with the torso
                ang = rest - p["lean"]
            pos[k] = pos[tree.parents[k]] + length * np.array([math.cos(ang), math.sin(ang)])
        frames[t] = pos
    cv, sv = math.cos(view_angle), math.sin(view_angle)
    frames = frames @ np.array([[cv, sv], [-sv, cv]])
    frames[..., 1] *= -1.0  # image y axis points down
    frames = frames * scale + origin
    return frames + rng.normal(0.0, noise * scale, size=frames.shape)


# --- scene layouts ----------------------------------------------------------


def _scene_layout(rng: np.random.Generator, cfg: ScenarioConfig):
    """Gaussian bump centres/widths for each background class."""
    h, w = cfg.grid_size
    n_bg = PERSON_FG
    centers = rng.uniform(0, 1, size=(n_bg, 2, 2)) * np.array([h, w])
    widths = rng.uniform(0.15, 0.35, size=(n_bg, 2)) * max(h, w)
    return centers, widths


def _render_frame(layout, cfg: ScenarioConfig, shift, objects, rng) -> np.ndarray:
    centers, widths = layout
    h, w = cfg.grid_size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    field_ = np.zeros((len(centers), h, w))
    for c in range(len(centers)):
        for b in range(centers.shape[1]):
            cy, cx = centers[c, b] + shift
            field_[c] += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * widths[c, b] ** 2))
    grid = np.argmax(field_, axis=0)
    for fg in objects:
        oy = int(rng.integers(0, h - 3))
        ox = int(rng.integers(0, w - 2))
        grid[oy : oy + 3, ox : ox + 2] = fg
    return grid


# --- generation -------------------------------------------------------------


@dataclass
class GroundTruth:
    clip_labels: dict  # "video/clip" -> 0/1, per split
    frame_labels: dict  # split -> list of 0/1 in clip/frame order
    samples: dict  # split -> list of {"scene", "object_class", "action_class", "anomaly"}
    clip_scenes: dict = field(default_factory=dict)  # split -> generating scene per clip

    def to_json(self) -> dict:
        return {
            "clip_labels": self.clip_labels,
            "frame_labels": self.frame_labels,
            "samples": self.samples,
            "clip_scenes": self.clip_scenes,
        }


class _Generator:
    def __init__(self, cfg: ScenarioConfig):
        cfg.validate()
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        rng = self.rng
        self.layouts = [_scene_layout(rng, cfg) for _ in range(cfg.num_scenes)]
        pairs = sorted({(o, a) for ps in cfg.inventory.values() for o, a, _ in ps}, key=str)
        objects = sorted({o for o, _ in pairs})
        actions = sorted({a for _, a in pairs if a is not None})
        self.obj_proto = {o: _unit(rng.normal(size=cfg.d_app)) for o in objects}
        self.act_proto = {a: _unit(rng.normal(size=cfg.d_app)) for a in actions}
        self.scene_offset = [_unit(rng.normal(size=cfg.d_app)) for _ in range(cfg.num_scenes)]
        self.view = [rng.uniform(-0.15, 0.15) for _ in range(cfg.num_scenes)]

    def appearance(self, scene, obj, act):
        cfg = self.cfg
        v = self.obj_proto[obj].copy()
        if act is not None:
            v += 0.3 * self.act_proto[act]
        v += cfg.scene_offset * self.scene_offset[scene]
        return cfg.appearance_scale * (v + self.rng.normal(0.0, cfg.noise, size=cfg.d_app))

    def make_object(self, split, vid, clip_idx, obj_id, scene, obj, act, anomalous):
        cfg = self.cfg
        app = self.appearance(scene, obj, act)
        skel = mot = None
        if act is not None:
            skel = animate_skeleton(act, cfg.frames_per_clip, self.rng, self.view[scene], cfg.keypoint_noise)
            mot = motion_featurize(skel)
        return TrackletSample(
            video_id=vid, clip_index=clip_idx, object_id=obj_id, appearance=app, object_class=obj,
            skeleton=skel, motion=mot, action_class=act,
            anomaly_label=(1 if anomalous else 0) if split == "test" else None,
        )

    def draw_pair(self, scene):
        pairs = self.cfg.inventory[scene]
        freq = np.array([f for *_, f in pairs], dtype=np.float64)
        k = int(self.rng.choice(len(pairs), p=freq / freq.sum()))
        return pairs[k][0], pairs[k][1]

    def make_clip(self, split, vid, clip_idx, scene, anomalous):
        cfg = self.cfg
        lo, hi = cfg.objects_per_clip
        n_obj = int(self.rng.integers(lo, hi + 1))
        plan = [p for p in cfg.anomaly_plan if p[0] == scene]
        specs = []
        for j in range(n_obj):
            if anomalous and j == 0:
                _, obj, act = plan[int(self.rng.integers(len(plan)))]
                specs.append((obj, act, True))
            else:
                obj, act = self.draw_pair(scene)
                specs.append((obj, act, False))
        samples = [self.make_object(split, vid, clip_idx, j, scene, o, a, an) for j, (o, a, an) in enumerate(specs)]
        fg = [VEHICLE_FG if o == "vehicle" else PERSON_FG for o, _, _ in specs]
        shift = self.rng.normal(0.0, 0.5, size=2)
        grids = np.stack([_render_frame(self.layouts[scene], cfg, shift, fg, self.rng) for _ in range(cfg.frames_per_clip)])
        clip = ClipRecord(
            video_id=vid, clip_index=clip_idx, frame_count=cfg.frames_per_clip, seg_grids=grids,
            anomaly_label=(1 if anomalous else 0) if split == "test" else None,
        )
        return clip, samples, [(scene, o, a, an) for o, a, an in specs]

    def make_split(self, split):
        cfg = self.cfg
        n_videos = cfg.train_videos_per_scene if split == "train" else cfg.test_videos_per_scene
        n_clips = cfg.clips_per_video if split == "train" else cfg.test_clips_per_video
        clips, samples, meta, clip_labels = [], [], [], {}
        for scene in range(cfg.num_scenes):
            has_plan = any(p[0] == scene for p in cfg.anomaly_plan)
            for v in range(n_videos):
                vid = f"{split}_s{scene:02d}_v{v:02d}"
                flags = np.zeros(n_clips, dtype=bool)
                if split == "test" and has_plan and self.rng.random() < cfg.anomaly_video_fraction:
                    blen = min(int(self.rng.integers(cfg.anomaly_block[0], cfg.anomaly_block[1] + 1)), n_clips)
                    start = int(self.rng.integers(0, n_clips - blen + 1))
                    flags[start : start + blen] = True
                for c in range(n_clips):
                    clip, objs, info = self.make_clip(split, vid, c, scene, bool(flags[c]))
                    clips.append(clip)
                    samples.extend(objs)
                    meta.extend(
                        {"scene": s, "object_class": o, "action_class": a, "anomaly": int(an)} for s, o, a, an in info
                    )
                    clip_labels[f"{vid}/{c}"] = int(flags[c])
        ds = Dataset(
            split=split,
            dims={"appearance": cfg.d_app, "motion": cfg.d_mot, "scene": cfg.d_scene},
            clips=clips,
            samples=samples,
            segmentation=SegmentationSpec(cfg.num_seg_classes, (PERSON_FG, VEHICLE_FG), cfg.pool_size),
        )
        return ds, meta, clip_labels


def _unit(v):
    return v / np.linalg.norm(v)


def generate_mixture_dataset(config: ScenarioConfig | None = None):
    """Build ``(train, test, ground_truth)`` for a scenario; fully seeded."""
    config = config or ScenarioConfig()
    gen = _Generator(config)
    train, train_meta, train_clips = gen.make_split("train")
    test, test_meta, test_clips = gen.make_split("test")
    frame_labels = {
        "train": [0] * sum(c.frame_count for c in train.clips),
        "test": [int(c.anomaly_label) for c in test.clips for _ in range(c.frame_count)],
    }
    gt = GroundTruth(
        clip_labels={"train": train_clips, "test": test_clips},
        frame_labels=frame_labels,
        samples={"train": train_meta, "test": test_meta},
        clip_scenes={"train": clip_scene_truth(train).tolist(), "test": clip_scene_truth(test).tolist()},
    )
    return train.validate(), test.validate(), gt


def clip_scene_truth(dataset: Dataset) -> np.ndarray:
    """Generating scene per clip, recovered from the synthetic video ids."""
    return np.array([int(c.video_id.split("_s")[1][:2]) for c in dataset.clips])


def write_benchmark(out_dir, config: ScenarioConfig | None = None) -> dict:
    """Write train/test JSONL files and the ground-truth sidecar."""
    from pathlib import Path

    config = config or ScenarioConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train, test, gt = generate_mixture_dataset(config)
    paths = {"train": out / "train.jsonl", "test": out / "test.jsonl", "ground_truth": out / "ground_truth.json"}
    save_dataset(train, paths["train"])
    save_dataset(test, paths["test"])
    sidecar = {"scenario": config.to_dict(), **gt.to_json()}
    paths["ground_truth"].write_text(json.dumps(sidecar, sort_keys=True, indent=1))
    return {k: str(v) for k, v in paths.items()}
