"""Memory-retrieval anomaly scoring, clip aggregation, smoothing and AUC."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .data import Dataset, TrackletSample
from .model import HscModel, MemoryBank, binary_classify, decode, encode, memory_retrieve


def stream_scores(model: HscModel, stream: str, bank: MemoryBank, scene_feats, obj_feats) -> np.ndarray:
    """Squared error between each object feature and the decoding of its
    memory-weighted latent. Inputs are row batches."""
    scene_feats = np.atleast_2d(scene_feats)
    obj_feats = np.atleast_2d(obj_feats)
    latents = encode(model, stream, scene_feats, obj_feats)
    _, recon_latent = memory_retrieve(bank, latents)
    recon = decode(model, stream, recon_latent)
    return np.sum((obj_feats - recon) ** 2, axis=1)


def score_object(model: HscModel, banks: dict, sample: TrackletSample, scene_feat, use_binary: bool | None = None):
    """(S_app, S_mot, S) for one object; S_mot is None without motion.

    With the binary head active (default: whenever the model has one) the
    motion term is the head's abnormality probability instead of the
    reconstruction error.
    """
    if use_binary is None:
        use_binary = model.binary is not None
    s_app = float(stream_scores(model, "app", banks["app"], scene_feat, sample.appearance)[0])
    if sample.motion is None:
        return s_app, None, s_app
    if use_binary:
        latent = encode(model, "mot", np.asarray(scene_feat), sample.motion)
        s_mot = float(binary_classify(model, latent))
    else:
        s_mot = float(stream_scores(model, "mot", banks["mot"], scene_feat, sample.motion)[0])
    return s_app, s_mot, 0.5 * (s_app + s_mot)


@dataclass
class ObjectScores:
    app: np.ndarray
    mot: np.ndarray  # nan where the sample has no motion feature
    final: np.ndarray


def _minmax(x):
    finite = np.isfinite(x)
    if not finite.any():
        return x
    lo, hi = x[finite].min(), x[finite].max()
    return (x - lo) / (hi - lo) if hi > lo else np.where(finite, 0.0, x)


def score_samples(model: HscModel, banks: dict, dataset: Dataset, scene_features, use_binary: bool | None = None, normalize: bool = False) -> ObjectScores:
    """Vectorized ``score_object`` over every sample of ``dataset``.

    ``scene_features`` is the per-clip matrix in clip order. ``normalize``
    min-max scales each stream over the set before averaging.
    """
    if use_binary is None:
        use_binary = model.binary is not None
    n = len(dataset.samples)
    clip_rows = np.array([dataset.clip_index[s.clip_key] for s in dataset.samples], dtype=np.int64)
    scene = np.asarray(scene_features)[clip_rows] if n else np.zeros((0, model.config.d_scene))
    s_app = np.zeros(n)
    s_mot = np.full(n, np.nan)
    if n:
        app = np.stack([s.appearance for s in dataset.samples])
        s_app = stream_scores(model, "app", banks["app"], scene, app)
        has_mot = np.array([s.motion is not None for s in dataset.samples])
        if has_mot.any():
            mot = np.stack([s.motion for s in dataset.samples if s.motion is not None])
            if use_binary:
                lat = encode(model, "mot", scene[has_mot], mot)
                s_mot[has_mot] = binary_classify(model, lat)
            else:
                s_mot[has_mot] = stream_scores(model, "mot", banks["mot"], scene[has_mot], mot)
    a, m = (_minmax(s_app), _minmax(s_mot)) if normalize else (s_app, s_mot)
    final = np.where(np.isnan(m), a, 0.5 * (a + np.nan_to_num(m)))
    return ObjectScores(s_app, s_mot, final)


def score_clips(object_scores, dataset: Dataset) -> np.ndarray:
    """Max object score per clip (clip order); clips without objects score 0."""
    out = np.zeros(len(dataset.clips))
    seen = np.zeros(len(dataset.clips), dtype=bool)
    for s, v in zip(dataset.samples, np.asarray(object_scores, dtype=np.float64)):
        i = dataset.clip_index[s.clip_key]
        out[i] = v if not seen[i] else max(out[i], v)
        seen[i] = True
    return out


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_smooth(scores, sigma: float) -> np.ndarray:
    """Convolve with a normalized Gaussian of radius ceil(3 sigma).

    Boundaries are mirrored including the edge sample (``d c b a | a b c d``).
    """
    x = np.asarray(scores, dtype=np.float64)
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0 or x.size == 0:
        return x.copy()
    k = gaussian_kernel(sigma)
    r = len(k) // 2
    padded = np.pad(x, r, mode="symmetric")
    return np.convolve(padded, k, mode="valid")


def micro_auc(scores, labels) -> float:
    """Frame-level ROC AUC via the Mann-Whitney statistic (ties count half)."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    if not np.all(np.isin(labels, (0, 1))):
        raise ValueError("labels must be 0/1")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both normal and abnormal frames")
    ranks = rankdata(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(fpr, tpr, thresholds) with one point per distinct score, plus (0, 0)."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(np.int64)
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    tpr = np.r_[0.0, tp / max(y.sum(), 1)]
    fpr = np.r_[0.0, fp / max(len(y) - y.sum(), 1)]
    return fpr, tpr, np.r_[np.inf, s[last]]


@dataclass
class ScoreSeries:
    video_ids: list  # per frame
    clip_scores: np.ndarray
    frame_scores: np.ndarray
    smoothed: np.ndarray
    labels: np.ndarray

    def auc(self, smoothed: bool = True) -> float:
        return micro_auc(self.smoothed if smoothed else self.frame_scores, self.labels)


def video_order(dataset: Dataset) -> list[tuple[str, list[int]]]:
    """Videos in first-appearance order with their clip rows sorted by index."""
    groups: dict[str, list[int]] = {}
    for i, c in enumerate(dataset.clips):
        groups.setdefault(c.video_id, []).append(i)
    return [(v, sorted(rows, key=lambda r: dataset.clips[r].clip_index)) for v, rows in groups.items()]


def build_series(clip_scores, dataset: Dataset, sigma_clips: float = 2.0) -> ScoreSeries:
    """Expand clip scores to frames, smooth per video and concatenate.

    ``sigma_clips`` is in clip units; per video it becomes
    ``sigma_clips * mean frames-per-clip`` frames.
    """
    clip_scores = np.asarray(clip_scores, dtype=np.float64)
    vids, raw, smooth, labels = [], [], [], []
    for vid, rows in video_order(dataset):
        counts = [dataset.clips[r].frame_count for r in rows]
        frames = np.repeat(clip_scores[rows], counts)
        lab = np.repeat([dataset.clips[r].anomaly_label or 0 for r in rows], counts)
        raw.append(frames)
        smooth.append(gaussian_smooth(frames, sigma_clips * float(np.mean(counts))))
        labels.append(lab)
        vids += [vid] * len(frames)
    cat = lambda parts: np.concatenate(parts) if parts else np.zeros(0)  # noqa: E731
    return ScoreSeries(vids, clip_scores, cat(raw), cat(smooth), cat(labels).astype(np.int64))


def write_scores_csv(path, series: ScoreSeries) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame_index", "video_id", "raw", "smoothed", "label"])
        for i, (v, r, s, y) in enumerate(zip(series.video_ids, series.frame_scores, series.smoothed, series.labels)):
            w.writerow([i, v, repr(float(r)), repr(float(s)), int(y)])


def write_roc_csv(path, scores, labels) -> None:
    fpr, tpr, thr = roc_curve(scores, labels)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "fpr", "tpr"])
        for t, f, p in zip(thr, fpr, tpr):
            w.writerow([repr(float(t)), repr(float(f)), repr(float(p))])
