"""Scene features from segmentation grids and DBSCAN pseudo scene labels."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import Dataset, replace_clip
from .errors import DegenerateInputError, ShapeError


def build_scene_feature(seg_grids, foreground_classes, pool_size: int, num_classes: int | None = None) -> np.ndarray:
    """Pool a clip's segmentation maps into one unit-norm background descriptor.

    Every class id becomes a binary map (foreground classes are all-zero),
    each map is max-pooled over non-overlapping ``pool_size`` windows (the
    grid is zero-padded up to a multiple of the window), the pooled maps are
    flattened and concatenated per frame, averaged over frames and
    l2-normalized. Output length is ``num_classes * ceil(H/p) * ceil(W/p)``.
    """
    grids = [np.asarray(g) for g in seg_grids]
    if not grids:
        raise ShapeError("need at least one segmentation grid")
    shape = grids[0].shape
    if len(shape) != 2 or any(g.shape != shape for g in grids):
        raise ShapeError("all segmentation grids must share one 2-D shape")
    if pool_size < 1:
        raise ValueError("pool_size must be >= 1")
    g = np.stack(grids).astype(np.int64)
    if num_classes is None:
        num_classes = int(g.max()) + 1
    if g.min() < 0 or g.max() >= num_classes:
        raise ValueError("class id out of range")

    t, h, w = g.shape
    hp, wp = -(-h // pool_size), -(-w // pool_size)
    padded = np.full((t, hp * pool_size, wp * pool_size), -1, dtype=np.int64)
    padded[:, :h, :w] = g
    background = [c for c in range(num_classes) if c not in set(foreground_classes)]
    maps = np.zeros((t, num_classes, hp * pool_size, wp * pool_size))
    for c in background:
        maps[:, c] = padded == c
    pooled = maps.reshape(t, num_classes, hp, pool_size, wp, pool_size).max(axis=(3, 5))
    feat = pooled.reshape(t, -1).mean(axis=0)
    norm = np.linalg.norm(feat)
    if norm <= 1e-12:
        raise DegenerateInputError("scene feature is all zero (only foreground classes present?)")
    return feat / norm


def clip_scene_features(dataset: Dataset) -> np.ndarray:
    """(n_clips, D_B) matrix of scene features, in clip order."""
    rows = []
    for clip in dataset.clips:
        if clip.scene_feature is not None:
            v = np.asarray(clip.scene_feature, dtype=np.float64)
            n = np.linalg.norm(v)
            if n <= 1e-12:
                raise DegenerateInputError(f"zero scene feature for clip {clip.key}")
            rows.append(v / n)
        else:
            seg = dataset.segmentation
            rows.append(build_scene_feature(clip.seg_grids, seg.foreground, seg.pool_size, seg.num_classes))
    if not rows:
        return np.zeros((0, dataset.dims["scene"]))
    return np.stack(rows)


def dbscan_cluster(points, eps: float, min_pts: int) -> np.ndarray:
    """DBSCAN with cosine distance ``1 - cos``; returns labels, -1 for noise.

    Seeds are visited in input order and clusters are numbered in order of
    discovery, so the result is deterministic. A border point reachable from
    several clusters joins the first one that reaches it.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    x = np.asarray(points, dtype=np.float64)
    n = len(x)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms <= 1e-12):
        raise DegenerateInputError("zero vector in clustering input")
    xn = x / norms
    dist = 1.0 - xn @ xn.T
    neighbors = [np.flatnonzero(row <= eps) for row in dist]
    core = np.array([len(nb) >= min_pts for nb in neighbors])

    labels = np.full(n, -1, dtype=np.int64)
    cluster = 0
    for i in range(n):
        if labels[i] != -1 or not core[i]:
            continue
        labels[i] = cluster
        queue = list(neighbors[i])
        head = 0
        while head < len(queue):
            j = queue[head]
            head += 1
            if labels[j] == -1:
                labels[j] = cluster
                if core[j]:
                    queue.extend(neighbors[j])
        cluster += 1
    return labels


def nearest_centroid(features, centroids) -> np.ndarray:
    """Index of the most cosine-similar centroid; ties go to the lowest index."""
    f = np.atleast_2d(np.asarray(features, dtype=np.float64))
    c = np.asarray(centroids, dtype=np.float64)
    sims = (f / np.linalg.norm(f, axis=1, keepdims=True)) @ (c / np.linalg.norm(c, axis=1, keepdims=True)).T
    return np.argmax(sims, axis=1)


@dataclass
class SceneClustering:
    eps: float
    min_pts: int
    labels: np.ndarray  # final label per training clip, noise reassigned
    centroids: np.ndarray  # (num_clusters, D_B), unit rows
    raw_labels: np.ndarray | None = None

    @property
    def num_clusters(self) -> int:
        return len(self.centroids)


def fit_scene_clustering(features, eps: float = 0.15, min_pts: int = 3) -> SceneClustering:
    features = np.asarray(features, dtype=np.float64)
    if len(features) == 0:
        raise ValueError("no scene features to cluster")
    raw = dbscan_cluster(features, eps, min_pts)
    k = int(raw.max()) + 1
    unit = features / np.linalg.norm(features, axis=1, keepdims=True)
    if k == 0:
        warnings.warn("DBSCAN found no clusters; using a single scene for all clips", RuntimeWarning, stacklevel=2)
        raw_for_centroids = np.zeros(len(features), dtype=np.int64)
        k = 1
    else:
        raw_for_centroids = raw
    centroids = np.stack([unit[raw_for_centroids == c].mean(axis=0) for c in range(k)])
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)
    labels = raw_for_centroids.copy()
    noise = labels < 0
    if noise.any():
        labels[noise] = nearest_centroid(unit[noise], centroids)
    return SceneClustering(eps, min_pts, labels, centroids, raw)


def assign_scene_labels(dataset: Dataset, clustering: SceneClustering, features=None, use_fit_labels: bool | None = None) -> Dataset:
    """Return a copy of ``dataset`` whose clips carry pseudo scene labels.

    Training clips keep their cluster label (noise already reassigned);
    test clips get the nearest centroid.
    """
    if features is None:
        features = clip_scene_features(dataset)
    if use_fit_labels is None:
        use_fit_labels = dataset.split == "train" and len(clustering.labels) == len(dataset.clips)
    labels = clustering.labels if use_fit_labels else nearest_centroid(features, clustering.centroids)
    clips = [replace_clip(c, scene_label=int(l)) for c, l in zip(dataset.clips, labels)]
    return dataset.with_clips(clips)
