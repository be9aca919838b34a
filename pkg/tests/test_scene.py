import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hscvad.errors import DegenerateInputError, ShapeError
from hscvad.pipeline import label_scenes
from hscvad.scene import (
    SceneClustering,
    assign_scene_labels,
    build_scene_feature,
    clip_scene_features,
    dbscan_cluster,
    fit_scene_clustering,
    nearest_centroid,
)
from hscvad.synthetic import ScenarioConfig, clip_scene_truth, generate_mixture_dataset

from oracles import dbscan_closure

GRID = np.array([[0, 0, 1, 1], [0, 1, 1, 1], [1, 1, 1, 1], [0, 1, 1, 0]])


def test_saturated_single_class():
    feat = build_scene_feature([np.zeros((4, 4), dtype=int)], foreground_classes=(), pool_size=4, num_classes=2)
    np.testing.assert_array_equal(feat, [1.0, 0.0])


def test_only_foreground_is_degenerate():
    with pytest.raises(DegenerateInputError):
        build_scene_feature([np.full((4, 4), 1)], foreground_classes=(1,), pool_size=2, num_classes=2)


def test_hand_enumerated_max_pool():
    # 2x2 windows, row-major: class 0 appears in windows TL, BL, BR; class 1 in all four
    feat = build_scene_feature([GRID], (), 2, 2)
    np.testing.assert_allclose(feat, np.array([1, 0, 1, 1, 1, 1, 1, 1]) / math.sqrt(7), rtol=0, atol=1e-15)
    masked = build_scene_feature([GRID], (1,), 2, 2)
    np.testing.assert_allclose(masked, np.array([1, 0, 1, 1, 0, 0, 0, 0]) / math.sqrt(3), rtol=0, atol=1e-15)


def test_frames_are_averaged_before_normalizing():
    a = np.zeros((4, 4), dtype=int)
    b = np.ones((4, 4), dtype=int)
    # frame means: class 0 = 0.5, class 1 = 0.5 in the single window
    feat = build_scene_feature([a, a, b, b], (), 4, 2)
    np.testing.assert_allclose(feat, [1 / math.sqrt(2)] * 2, atol=1e-15)


def test_padding_for_non_divisible_grid():
    feat = build_scene_feature([np.zeros((5, 3), dtype=int)], (), 2, 1)
    assert feat.shape == (1 * 3 * 2,)
    np.testing.assert_allclose(feat, np.full(6, 1 / math.sqrt(6)))


def test_shape_errors():
    with pytest.raises(ShapeError):
        build_scene_feature([np.zeros((4, 4)), np.zeros((4, 5))], (), 2, 2)
    with pytest.raises(ShapeError):
        build_scene_feature([], (), 2, 2)


@settings(max_examples=50)
@given(st.integers(0, 10_000), st.integers(1, 4))
def test_scene_feature_unit_norm_and_frame_order_invariant(seed, pool):
    rng = np.random.default_rng(seed)
    grids = rng.integers(0, 4, size=(5, 6, 6))
    grids[:, 0, 0] = 0  # at least one background pixel per frame
    f1 = build_scene_feature(list(grids), (3,), pool, 4)
    f2 = build_scene_feature(list(grids[rng.permutation(5)]), (3,), pool, 4)
    assert abs(np.linalg.norm(f1) - 1.0) <= 1e-9
    np.testing.assert_allclose(f1, f2, rtol=0, atol=1e-12)


# --- DBSCAN ------------------------------------------------------------------------


def test_dbscan_separated_groups_and_lonely_point():
    pts = np.array([[1, 0, 0], [0.99, 0.01, 0], [0, 1, 0], [0.01, 0.99, 0]], dtype=float)
    labels = dbscan_cluster(pts, eps=0.05, min_pts=1)
    assert labels.tolist() == [0, 0, 1, 1]
    assert dbscan_cluster(np.array([[1.0, 0.0]]), 0.1, 2).tolist() == [-1]


def check_against_closure(points, eps, min_pts, labels):
    comp, core, nbr = dbscan_closure(points, eps, min_pts)
    n = len(points)
    # cores: same partition as the connected components
    for i in range(n):
        for j in range(n):
            if core[i] and core[j]:
                assert (labels[i] == labels[j]) == (comp[i] == comp[j])
    for i in range(n):
        if core[i]:
            assert labels[i] >= 0
            continue
        core_nbrs = [j for j in nbr[i] if core[j]]
        if not core_nbrs:
            assert labels[i] == -1
        else:
            assert labels[i] in {labels[j] for j in core_nbrs}


@settings(max_examples=60)
@given(st.integers(0, 100_000), st.floats(0.02, 0.4), st.integers(1, 5))
def test_dbscan_matches_density_closure(seed, eps, min_pts):
    rng = np.random.default_rng(seed)
    centres = rng.normal(size=(3, 3))
    pts = centres[rng.integers(0, 3, size=20)] + rng.normal(scale=0.3, size=(20, 3))
    check_against_closure(pts, eps, min_pts, dbscan_cluster(pts, eps, min_pts))


@settings(max_examples=40)
@given(st.integers(0, 100_000))
def test_dbscan_permutation_invariant_up_to_renaming(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(25, 3)) + np.array([2.0, 0, 0]) * rng.integers(0, 2, size=(25, 1))
    eps, min_pts = 0.1, 3
    base = dbscan_cluster(pts, eps, min_pts)
    perm = rng.permutation(25)
    other = np.empty(25, dtype=int)
    other[perm] = dbscan_cluster(pts[perm], eps, min_pts)
    _, core, _ = dbscan_closure(pts, eps, min_pts)
    core = np.array(core)
    # the core partition and the noise set do not depend on the order
    assert np.array_equal(base == -1, other == -1)
    mapping = {}
    for a, b in zip(base[core], other[core]):
        assert mapping.setdefault(a, b) == b
    assert len(set(mapping.values())) == len(mapping)


def test_dbscan_preconditions():
    with pytest.raises(ValueError):
        dbscan_cluster(np.ones((2, 2)), 0.0, 1)
    with pytest.raises(ValueError):
        dbscan_cluster(np.ones((2, 2)), 0.1, 0)


# --- label assignment ------------------------------------------------------------------


def test_nearest_centroid_exact_match_and_tie():
    c = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert nearest_centroid(c[1], c).tolist() == [1]
    assert nearest_centroid(np.array([1.0, 1.0]), c).tolist() == [0]


def test_noise_points_get_nearest_centroid():
    pts = np.array([[1, 0, 0], [1, 0.01, 0], [1, 0, 0.01], [0, 1, 0], [0.01, 1, 0], [0, 1, 0.01], [0.5, 0.6, 0.0]])
    cl = fit_scene_clustering(pts, eps=0.01, min_pts=3)
    assert cl.raw_labels.tolist() == [0, 0, 0, 1, 1, 1, -1]
    assert cl.labels.tolist() == [0, 0, 0, 1, 1, 1, 1]
    np.testing.assert_allclose(np.linalg.norm(cl.centroids, axis=1), 1.0)


def test_no_cluster_falls_back_to_one_scene():
    pts = np.eye(4)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        cl = fit_scene_clustering(pts, eps=0.1, min_pts=2)
    assert any("single scene" in str(w.message) for w in caught)
    assert cl.num_clusters == 1 and cl.labels.tolist() == [0, 0, 0, 0]


def agreement(pred, truth):
    """Best one-to-one match between cluster ids and true scenes."""
    from itertools import permutations

    k = max(pred.max(), truth.max()) + 1
    best = 0.0
    for perm in permutations(range(k)):
        best = max(best, float(np.mean(np.array(perm)[pred] == truth)))
    return best


def test_default_scenario_recovers_two_scenes(small_data):
    train, test, _ = small_data
    labelled, cl, feats = label_scenes(train)
    assert cl.num_clusters == 2
    assert agreement(cl.labels, clip_scene_truth(train)) >= 0.95
    test_labels = np.array([c.scene_label for c in assign_scene_labels(test, cl).clips])
    assert agreement(test_labels, clip_scene_truth(test)) >= 0.95
    assert all(c.scene_label in (0, 1) for c in labelled.clips)


def test_three_scene_scenario():
    inv = {
        0: [("pedestrian", "walk", 0.7), ("pedestrian", "stand", 0.3)],
        1: [("pedestrian", "walk", 0.5), ("cyclist", "ride", 0.5)],
        2: [("pedestrian", "run", 0.6), ("vehicle", None, 0.4)],
    }
    plan = [(0, "cyclist", "ride"), (1, "vehicle", None), (2, "pedestrian", "stand")]
    cfg = ScenarioConfig(num_scenes=3, inventory=inv, anomaly_plan=plan, train_videos_per_scene=3, clips_per_video=5,
                         test_videos_per_scene=1, seed=2)
    train, _, _ = generate_mixture_dataset(cfg)
    cl = fit_scene_clustering(clip_scene_features(train))
    assert cl.num_clusters == 3
    assert agreement(cl.labels, clip_scene_truth(train)) >= 0.95


def test_assign_keeps_input_unchanged(small_data):
    train = small_data[0]
    cl = SceneClustering(0.15, 3, np.zeros(len(train.clips), dtype=int), np.eye(train.dims["scene"])[:1])
    out = assign_scene_labels(train, cl)
    assert out is not train and all(c.scene_label == 0 for c in out.clips)
    assert all(c.scene_label is None for c in train.clips)
