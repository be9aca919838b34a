import json
import struct

import numpy as np
import pytest

from hscvad.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from hscvad.data import ClipRecord, Dataset, TrackletSample, datasets_equal, load_dataset, save_dataset
from hscvad.errors import CheckpointError, DatasetError, UnsupportedVersionError
from hscvad.evaluate import score_samples
from hscvad.pipeline import load_state, save_state
from hscvad.scene import clip_scene_features

HEADER = {"type": "header", "format": "hscvad-dataset", "version": 1, "split": "train",
          "dims": {"appearance": 3, "motion": 2, "scene": 4}, "keypoint_scheme": "coco17"}


def write_lines(path, objs):
    path.write_text("".join(json.dumps(o) + "\n" for o in objs))
    return path


def clip(vid="v", idx=0, **kw):
    rec = {"type": "clip", "video_id": vid, "clip_index": idx, "frame_count": 4, "scene_feature": [1, 0, 0, 0]}
    rec.update(kw)
    return rec


def sample(vid="v", idx=0, **kw):
    rec = {"type": "sample", "video_id": vid, "clip_index": idx, "object_id": 0, "object_class": "person",
           "appearance": [0.1, 0.2, 0.3], "motion": [1.0, 2.0]}
    rec.update(kw)
    return rec


def test_empty_sample_list(tmp_path):
    ds = load_dataset(write_lines(tmp_path / "d.jsonl", [HEADER]))
    assert ds.samples == [] and ds.clips == [] and ds.dims["appearance"] == 3


def test_minimal_records_load(tmp_path):
    ds = load_dataset(write_lines(tmp_path / "d.jsonl", [HEADER, clip(), sample(), sample(object_id=1, motion=None)]))
    assert len(ds.samples) == 2 and ds.samples[1].motion is None
    assert ds.clip_of(ds.samples[0]) is ds.clips[0]


@pytest.mark.parametrize(
    "records, line, fragment",
    [
        ([clip(), sample(appearance=[1.0, 2.0])], 2, "appearance has dimension 2"),
        ([clip(), sample(motion=[1.0])], 2, "motion has dimension 1"),
        ([clip(), sample(idx=3)], 2, "unknown clip"),
        ([clip(), clip()], 2, "duplicate clip"),
        ([clip(scene_feature=[1, 0])], 1, "scene_feature has dimension 2"),
        ([clip(frame_count=0)], 1, "frame_count"),
        ([clip(), {"type": "bogus"}], 2, "unknown record type"),
        ([clip(), sample(appearance=["x", 1, 2])], 2, "not numeric"),
        ([clip(), {"type": "sample", "video_id": "v"}], 2, "missing field"),
        ([clip(), sample(skeleton=[[[0, 0]] * 5])], 2, "17 (x, y) keypoints"),
    ],
)
def test_validation_names_the_record(tmp_path, records, line, fragment):
    path = write_lines(tmp_path / "d.jsonl", [HEADER] + records)
    with pytest.raises(DatasetError) as err:
        load_dataset(path)
    assert err.value.record == line
    assert f"record {line}" in str(err.value) and fragment in str(err.value)


def test_test_split_requires_labels(tmp_path):
    head = dict(HEADER, split="test")
    with pytest.raises(DatasetError, match="anomaly_label"):
        load_dataset(write_lines(tmp_path / "d.jsonl", [head, clip()]))


def test_header_and_file_errors(tmp_path):
    with pytest.raises(DatasetError, match="not found"):
        load_dataset(tmp_path / "nope.jsonl")
    with pytest.raises(DatasetError, match="header"):
        load_dataset(write_lines(tmp_path / "a.jsonl", [clip()]))
    with pytest.raises(DatasetError, match="version"):
        load_dataset(write_lines(tmp_path / "b.jsonl", [dict(HEADER, version=9)]))
    (tmp_path / "c.jsonl").write_text(json.dumps(HEADER) + "\n{broken\n")
    with pytest.raises(DatasetError, match="record 1"):
        load_dataset(tmp_path / "c.jsonl")


def test_synthetic_round_trip(small_data, tmp_path):
    for ds in small_data[:2]:
        path = tmp_path / f"{ds.split}.jsonl"
        save_dataset(ds, path)
        back = load_dataset(path)
        assert datasets_equal(ds, back)
        # a second save produces the same bytes
        path2 = tmp_path / f"{ds.split}2.jsonl"
        save_dataset(back, path2)
        assert path.read_bytes() == path2.read_bytes()


def test_datasets_equal_detects_float_change(small_data):
    train = small_data[0]
    samples = list(train.samples)
    s = samples[0]
    samples[0] = TrackletSample(s.video_id, s.clip_index, s.object_id, s.appearance + 1e-15, s.object_class,
                                s.skeleton, s.motion, s.action_class, s.anomaly_label)
    assert not datasets_equal(train, train.with_samples(samples))


def test_validate_rejects_constructed_violations():
    ds = Dataset("train", {"appearance": 2, "motion": 2, "scene": 2},
                 clips=[ClipRecord("v", 0, 1, scene_feature=np.ones(2))],
                 samples=[TrackletSample("v", -1, 0, np.ones(2), "p")])
    with pytest.raises(DatasetError, match="clip_index"):
        ds.validate()
    ds2 = Dataset("train", {"appearance": 2, "motion": 2, "scene": 2},
                  clips=[ClipRecord("v", 0, 1, seg_grids=np.zeros((1, 2, 2), dtype=int), scene_feature=np.ones(2))])
    with pytest.raises(DatasetError, match="exactly one"):
        ds2.validate()


# --- checkpoints ----------------------------------------------------------------------


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {"a": rng.normal(size=(3, 4)), "b": np.array([np.pi, -0.0, 1e-300, 5e-324]), "s": np.array(2.5)}
    save_checkpoint(tmp_path / "x.ckpt", arrays, {"k": [1, 2]})
    back, meta = load_checkpoint(tmp_path / "x.ckpt")
    assert meta == {"k": [1, 2]}
    for k, v in arrays.items():
        assert back[k].shape == v.shape
        assert back[k].tobytes() == np.asarray(v, dtype=np.float64).tobytes()


def test_checkpoint_layout_header(tmp_path):
    save_checkpoint(tmp_path / "x.ckpt", {"w": np.array([1.0])}, {})
    raw = (tmp_path / "x.ckpt").read_bytes()
    assert raw[:6] == MAGIC == b"HSCVAD"
    assert struct.unpack("<I", raw[6:10]) == (1,)
    # meta "{}" then one array named "w" of shape (1,)
    assert raw[10:16] == struct.pack("<I", 2) + b"{}"
    assert raw[16:20] == struct.pack("<I", 1)
    assert raw[20:] == struct.pack("<H", 1) + b"w" + struct.pack("<B", 1) + struct.pack("<Q", 1) + struct.pack("<d", 1.0)


def test_checkpoint_errors(tmp_path):
    save_checkpoint(tmp_path / "x.ckpt", {"w": np.arange(10.0)}, {"m": 1})
    raw = (tmp_path / "x.ckpt").read_bytes()
    for cut in (3, 12, len(raw) - 1):
        (tmp_path / "t.ckpt").write_bytes(raw[:cut])
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "t.ckpt")
    (tmp_path / "v.ckpt").write_bytes(raw[:6] + struct.pack("<I", 2) + raw[10:])
    with pytest.raises(UnsupportedVersionError):
        load_checkpoint(tmp_path / "v.ckpt")
    (tmp_path / "m.ckpt").write_bytes(b"NOTIT!" + raw[6:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(tmp_path / "m.ckpt")
    with pytest.raises(CheckpointError, match="missing checkpoint"):
        load_checkpoint(tmp_path / "absent.ckpt")


def test_trained_state_round_trip_preserves_scores(small_state, small_data, tmp_path):
    test = small_data[1]
    feats = clip_scene_features(test)
    before = score_samples(small_state.model, small_state.banks, test, feats)
    save_state(small_state, tmp_path / "m.ckpt")
    loaded = load_state(tmp_path / "m.ckpt")
    for name, arr in small_state.model.named_arrays().items():
        assert np.array_equal(loaded.model.named_arrays()[name], arr), name
    for s in small_state.banks:
        assert np.array_equal(loaded.banks[s].rows, small_state.banks[s].rows)
    assert np.array_equal(loaded.clustering.centroids, small_state.clustering.centroids)
    after = score_samples(loaded.model, loaded.banks, test, feats)
    assert np.array_equal(before.final, after.final)
    save_state(loaded, tmp_path / "m2.ckpt")
    assert (tmp_path / "m.ckpt").read_bytes() == (tmp_path / "m2.ckpt").read_bytes()
