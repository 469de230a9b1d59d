import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multitsf.datapipe import assemble_batch, ingest_detection_manifest, iterative_stratified_split, sample_frame_indices
from multitsf.errors import FormatError, InvalidArgumentError
from multitsf.synthgen import GenConfig, generate_episodes


def test_test_mode_examples():
    assert sample_frame_indices(100, 10, "test").tolist() == [5, 15, 25, 35, 45, 55, 65, 75, 85, 95]
    assert sample_frame_indices(8, 8, "test").tolist() == list(range(8))
    assert sample_frame_indices(5, 10, "test").tolist() == [0, 0, 1, 1, 2, 2, 3, 3, 4, 4]


def test_sampling_argument_checks():
    with pytest.raises(InvalidArgumentError):
        sample_frame_indices(0, 4)
    with pytest.raises(InvalidArgumentError):
        sample_frame_indices(4, 0)
    with pytest.raises(InvalidArgumentError):
        sample_frame_indices(4, 2, "val")


@settings(max_examples=100, deadline=None)
@given(t_raw=st.integers(1, 500), t=st.integers(1, 80), seed=st.integers(0, 2**31))
def test_train_mode_window_properties(t_raw, t, seed):
    w = sample_frame_indices(t_raw, t, "train", seed)
    base = sample_frame_indices(t_raw, t, "test")
    assert len(w) == t
    assert (np.diff(w) >= 0).all()
    assert w.min() >= 0 and w.max() < t_raw
    assert np.array_equal(w, sample_frame_indices(t_raw, t, "train", seed))
    # sorting a jittered sequence cannot move any order statistic further than the jitter radius
    assert np.abs(w - base).max() <= t_raw // (2 * t)


def test_split_symmetric_example():
    y = np.array([[1, 0], [1, 0], [0, 1], [0, 1]])
    for seed in range(5):
        tr, te = iterative_stratified_split(y, 0.5, seed)
        assert y[tr].sum(axis=0).tolist() == [1, 1] and y[te].sum(axis=0).tolist() == [1, 1]


def test_split_single_label_sizes():
    tr, te = iterative_stratified_split(np.ones((10, 1)), 0.7, 0)
    assert (len(tr), len(te)) == (7, 3)


def test_split_per_class_counts():
    y = np.random.default_rng(60).integers(0, 2, (60, 6))
    tr, te = iterative_stratified_split(y, 0.7, 0)
    assert sorted(tr + te) == list(range(60))
    for c in range(6):
        count = y[:, c].sum()
        if count >= 2:
            assert abs(y[tr, c].sum() - round(0.7 * count)) <= 1


def test_split_label_free_rows_and_determinism():
    y = np.zeros((9, 2), dtype=int)
    y[:3, 0] = 1
    a = iterative_stratified_split(y, 0.5, 3)
    assert a == iterative_stratified_split(y, 0.5, 3)
    assert sorted(a[0] + a[1]) == list(range(9))
    assert abs(len(a[0]) - 4.5) <= 1


def test_split_bad_ratio():
    with pytest.raises(InvalidArgumentError):
        iterative_stratified_split(np.ones((4, 1)), 1.0, 0)


def _write_lines(path, records):
    path.write_text("".join((r if isinstance(r, str) else json.dumps(r)) + "\n" for r in records))


def test_manifest_empty(tmp_path):
    p = tmp_path / "det.jsonl"
    p.write_text("")
    masks = ingest_detection_manifest(p, {"ep0": (2, 5)})
    assert not masks["ep0"].any()


def test_manifest_single_record(tmp_path):
    p = tmp_path / "det.jsonl"
    _write_lines(p, [{"episode_id": "ep0", "view": 1, "frame": 3, "human": 1}])
    m = ingest_detection_manifest(p, {"ep0": (2, 5)})["ep0"]
    assert m[0, 3] == 1 and m.sum() == 1


def test_manifest_duplicate(tmp_path):
    p = tmp_path / "det.jsonl"
    rec = {"episode_id": "ep0", "view": 1, "frame": 3, "human": 1}
    _write_lines(p, [rec, rec])
    with pytest.raises(FormatError, match=":2:"):
        ingest_detection_manifest(p, {"ep0": (2, 5)})


@pytest.mark.parametrize("bad", [
    "{not json",
    {"episode_id": "ep0", "view": 3, "frame": 0, "human": 1},
    {"episode_id": "ep0", "view": 1, "frame": 5, "human": 1},
    {"episode_id": "ep9", "view": 1, "frame": 0, "human": 1},
    {"episode_id": "ep0", "view": 1, "frame": 0, "human": 2},
    {"episode_id": "ep0", "view": 1, "frame": 0},
])
def test_manifest_errors_carry_line_number(tmp_path, bad):
    p = tmp_path / "det.jsonl"
    _write_lines(p, [{"episode_id": "ep0", "view": 2, "frame": 1, "human": 0}, bad])
    with pytest.raises(FormatError, match=":2:"):
        ingest_detection_manifest(p, {"ep0": (2, 5)})


@pytest.fixture(scope="module")
def episodes():
    cfg = GenConfig(n_views=2, t_raw=12, n_classes=3, n_events=2, height=8, width=8, n_freq=4)
    return generate_episodes(2, cfg, 0)


def test_batch_full_window_is_identity(episodes):
    windows = [np.arange(e.t_raw) for e in episodes]
    b = assemble_batch(episodes, windows, "av")
    assert b.visual.shape == (2, 2, 12, 3, 8, 8) and b.audio.shape == (2, 2, 12, 4)
    for i, e in enumerate(episodes):
        assert np.array_equal(b.frame_labels[i], e.frame_labels)
        assert np.array_equal(b.human[i], e.human_mask)
        assert np.array_equal(b.seq_label[i], e.seq_label)
        assert np.array_equal(b.visual[i], e.visual)


def test_batch_visual_only(episodes):
    b = assemble_batch(episodes, [np.arange(4)] * 2, "visual")
    assert b.audio is None and b.tensors()["audio"] is None


def test_batch_repeated_indices_and_window_independent_seq_label(episodes):
    e = episodes[0]
    w = sample_frame_indices(e.t_raw, 20, "test")
    b = assemble_batch([e], [w])
    assert np.array_equal(b.frame_labels[0], e.frame_labels[w])
    assert np.array_equal(b.seq_label[0], e.frame_labels.max(axis=0))
    w2 = np.zeros(5, dtype=int)
    assert np.array_equal(assemble_batch([e], [w2]).seq_label[0], e.seq_label)


def test_batch_rejects_mismatch(episodes):
    with pytest.raises(InvalidArgumentError):
        assemble_batch(episodes, [np.arange(4), np.arange(5)])
    with pytest.raises(InvalidArgumentError):
        assemble_batch(episodes[:1], [np.array([0, 99])])
