import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from motionforge import action as act
from motionforge.errors import InvalidInput, InvalidSegments, ShapeMismatch


def test_drinking_ramp_endpoints_and_midpoint():
    seg = act.ActionSegment(0, 10, 30)
    track = act.add_progress_indicator([seg], length=40, n_actions=3)
    col = track.labels[:, 0]
    assert col[10] == 1.0
    assert col[30] == 2.0
    assert col[20] == pytest.approx(1.5)
    assert col[9] == 0.0 and col[31] == 0.0
    assert (track.labels[:, 1:] == 0).all()


def test_no_segments_all_zero():
    track = act.add_progress_indicator([], length=16, n_actions=4)
    assert track.labels.shape == (16, 4)
    assert (track.labels == 0).all()


def test_concurrent_actions_independent_ramps():
    segs = [act.ActionSegment(0, 0, 8), act.ActionSegment(2, 4, 12)]
    track = act.add_progress_indicator(segs, length=16, n_actions=3)
    # oracle: scalar per-channel computation
    for t in range(16):
        exp0 = 1 + (t - 0) / 8 if 0 <= t <= 8 else 0.0
        exp2 = 1 + (t - 4) / 8 if 4 <= t <= 12 else 0.0
        assert track.labels[t, 0] == pytest.approx(exp0)
        assert track.labels[t, 2] == pytest.approx(exp2)
        assert track.labels[t, 1] == 0.0


def test_zero_length_segment_value_one():
    track = act.add_progress_indicator([act.ActionSegment(1, 5, 5)], 10, 2)
    assert track.labels[5, 1] == 1.0
    assert track.labels[:, 1].sum() == 1.0


def test_episode_slices_preserve_global_ramp():
    seg = act.ActionSegment(0, 0, 31)
    full = act.add_progress_indicator([seg], length=32, n_actions=1)
    first = act.add_progress_indicator([seg], length=16, n_actions=1,
                                       start_frame=0)
    second = act.add_progress_indicator([seg], length=16, n_actions=1,
                                        start_frame=16)
    stitched = np.concatenate([first.labels, second.labels])
    assert np.array_equal(stitched, full.labels)


def test_overlapping_same_action_rejected():
    segs = [act.ActionSegment(0, 0, 10), act.ActionSegment(0, 5, 15)]
    with pytest.raises(InvalidSegments):
        act.add_progress_indicator(segs, 20, 1)


def test_action_id_out_of_range():
    with pytest.raises(InvalidInput):
        act.add_progress_indicator([act.ActionSegment(5, 0, 1)], 10, 3)


@settings(max_examples=150, deadline=None)
@given(st.lists(
    st.tuples(st.integers(0, 3), st.integers(0, 50), st.integers(0, 30)),
    max_size=4))
def test_values_always_in_zero_union_one_two(raw):
    segments = []
    used: dict[int, int] = {}
    for action_id, start, span in raw:
        start = start + used.get(action_id, 0)
        segments.append(act.ActionSegment(action_id, start, start + span))
        used[action_id] = start + span + 1  # avoid same-action overlap
    track = act.add_progress_indicator(segments, length=64, n_actions=4)
    vals = track.labels
    ok = (vals == 0) | ((vals >= 1) & (vals <= 2))
    assert ok.all()


def test_actions_json_round_trip(tmp_path):
    segs = [act.ActionSegment(2, 3, 9), act.ActionSegment(0, 0, 0)]
    path = tmp_path / "actions.json"
    act.save_actions(12, segs, str(path))
    n, loaded = act.load_actions(str(path))
    assert n == 12
    assert loaded == segs


def test_encoder_deterministic_and_width():
    enc = act.ActionEncoder(n_actions=4, width=32, layers=1, heads=2, ffn=64)
    track = act.add_progress_indicator([act.ActionSegment(1, 2, 9)], 16, 4)
    e1 = act.encode_actions(track, enc)
    e2 = act.encode_actions(track, enc)
    assert e1.shape == (32,)
    assert np.array_equal(e1, e2)


def test_encoder_distinguishes_reversed_ramp():
    enc = act.ActionEncoder(n_actions=2, width=32, layers=1, heads=2, ffn=64)
    fwd = act.add_progress_indicator([act.ActionSegment(0, 0, 15)], 16, 2)
    rev = act.ActionTrack(fwd.labels[::-1].copy(), fwd.segments)
    assert not np.allclose(act.encode_actions(fwd, enc),
                           act.encode_actions(rev, enc))


def test_encoder_rejects_wrong_channel_count():
    enc = act.ActionEncoder(n_actions=4, width=32, layers=1, heads=2, ffn=64)
    bad = act.ActionTrack(np.zeros((8, 3)), ())
    with pytest.raises(ShapeMismatch):
        enc.encode(bad)
