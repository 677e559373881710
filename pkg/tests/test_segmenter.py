import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from pianocurate.errors import InvalidSeries
from pianocurate.segmenter import (
    ScoreSeries,
    Segment,
    SegmentClass,
    SegmenterConfig,
    classify_file,
    find_nonpiano_regions,
    nonpiano_cells,
    piano_candidates,
    segment,
    timeline,
)

DEFAULT = SegmenterConfig()


def series(*pieces, tail=0.0):
    """Concatenate (count, value) pieces of window scores into a series with matching audio length."""
    scores = np.concatenate([np.full(n, v) for n, v in pieces]) if pieces else np.zeros(0)
    return ScoreSeries(scores, len(scores) + 4 + tail)


def spans(segments):
    return [(s.start_s, s.end_s) for s in segments]


class TestScoreSeries:
    def test_window_count_must_match_length(self):
        with pytest.raises(InvalidSeries):
            ScoreSeries(np.zeros(10), 13.0)

    def test_partial_second_allowed(self):
        assert len(ScoreSeries(np.zeros(10), 14.7)) == 10

    def test_short_audio_has_no_windows(self):
        assert len(ScoreSeries(np.zeros(0), 3.5)) == 0

    @pytest.mark.parametrize("bad", [[-0.1], [1.1], [float("nan")]])
    def test_scores_in_unit_interval(self, bad):
        with pytest.raises(InvalidSeries):
            ScoreSeries(np.array(bad), 5.0)

    def test_only_five_second_windows(self):
        with pytest.raises(InvalidSeries):
            ScoreSeries(np.zeros(1), 5.0, window_s=4)

    def test_json_roundtrip(self, tmp_path):
        s = series((3, 0.5))
        path = tmp_path / "s.json"
        path.write_text(json.dumps(s.to_json("x")))
        back = ScoreSeries.load(path)
        assert back.audio_len_s == s.audio_len_s and np.array_equal(back.scores, s.scores)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SegmenterConfig(lam=1.5)
        with pytest.raises(ValueError):
            SegmenterConfig(d=-1)


class TestNonPianoRegions:
    def test_all_high(self):
        assert find_nonpiano_regions(series((30, 0.9))) == []

    def test_four_low_windows(self):
        got = find_nonpiano_regions(series((10, 0.9), (4, 0.1), (10, 0.9)))
        assert spans(got) == [(10.0, 18.0)]
        assert got[0].kind is SegmentClass.NON_PIANO

    def test_three_low_windows_ignored(self):
        assert find_nonpiano_regions(series((10, 0.9), (3, 0.1), (10, 0.9))) == []

    def test_d_zero_single_window(self):
        got = find_nonpiano_regions(series((10, 0.9), (1, 0.1), (10, 0.9)), SegmenterConfig(d=0))
        assert spans(got) == [(10.0, 15.0)]

    def test_threshold_is_strict(self):
        assert find_nonpiano_regions(series((10, 0.9), (6, 0.5), (10, 0.9))) == []

    def test_nearby_regions_merge(self):
        # low runs at windows 10-13 and 16-19 give regions [10, 18) and [16, 24), which overlap
        got = find_nonpiano_regions(series((10, 0.9), (4, 0.1), (2, 0.9), (4, 0.1), (10, 0.9)))
        assert spans(got) == [(10.0, 24.0)]

    def test_tail_joins_last_region(self):
        got = find_nonpiano_regions(series((10, 0.9), (10, 0.1), tail=0.6))
        assert spans(got) == [(10.0, 24.6)]

    def test_empty_series(self):
        assert find_nonpiano_regions(ScoreSeries(np.zeros(0), 3.0)) == []


class TestSegment:
    def test_single_long_segment(self):
        got = segment(series((56, 0.9)))
        assert spans(got) == [(0.0, 60.0)]
        assert got[0].avg_score == pytest.approx(0.9)

    def test_two_segments_around_a_gap(self):
        got = segment(series((50, 0.9), (10, 0.1), (50, 0.9)))
        assert spans(got) == [(0.0, 50.0), (64.0, 114.0)]
        assert [s.avg_score for s in got] == pytest.approx([0.9, 0.9])

    def test_too_short(self):
        assert segment(series((36, 1.0))) == []

    def test_minimum_length_is_strict(self):
        assert segment(series((41, 0.9))) == []  # exactly 45 s
        assert spans(segment(series((41, 0.9), tail=0.5))) == [(0.0, 45.5)]

    def test_average_floor_is_inclusive(self):
        assert len(segment(series((60, 0.7)))) == 1
        assert segment(series((60, 0.69))) == []

    def test_average_uses_windows_inside_the_segment(self):
        # the low run's windows sit inside the non-piano region, not the piano segment
        got = segment(series((50, 0.8), (10, 0.0), (50, 1.0)))
        assert [s.avg_score for s in got] == pytest.approx([0.8, 1.0])

    def test_zero_length_audio(self):
        assert segment(ScoreSeries(np.zeros(0), 0.0)) == []

    def test_json_roundtrip(self):
        seg = Segment(1.0, 50.0, SegmentClass.NON_PIANO, 0.25)
        assert Segment.from_json(seg.to_json("x")) == seg
        assert "class" not in Segment(0.0, 1.0).to_json()


class TestClassify:
    def test_positive(self):
        assert classify_file([Segment(0, 60, avg_score=0.95)], 0.9).positive

    def test_negative(self):
        result = classify_file([Segment(0, 60, avg_score=0.75), Segment(70, 130, avg_score=0.65)], 0.8)
        assert not result.positive and result.best_avg == 0.75 and result.label == "negative"

    def test_vacuous(self):
        result = classify_file([], 0.5)
        assert not result.positive and result.best_avg is None

    def test_threshold_inclusive(self):
        assert classify_file([Segment(0, 60, avg_score=0.7)], 0.7).positive


# -- properties --------------------------------------------------------------


@st.composite
def score_series(draw, max_len=120):
    n = draw(st.integers(0, max_len))
    values = draw(st.lists(st.sampled_from([0.0, 0.3, 0.45, 0.55, 0.8, 1.0]), min_size=n, max_size=n))
    tail = draw(st.sampled_from([0.0, 0.25, 0.99]))
    return ScoreSeries(np.array(values, dtype=float), n + 4 + tail if n else tail * 4)


configs = st.builds(
    SegmenterConfig,
    lam=st.sampled_from([0.4, 0.5, 0.6]),
    d=st.integers(0, 5),
    min_piano_s=st.sampled_from([5.0, 20.0, 45.0]),
    min_avg=st.sampled_from([0.5, 0.7]),
)


@given(score_series(), configs)
def test_matches_oracle(s, cfg):
    scores = s.scores.tolist()
    assert spans(find_nonpiano_regions(s, cfg)) == oracles.regions(scores, s.audio_len_s, cfg.lam, cfg.d)
    got = [(a.start_s, a.end_s) for a in segment(s, cfg)]
    want = [(a, b) for a, b, _ in oracles.segments(scores, s.audio_len_s, cfg.lam, cfg.d, cfg.min_piano_s, cfg.min_avg)]
    assert got == want


@given(score_series(), configs)
def test_minimum_nonpiano_length(s, cfg):
    for region in find_nonpiano_regions(s, cfg):
        assert region.duration >= cfg.d + 5


@given(score_series(), configs)
def test_timeline_tiles_the_recording(s, cfg):
    pieces = timeline(s, cfg)
    if s.audio_len_s <= 0:
        assert pieces == []
        return
    assert pieces[0].start_s == 0.0 and pieces[-1].end_s == pytest.approx(s.audio_len_s)
    for a, b in zip(pieces, pieces[1:]):
        assert a.end_s == b.start_s and a.kind is not b.kind


@given(score_series(), configs, st.floats(0.0, 0.3))
def test_raising_lambda_never_grows_piano(s, cfg, delta):
    higher = SegmenterConfig(min(1.0, cfg.lam + delta), cfg.d, cfg.min_piano_s, cfg.min_avg)
    low = piano_candidates(s, cfg)
    for seg in piano_candidates(s, higher):
        assert any(o.start_s <= seg.start_s and seg.end_s <= o.end_s for o in low)


@given(st.integers(0, 60), st.integers(0, 60), st.integers(0, 3))
def test_long_silence_splits(before, after, d):
    cfg = SegmenterConfig(d=d, min_piano_s=0.0, min_avg=0.0)
    s = series((before, 0.9), (d + 1, 0.0), (after, 0.9))
    regions = find_nonpiano_regions(s, cfg)
    assert len(regions) == 1 and regions[0].start_s == before


@given(st.lists(st.booleans(), min_size=0, max_size=40), st.integers(0, 6))
def test_cells_match_brute_force(below, d):
    got = nonpiano_cells(np.array(below, dtype=bool), d).tolist()
    assert got == oracles.covered_cells(below, d)


def test_batched_cells_match_per_column():
    rng = np.random.default_rng(0)
    batch = rng.random((30, 64)) < 0.6
    cols = np.stack([nonpiano_cells(batch[:, j], 3) for j in range(64)], axis=1)
    assert np.array_equal(nonpiano_cells(batch, 3), cols)


def test_linear_scaling():
    import time

    rng = np.random.default_rng(1)
    s = ScoreSeries(rng.random(200_000), 200_004)
    t0 = time.perf_counter()
    segment(s)
    assert time.perf_counter() - t0 < 0.5
