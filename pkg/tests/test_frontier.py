import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from pianocurate import frontier as fr
from pianocurate.errors import MalformedResponse, NoSeeds, OutOfRange, PortError
from pianocurate.ports import Backoff, FixtureLM, FixtureRelated, VideoMeta


def vm(vid, title=None):
    return VideoMeta(vid, title or f"title {vid}", "")


def reply(score):
    return f"Thinking about it.\n{{\"score\": {score}}}"


def web(related, scores):
    return FixtureLM({k: reply(v) for k, v in scores.items()}), FixtureRelated(
        {k: [vm(x).to_dict() for x in vs] for k, vs in related.items()}
    )


class TestParseScore:
    def test_reasoning_then_json(self):
        assert fr.parse_score_response("…reasoning… {\"score\": 4}") == 4

    def test_out_of_range(self):
        with pytest.raises(OutOfRange):
            fr.parse_score_response('{"score": 7}')

    def test_no_json(self):
        with pytest.raises(MalformedResponse):
            fr.parse_score_response("score is five")

    def test_last_object_wins(self):
        assert fr.parse_score_response('{"score": 1} then revised {"score": 3}') == 3

    def test_objects_without_score_ignored(self):
        assert fr.parse_score_response('{"score": 2} {"note": "x"}') == 2

    def test_digit_string(self):
        assert fr.parse_score_response('{"score": "5"}') == 5

    @pytest.mark.parametrize("bad", ['{"score": 2.5}', '{"score": true}', '{"score": "high"}'])
    def test_non_integer(self, bad):
        with pytest.raises(MalformedResponse):
            fr.parse_score_response(bad)

    def test_request_carries_prompt_and_tags(self):
        req = fr.score_request(VideoMeta("a", "Chopin <live>", "desc"))
        assert req.key == "a" and req.system_prompt
        assert "<title>Chopin &lt;live&gt;</title>" in req.user


class TestSeeds:
    def test_fifty_seeds(self):
        assert len(fr.ingest_seeds([vm(f"s{i}") for i in range(50)])) == 50

    def test_duplicate_seed(self):
        assert len(fr.ingest_seeds([vm("a"), vm("a")])) == 1

    def test_no_seeds(self):
        with pytest.raises(NoSeeds):
            fr.ingest_seeds([])


class TestCycle:
    def test_single_expansion(self):
        f = fr.ingest_seeds([vm("a")])
        scorer, related = web({"a": ["b", "c", "d"]}, {"a": 5, "b": 1, "c": 1, "d": 1})
        fr.cycle_step(f, scorer, related, budget=1)
        assert len(f) == 4
        assert f["a"].state is fr.VideoState.EXPANDED
        assert [f[x].parent for x in "bcd"] == ["a"] * 3

    def test_priority(self):
        f = fr.ingest_seeds([vm("low"), vm("high")])
        scorer, related = web({"low": ["x"], "high": ["y"]}, {"low": 3, "high": 5})
        fr.cycle_step(f, scorer, related, budget=1)
        assert f["high"].state is fr.VideoState.EXPANDED
        assert f["low"].state is fr.VideoState.SCORED

    def test_ties_are_fifo(self):
        f = fr.ingest_seeds([vm("first"), vm("second")])
        scorer, related = web({}, {"first": 4, "second": 4})
        fr.cycle_step(f, scorer, related, budget=1)
        assert f["first"].state is fr.VideoState.EXPANDED

    def test_seen_ids_not_requeued(self):
        f = fr.ingest_seeds([vm("a"), vm("b")])
        scorer, related = web({"a": ["b", "c"]}, {"a": 5, "b": 2, "c": 2})
        fr.cycle_step(f, scorer, related, budget=1)
        assert len(f) == 3
        assert [e["added"] for e in f.events if e["event"] == "expand"] == [1]

    def test_zero_scores_never_expand(self):
        f = fr.ingest_seeds([vm("a")])
        scorer, related = web({"a": ["b"]}, {"a": 0})
        fr.cycle_step(f, scorer, related, budget=5)
        assert f["a"].state is fr.VideoState.SCORED and len(f) == 1

    def test_budget_must_be_positive(self):
        f = fr.ingest_seeds([vm("a")])
        with pytest.raises(ValueError):
            fr.cycle_step(f, *web({}, {"a": 1}), budget=0)

    def test_capacity_respected(self):
        f = fr.ingest_seeds([vm("a")])
        scorer, related = web({"a": ["b", "c", "d"]}, {k: 3 for k in "abcd"})
        fr.crawl(f, scorer, related, fr.CrawlSettings(max_videos=2))
        assert len(f) == 2 and not f.unscored()


class FlakyLM:
    def __init__(self, inner, failures):
        self.inner = inner
        self.failures = dict(failures)
        self.calls = 0

    def complete(self, request):
        self.calls += 1
        if self.failures.get(request.key, 0) > 0:
            self.failures[request.key] -= 1
            raise PortError("endpoint unavailable")
        return self.inner.complete(request)


class TestFailures:
    def test_transient_failure_retried(self):
        f = fr.ingest_seeds([vm("a")])
        scorer, related = web({}, {"a": 4})
        fr.score_pending(f, FlakyLM(scorer, {"a": 2}))
        assert f["a"].score == 4 and f["a"].retries == 2 and f["a"].error is None

    def test_persistent_failure_scores_zero(self):
        f = fr.ingest_seeds([vm("a"), vm("b")])
        scorer, related = web({"a": ["c"], "b": ["d"]}, {"a": 4, "b": 4, "d": 1})
        fr.crawl(f, FlakyLM(scorer, {"a": 99}), related)
        assert f["a"].score == 0 and f["a"].retries == 3 and "PortError" in f["a"].error
        assert f["a"].state is fr.VideoState.SCORED
        assert "d" in f and "c" not in f

    def test_malformed_reply_scores_zero(self):
        f = fr.ingest_seeds([vm("a")])
        fr.score_pending(f, FixtureLM({"a": "no idea"}))
        assert f["a"].score == 0 and "MalformedResponse" in f["a"].error

    def test_related_failure_marks_expanded(self):
        class Broken:
            def related(self, video_id):
                raise PortError("provider down")

        f = fr.ingest_seeds([vm("a")])
        fr.crawl(f, FixtureLM({"a": reply(5)}), Broken())
        assert f["a"].state is fr.VideoState.EXPANDED and "provider down" in f["a"].error

    def test_backoff_delays(self):
        slept = []
        f = fr.ingest_seeds([vm("a")])
        settings = fr.CrawlSettings(backoff=Backoff(attempts=3, base_delay=0.5, sleep=slept.append))
        fr.score_pending(f, FlakyLM(FixtureLM({"a": reply(1)}), {"a": 2}), settings)
        assert slept == [0.5, 1.0]


class TestReplay:
    def _crawl(self, log_path=None, workers=1):
        f = fr.ingest_seeds([vm("a"), vm("b")], log_path)
        scorer, related = web(
            {"a": ["c", "d"], "b": ["d", "e"], "c": ["f"], "e": ["g", "a"]},
            {"a": 5, "b": 3, "c": 4, "d": 0, "e": 4, "f": 2, "g": 1},
        )
        fr.crawl(f, scorer, related, fr.CrawlSettings(budget=1, workers=workers))
        f.close()
        return f

    def test_events_replay_to_same_state(self):
        f = self._crawl()
        assert fr.Frontier.replay(f.events).snapshot() == f.snapshot()

    def test_log_file(self, tmp_path):
        f = self._crawl(tmp_path / "log.jsonl")
        lines = (tmp_path / "log.jsonl").read_text().splitlines()
        assert [json.loads(x) for x in lines] == f.events
        assert fr.Frontier.load(tmp_path / "log.jsonl").snapshot() == f.snapshot()

    def test_workers_do_not_change_the_log(self):
        assert self._crawl(workers=4).events == self._crawl().events

    def test_priority_checker(self):
        assert list(fr.expansion_order_violations(self._crawl().events)) == []
        bad = [
            {"event": "enqueue", "video_id": "a"}, {"event": "enqueue", "video_id": "b"},
            {"event": "score", "video_id": "a", "score": 2}, {"event": "score", "video_id": "b", "score": 5},
            {"event": "expand", "video_id": "a", "added": 0},
        ]
        assert len(list(fr.expansion_order_violations(bad))) == 1

    def test_double_enqueue_rejected(self):
        f = fr.Frontier()
        f.apply({"event": "enqueue", "video_id": "a"})
        with pytest.raises(ValueError):
            f.apply({"event": "enqueue", "video_id": "a"})

    def test_unknown_event(self):
        with pytest.raises(ValueError):
            fr.Frontier().apply({"event": "teleport", "video_id": "a"})


class TestHistogram:
    def test_buckets_one_to_five(self):
        assert fr.score_histogram([5, 5, 4, 0]) == {1: 0.0, 2: 0.0, 3: 0.0, 4: 1 / 3, 5: 2 / 3}

    def test_empty(self):
        assert sum(fr.score_histogram([]).values()) == 0.0


@st.composite
def graphs(draw):
    n = draw(st.integers(2, 40))
    ids = [f"v{i}" for i in range(n)]
    scores = {v: draw(st.integers(0, 5)) for v in ids}
    related = {v: draw(st.lists(st.sampled_from(ids), max_size=5)) for v in ids}
    n_seeds = draw(st.integers(1, min(5, n)))
    budget = draw(st.integers(1, 4))
    return ids[:n_seeds], related, scores, budget


@given(graphs())
def test_crawl_respects_priority(g):
    seeds, related, scores, budget = g
    f = fr.ingest_seeds([vm(s) for s in seeds])
    fr.crawl(f, *web(related, scores), fr.CrawlSettings(budget=budget))
    assert list(fr.expansion_order_violations(f.events)) == []
    assert not f.unscored()
    # nothing expandable is left behind once the crawl stops on exhaustion
    assert f.expandable() == []
    # every non-seed video was reached from an expanded parent
    for v in f.videos():
        if v.parent is not None:
            assert f[v.parent].state is fr.VideoState.EXPANDED
