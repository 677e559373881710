import csv

import pytest

from pianocurate.errors import EmptyManifest
from pianocurate.pipeline.manifest import ManifestEntry
from pianocurate.pipeline.stats import empirical_cdf, stats_report, write_bundle


def entry(fid, score=None, segs=(), md=None, status="retained"):
    e = ManifestEntry(fid, fid, lm_score=score)
    e.segments = [{"start_s": 0.0, "end_s": 60.0, "avg_score": a} for a in segs]
    e.metadata = md
    e.dedup_status = status if md else None
    return e


def test_histogram():
    b = stats_report([entry("a", 5), entry("b", 5), entry("c", 4)])
    assert b.histogram == {1: 0.0, 2: 0.0, 3: 0.0, 4: pytest.approx(1 / 3), 5: pytest.approx(2 / 3)}


def test_cdf_step():
    assert empirical_cdf([0.9, 0.9, 0.9]) == [(0.9, 1.0)]
    assert empirical_cdf([0.5, 0.9]) == [(0.5, 0.5), (0.9, 1.0)]
    assert empirical_cdf([]) == []


def test_composer_order_and_removed_entries():
    rows = [entry(f"c{i}", 5, md={"composer": "chopin"}) for i in range(3)]
    rows += [entry("b", 5, md={"composer": "bach"}), entry("x", 5, md={"composer": "liszt"}, status="removed")]
    assert stats_report(rows).composers == [("chopin", 3), ("bach", 1)]


def test_tags_normalized():
    rows = [entry("a", 5, md={"genre": "classical"}), entry("b", 5, md={"genre": "classical"}),
            entry("c", 5, md={"genre": "jazz"})]
    assert stats_report(rows).tags["genre"] == [("classical", 2, 1.0), ("jazz", 1, 0.5)]


def test_empty():
    with pytest.raises(EmptyManifest):
        stats_report([])


def test_csv_bundle(tmp_path):
    b = stats_report([entry("a", 5, segs=(0.9,), md={"composer": "chopin", "form": "etude"}), entry("b", 3)])
    paths = write_bundle(b, tmp_path)
    with open(paths["score_histogram"], newline="") as fh:
        hist = list(csv.DictReader(fh))
    assert [r["score"] for r in hist] == ["1", "2", "3", "4", "5"]
    assert sum(float(r["proportion"]) for r in hist) == pytest.approx(1.0)
    assert (tmp_path / "composers.csv").read_text().splitlines() == ["composer,count", "chopin,1"]
    assert "form,etude,1,1.000000" in (tmp_path / "tags.csv").read_text()
