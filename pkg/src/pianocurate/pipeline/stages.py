"""Stage implementations over the manifest.

Each per-entry stage follows one pattern: decide eligibility for every
entry in file_id order, hand the eligible ones to a bounded worker pool,
then apply their results from the calling thread (the single writer) and
save the manifest atomically. Every file id lands in exactly one of the
report's ``updated``, ``skipped`` or ``failed`` buckets.

Files written under the work directory:

* ``manifest.jsonl``            the manifest
* ``frontier.jsonl``            crawl event log (append-only)
* ``labels.jsonl``              clip pseudo-labels
* ``segments.jsonl``            retained piano segments
* ``metadata_violations.jsonl`` validation findings (append-only)
* ``dedup_report.jsonl``        per-entry dedup outcome
* ``stats/*.csv``               dataset statistics
* ``eval_report.json``          evaluation metrics
* ``midi/<file_id>_<idx>.mid``  transcriptions
* ``reports/<stage>.json``      the last report of every stage
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterable

from .. import frontier as fr
from ..dedup import DedupEntry, dedup, dedup_stats
from ..errors import ConfigError, PipelineError, StageInputMissing
from ..evalkit import (
    MatchCounts,
    OverlapCounts,
    classification_prf,
    match_counts,
    overlap_counts,
    postprocess_reference,
    prf_from_counts,
)
from ..metadata import MetadataRecord, extract
from ..ports import (
    Backoff,
    FixtureLM,
    FixtureRelated,
    FixtureTranscriber,
    HttpLM,
    LanguageModel,
    PromptRequest,
    RelatedVideos,
    Transcriber,
    VideoMeta,
)
from ..prompts import metadata_prompt
from ..pseudolabel import label_stem_files, proportion_piano, stem_paths
from ..segmenter import ScoreSeries, Segment, classify_file, segment
from . import stats as stats_mod
from .config import PipelineConfig, PortSpec
from .manifest import Manifest, ManifestEntry

log = logging.getLogger(__name__)

STAGES = ("crawl", "label", "segment", "classify", "extract-meta", "dedup", "stats", "eval", "transcribe")
FULL_RUN = ("crawl", "label", "segment", "classify", "extract-meta", "dedup", "stats")

EXIT_OK, EXIT_ALL_FAILED, EXIT_SYSTEMIC = 0, 1, 2


@dataclass
class StageReport:
    stage: str
    updated: list[str] = field(default_factory=list)
    skipped: dict[str, str] = field(default_factory=dict)
    failed: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    summary: dict[str, Any] = field(default_factory=dict)
    elapsed_s: float = 0.0

    @property
    def exit_code(self) -> int:
        if self.failed and not self.updated:
            return EXIT_ALL_FAILED
        return EXIT_OK

    def ids(self) -> list[str]:
        return sorted([*self.updated, *self.skipped, *self.failed])

    def to_json(self) -> dict:
        return {
            "stage": self.stage,
            "counts": {"updated": len(self.updated), "skipped": len(self.skipped), "failed": len(self.failed)},
            "updated": sorted(self.updated),
            "skipped": dict(sorted(self.skipped.items())),
            "failed": dict(sorted(self.failed.items())),
            "outputs": self.outputs,
            "summary": self.summary,
            "elapsed_s": round(self.elapsed_s, 3),
        }


def _lm(spec: PortSpec, name: str) -> LanguageModel | None:
    if spec.fixture is not None:
        return FixtureLM.from_file(spec.fixture)
    if spec.url is not None:
        return HttpLM(spec.url, spec.model or "", timeout=spec.timeout_s)
    return None


@dataclass
class StageContext:
    """Configuration plus the ports; tests may inject port objects directly."""

    config: PipelineConfig
    force: bool = False
    scorer: LanguageModel | None = None
    related: RelatedVideos | None = None
    metadata_lm: LanguageModel | None = None
    transcriber: Transcriber | None = None
    clock: Callable[[], datetime] = lambda: datetime.now(timezone.utc)

    def __post_init__(self):
        cfg = self.config
        if self.scorer is None:
            self.scorer = _lm(cfg.scorer, "scorer")
        if self.related is None:
            if cfg.related.url is not None:
                raise ConfigError("the related-videos port only has a fixture adapter")
            if cfg.related.fixture is not None:
                self.related = FixtureRelated.from_file(cfg.related.fixture)
        if self.metadata_lm is None:
            self.metadata_lm = _lm(cfg.metadata_lm, "metadata_lm")
        if self.transcriber is None and cfg.input("transcriptions_dir") is not None:
            self.transcriber = FixtureTranscriber(cfg.input("transcriptions_dir"))

    def now(self) -> str | None:
        if not self.config.timestamps:
            return None
        return self.clock().isoformat(timespec="seconds")

    def path(self, name: str) -> Path:
        return self.config.workdir / name

    def require_input(self, key: str) -> Path:
        p = self.config.input(key)
        if p is None:
            raise StageInputMissing(f"inputs.{key} is not configured")
        if not p.exists():
            raise StageInputMissing(f"inputs.{key} = {p} does not exist")
        return p

    def backoff(self) -> Backoff:
        f = self.config.frontier
        return Backoff(attempts=f.retry_attempts, base_delay=f.retry_base_delay_s)


def _write_jsonl(path: Path, rows: Iterable[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    tmp.replace(path)


def _run_entries(
    ctx: StageContext,
    manifest: Manifest,
    report: StageReport,
    flag: str | None,
    eligible: Callable[[ManifestEntry], str | None],
    work: Callable[[ManifestEntry], Any],
    apply: Callable[[ManifestEntry, Any], None],
) -> None:
    """``eligible`` returns a skip reason or None; ``work`` runs in the pool; ``apply`` runs here, in file_id order."""
    todo = []
    for entry in manifest:
        reason = eligible(entry)
        if reason is None and flag is not None and entry.done(flag) and not ctx.force:
            reason = "already done"
        if reason is not None:
            report.skipped[entry.file_id] = reason
        else:
            todo.append(entry)

    def guarded(entry: ManifestEntry):
        try:
            return True, work(entry)
        except (PipelineError, OSError, ValueError, KeyError) as exc:
            return False, f"{type(exc).__name__}: {exc}"

    if ctx.config.workers > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=ctx.config.workers) as pool:
            results = list(pool.map(guarded, todo))
    else:
        results = [guarded(e) for e in todo]

    for entry, (ok, value) in zip(todo, results):
        if ok:
            apply(entry, value)
            if flag is not None:
                entry.mark(flag, ctx.now())
            report.updated.append(entry.file_id)
        else:
            log.warning("%s failed for %s: %s", report.stage, entry.file_id, value)
            if flag is not None:
                entry.errors[flag] = value
            report.failed[entry.file_id] = value


# -- crawl -----------------------------------------------------------------


def _read_seeds(path: Path) -> list[VideoMeta]:
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        data = [json.loads(line) for line in text.splitlines() if line.strip()]
    if isinstance(data, dict):
        data = data.get("seeds", [])
    return [VideoMeta.from_dict(v) for v in data]


def stage_crawl(ctx: StageContext, manifest: Manifest, report: StageReport) -> None:
    seeds_path = ctx.require_input("seeds")
    if ctx.scorer is None or ctx.related is None:
        raise StageInputMissing("crawl needs both the scorer and the related-videos ports")
    fcfg = ctx.config.frontier
    settings = fr.CrawlSettings(
        budget=fcfg.budget,
        min_expand_score=fcfg.min_expand_score,
        max_videos=fcfg.max_videos,
        max_cycles=fcfg.max_cycles,
        workers=ctx.config.workers,
        backoff=ctx.backoff(),
    )
    log_path = ctx.path("frontier.jsonl")
    if ctx.force and log_path.exists():
        log_path.unlink()
    if log_path.exists():
        frontier = fr.Frontier.load(log_path)
    else:
        frontier = fr.ingest_seeds(_read_seeds(seeds_path), log_path)
    try:
        fr.crawl(frontier, ctx.scorer, ctx.related, settings)
    finally:
        frontier.close()

    now = ctx.now()
    for video in frontier.videos():
        fid = video.video_id
        entry = manifest.get(fid)
        if entry is not None and not ctx.force:
            report.skipped[fid] = "already crawled"
            continue
        if entry is None:
            entry = ManifestEntry(fid, fid)
            manifest.add(entry)
        elif entry.lm_score != video.score:
            entry.clear_from("labeled")
        entry.title, entry.description = video.meta.title, video.meta.description
        entry.lm_score = video.score
        if video.error:
            entry.errors["scored"] = video.error
        entry.mark("scored", now)
        if now:
            entry.timestamps.setdefault("crawled", now)
        report.updated.append(fid)
    # manifest entries the frontier does not know about (hand-added files)
    for entry in manifest:
        if entry.file_id not in frontier:
            report.skipped.setdefault(entry.file_id, "not in frontier")
    report.outputs["frontier_log"] = str(log_path)
    report.summary = {
        "videos": len(frontier),
        "score_counts": {str(k): v for k, v in sorted(frontier.score_counts().items())},
        "histogram": {str(k): v for k, v in frontier.histogram().items()},
        "scoring_failures": sum(1 for v in frontier.videos() if v.error),
    }


# -- label -----------------------------------------------------------------


def _eligible_after_scoring(ctx: StageContext) -> Callable[[ManifestEntry], str | None]:
    def check(entry: ManifestEntry) -> str | None:
        if not entry.done("scored"):
            return "not scored"
        if entry.lm_score is None or entry.lm_score < ctx.config.min_lm_score:
            return f"lm_score below {ctx.config.min_lm_score}"
        return None

    return check


def _write_labels(ctx: StageContext, manifest: Manifest) -> Path:
    rows = []
    for entry in manifest:
        clips = (entry.pseudo_labels or {}).get("clips") or []
        rows.extend({"id": entry.file_id, **c} for c in clips)
    path = ctx.path("labels.jsonl")
    _write_jsonl(path, rows)
    return path


def stage_label(ctx: StageContext, manifest: Manifest, report: StageReport) -> None:
    stems_dir = ctx.require_input("stems_dir")
    policy = ctx.config.policy

    def work(entry: ManifestEntry):
        piano, other = stem_paths(stems_dir, entry.file_id)
        if not (piano.exists() and other.exists()):
            return None
        labels = label_stem_files(piano, other, policy)
        return {
            "policy": ctx.config.policy_name,
            "db_min": policy.db_min,
            "l_min": policy.l_min,
            "proportion_piano": proportion_piano(labels),
            "clips": [{k: v for k, v in lab.to_json(entry.file_id).items() if k != "id"} for lab in labels],
        }

    def apply(entry: ManifestEntry, labels):
        entry.pseudo_labels = labels

    _run_entries(ctx, manifest, report, "labeled", _eligible_after_scoring(ctx), work, apply)
    report.outputs["labels"] = str(_write_labels(ctx, manifest))
    with_stems = [e for e in manifest if e.file_id in report.updated and e.pseudo_labels]
    report.summary = {"policy": ctx.config.policy_name, "db_min": policy.db_min, "l_min": policy.l_min,
                      "with_stems": len(with_stems)}


# -- segment ---------------------------------------------------------------


def _write_segments(ctx: StageContext, manifest: Manifest) -> Path:
    rows = []
    for entry in manifest:
        for seg in entry.segments or []:
            rows.append({"id": entry.file_id, **seg})
    path = ctx.path("segments.jsonl")
    _write_jsonl(path, rows)
    return path


def stage_segment(ctx: StageContext, manifest: Manifest, report: StageReport) -> None:
    scores_dir = ctx.require_input("scores_dir")
    cfg = ctx.config.segmenter

    def eligible(entry):
        return None if entry.done("labeled") else "not labeled"

    def work(entry: ManifestEntry):
        path = scores_dir / f"{entry.file_id}.json"
        if not path.exists():
            raise StageInputMissing(f"no score series at {path}")
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        if obj.get("id", entry.file_id) != entry.file_id:
            raise ValueError(f"{path} belongs to {obj.get('id')!r}")
        series = ScoreSeries.from_json(obj)
        return series.audio_len_s, [s.to_json() for s in segment(series, cfg)]

    def apply(entry: ManifestEntry, result):
        entry.audio_len_s, entry.segments = result
        entry.clear_from("classified")

    _run_entries(ctx, manifest, report, "segmented", eligible, work, apply)
    report.outputs["segments"] = str(_write_segments(ctx, manifest))
    report.summary = {
        "lambda": cfg.lam, "d": cfg.d, "min_piano_s": cfg.min_piano_s, "min_avg": cfg.min_avg,
        "segments": sum(len(e.segments or []) for e in manifest if e.file_id in report.updated),
    }


# -- classify --------------------------------------------------------------


def stage_classify(ctx: StageContext, manifest: Manifest, report: StageReport) -> None:
    threshold = ctx.config.threshold

    def eligible(entry):
        return None if entry.done("segmented") else "not segmented"

    def work(entry: ManifestEntry):
        return classify_file([Segment.from_json(s) for s in entry.segments or []], threshold)

    def apply(entry: ManifestEntry, result):
        entry.classification = result.label
        entry.best_avg = result.best_avg
        entry.clear_from("metadata")

    _run_entries(ctx, manifest, report, "classified", eligible, work, apply)
    classified = [e for e in manifest if e.done("classified")]
    report.summary = {
        "threshold": threshold,
        "positive": sum(e.classification == "positive" for e in classified),
        "negative": sum(e.classification == "negative" for e in classified),
    }


# -- extract-meta ----------------------------------------------------------


def stage_extract_meta(ctx: StageContext, manifest: Manifest, report: StageReport) -> None:
    if ctx.metadata_lm is None:
        raise StageInputMissing("extract-meta needs the metadata_lm port")
    lm = ctx.metadata_lm
    backoff = ctx.backoff()
    strict = ctx.config.strict_metadata
    system = metadata_prompt()

    def eligible(entry):
        if not entry.done("classified"):
            return "not classified"
        if entry.classification != "positive":
            return "classified negative"
        return None

    def work(entry: ManifestEntry):
        request = PromptRequest(entry.video_id, system, entry.title, entry.description)
        text = backoff.call(lambda: lm.complete(request))
        return extract(text, strict=strict)

    violations = []

    def apply(entry: ManifestEntry, result):
        entry.metadata = result.record.to_dict() if result.record is not None else {}
        entry.clear_from("dedup")
        entry.dedup_status = entry.dedup_reason = None
        entry.tags = [t for t in entry.tags if not t.startswith("dedup:")]
        for v in result.violations:
            violations.append({"id": entry.file_id, **v.to_json()})
        for note in result.notes:
            violations.append({"id": entry.file_id, "note": note})

    _run_entries(ctx, manifest, report, "metadata", eligible, work, apply)
    path = ctx.path("metadata_violations.jsonl")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as fh:
        for row in violations:
            fh.write(json.dumps(row, ensure_ascii=False, default=str) + "\n")
    report.outputs["violations"] = str(path)
    report.summary = {"strict": strict, "violations": sum("rule" in v for v in violations)}


# -- dedup -----------------------------------------------------------------


def stage_dedup(ctx: StageContext, manifest: Manifest, report: StageReport) -> None:
    pool = []
    for entry in manifest:
        if not entry.done("metadata"):
            report.skipped[entry.file_id] = "no metadata"
        else:
            pool.append(entry)
    if pool and all(e.done("dedup") for e in pool) and not ctx.force:
        for e in pool:
            report.skipped[e.file_id] = "already done"
        return
    # dedup is corpus-wide, so any new entry means recomputing the whole snapshot
    result = dedup(
        [DedupEntry(e.file_id, MetadataRecord.from_dict(e.metadata), e.best_avg) for e in pool],
        ctx.config.dedup,
    )
    reasons = dict(result.removed)
    now = ctx.now()
    for e in pool:
        e.tags = [t for t in e.tags if not t.startswith("dedup:")]
        if e.file_id in reasons:
            e.dedup_status, e.dedup_reason = "removed", reasons[e.file_id].value
        else:
            e.dedup_status, e.dedup_reason = "retained", None
        e.tags.append(f"dedup:{e.dedup_status}")
        e.mark("dedup", now)
        report.updated.append(e.file_id)
    path = ctx.path("dedup_report.jsonl")
    _write_jsonl(path, result.to_lines())
    report.outputs["dedup_report"] = str(path)
    report.summary = dedup_stats(result)


# -- stats -----------------------------------------------------------------


def stage_stats(ctx: StageContext, manifest: Manifest, report: StageReport) -> None:
    bundle = stats_mod.stats_report(manifest)
    out_dir = ctx.path("stats")
    report.outputs.update({k: str(p) for k, p in stats_mod.write_bundle(bundle, out_dir).items()})
    for entry in manifest:
        if entry.lm_score is None:
            report.skipped[entry.file_id] = "no lm score"
        else:
            report.updated.append(entry.file_id)
    report.summary = {
        "histogram": {str(k): v for k, v in bundle.histogram.items()},
        "composers": len(bundle.composers),
        "segments": len(bundle.avg_scores),
    }


# -- eval ------------------------------------------------------------------


EVAL_THRESHOLDS = (0.5, 0.6, 0.7, 0.8, 0.9)


def _read_reference_segments(path: Path) -> dict[str, list[Segment]]:
    refs: dict[str, list[Segment]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                refs.setdefault(str(obj["id"]), []).append(Segment.from_json(obj))
    return refs


def stage_eval(ctx: StageContext, manifest: Manifest, report: StageReport) -> None:
    refs = _read_reference_segments(ctx.require_input("references"))
    labels_path = ctx.config.input("reference_labels")
    ref_labels = json.loads(labels_path.read_text(encoding="utf-8")) if labels_path else {}
    cfg = ctx.config.segmenter

    counts = MatchCounts(0, 0, 0)
    overlap = OverlapCounts(0.0, 0.0, 0.0, 0.0)
    per_file = []
    for entry in manifest:
        fid = entry.file_id
        if fid not in refs:
            report.skipped[fid] = "no reference"
            continue
        if not entry.done("segmented") or entry.audio_len_s is None:
            report.failed[fid] = "reference given but entry not segmented"
            continue
        pred = [Segment.from_json(s) for s in entry.segments or []]
        ref = postprocess_reference(refs[fid], entry.audio_len_s, min_gap_s=cfg.d + 5, min_piano_s=cfg.min_piano_s)
        mc = match_counts(pred, ref)
        oc = overlap_counts(pred, ref, entry.audio_len_s)
        counts, overlap = counts + mc, overlap + oc
        prf = prf_from_counts(mc)
        per_file.append({"id": fid, "matches": mc.matches, "n_pred": mc.n_pred, "n_ref": mc.n_ref, **prf.as_dict()})
        report.updated.append(fid)

    total = prf_from_counts(counts)
    piano, nonpiano = overlap.ratios()
    result: dict[str, Any] = {
        "files": len(per_file),
        "segmentation": total.as_dict(),
        "overlap": {"piano": piano, "non_piano": nonpiano},
        "per_file": per_file,
    }
    labeled = [e for e in manifest if e.file_id in ref_labels and e.done("segmented")]
    if labeled:
        rows = []
        for t in sorted({*EVAL_THRESHOLDS, ctx.config.threshold}):
            pred = [e.best_avg is not None and e.best_avg >= t - 1e-9 for e in labeled]
            ref = [ref_labels[e.file_id] for e in labeled]
            rows.append({"threshold": t, **classification_prf(pred, ref).as_dict()})
        result["classification"] = rows
    path = ctx.path("eval_report.json")
    path.write_text(json.dumps(result, indent=2) + "\n", encoding="utf-8")
    report.outputs["eval_report"] = str(path)
    report.summary = {k: v for k, v in result.items() if k != "per_file"}


# -- transcribe ------------------------------------------------------------


def stage_transcribe(ctx: StageContext, manifest: Manifest, report: StageReport) -> None:
    if ctx.transcriber is None:
        raise StageInputMissing("transcribe needs inputs.transcriptions_dir")
    out_dir = ctx.path("midi")

    def eligible(entry):
        if entry.dedup_status == "retained":
            return None
        if entry.dedup_status is None and entry.classification == "positive":
            return None
        return "not in the retained set"

    def work(entry: ManifestEntry):
        paths = ctx.transcriber.transcribe(entry.file_id, len(entry.segments or []), out_dir)
        return [p.name for p in paths]

    def apply(entry: ManifestEntry, names):
        entry.midi = names

    def eligible_not_done(entry):
        reason = eligible(entry)
        if reason is None and entry.midi is not None and not ctx.force:
            return "already done"
        return reason

    _run_entries(ctx, manifest, report, None, eligible_not_done, work, apply)
    report.outputs["midi_dir"] = str(out_dir)


_IMPL = {
    "crawl": stage_crawl,
    "label": stage_label,
    "segment": stage_segment,
    "classify": stage_classify,
    "extract-meta": stage_extract_meta,
    "dedup": stage_dedup,
    "stats": stage_stats,
    "eval": stage_eval,
    "transcribe": stage_transcribe,
}

_WRITES_MANIFEST = {"crawl", "label", "segment", "classify", "extract-meta", "dedup", "transcribe"}


def run_stage(stage: str, ctx: StageContext) -> StageReport:
    """Run one stage, save the manifest and report; raises PipelineError on systemic failure."""
    if stage not in _IMPL:
        raise ConfigError(f"unknown stage {stage!r}; choose from {', '.join(STAGES)}")
    t0 = time.perf_counter()
    manifest = Manifest.load(ctx.config.manifest_path, must_exist=stage != "crawl")
    report = StageReport(stage)
    _IMPL[stage](ctx, manifest, report)
    if stage in _WRITES_MANIFEST:
        manifest.save()
    report.elapsed_s = time.perf_counter() - t0
    ctx.config.reports_dir.mkdir(parents=True, exist_ok=True)
    (ctx.config.reports_dir / f"{stage}.json").write_text(json.dumps(report.to_json(), indent=2) + "\n", encoding="utf-8")
    return report


def run_all(ctx: StageContext, stages: Iterable[str] = FULL_RUN) -> list[StageReport]:
    return [run_stage(s, ctx) for s in stages]
