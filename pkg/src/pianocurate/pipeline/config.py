"""Pipeline configuration: one YAML or JSON file, overridable from the command line.

Relative paths inside a config file resolve against the file's own
directory. Every referenced input path must exist when the config is
loaded; the work directory is created on demand.

Example::

    workdir: out
    inputs:
      seeds: seeds.json
      stems_dir: stems
      scores_dir: scores
    ports:
      scorer: {fixture: scorer.json}
      related: {fixture: related.json}
      metadata_lm: {url: http://localhost:8000/v1/chat, model: llama-3.1-70b}
    segmenter: {lambda: 0.5, d: 3, min_piano_s: 45, min_avg: 0.7}
    policy: score-4
    threshold: 0.7
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from ..dedup import DedupPolicy
from ..errors import ConfigError
from ..pseudolabel import LabelPolicy, policy_by_name
from ..segmenter import SegmenterConfig

INPUT_KEYS = ("seeds", "stems_dir", "scores_dir", "references", "reference_labels", "transcriptions_dir")


@dataclass(frozen=True)
class PortSpec:
    """Either a fixture file or an HTTP endpoint (with model name)."""

    fixture: Path | None = None
    url: str | None = None
    model: str | None = None
    timeout_s: float = 60.0

    @property
    def configured(self) -> bool:
        return self.fixture is not None or self.url is not None


@dataclass(frozen=True)
class FrontierConfig:
    budget: int = 10
    max_videos: int | None = 500
    max_cycles: int = 1000
    min_expand_score: int = 1
    retry_attempts: int = 3
    retry_base_delay_s: float = 0.5


@dataclass(frozen=True)
class PipelineConfig:
    workdir: Path = Path("pianocurate-work")
    inputs: dict[str, Path] = field(default_factory=dict)
    scorer: PortSpec = PortSpec()
    related: PortSpec = PortSpec()
    metadata_lm: PortSpec = PortSpec()
    segmenter: SegmenterConfig = SegmenterConfig()
    policy_name: str | None = "score-4"
    policy: LabelPolicy = policy_by_name("score-4")
    threshold: float = 0.7
    min_lm_score: int = 3
    frontier: FrontierConfig = FrontierConfig()
    strict_metadata: bool = False
    dedup: DedupPolicy = DedupPolicy()
    workers: int = 1
    timestamps: bool = True

    @property
    def manifest_path(self) -> Path:
        return self.workdir / "manifest.jsonl"

    @property
    def reports_dir(self) -> Path:
        return self.workdir / "reports"

    def input(self, key: str) -> Path | None:
        return self.inputs.get(key)


def _path(value: Any, base: Path) -> Path:
    p = Path(str(value)).expanduser()
    return p if p.is_absolute() else base / p


def _port(obj: Any, base: Path, name: str) -> PortSpec:
    if obj is None:
        return PortSpec()
    if isinstance(obj, str):
        obj = {"url": obj} if obj.startswith(("http://", "https://")) else {"fixture": obj}
    if not isinstance(obj, Mapping):
        raise ConfigError(f"ports.{name} must be a mapping")
    unknown = set(obj) - {"fixture", "url", "model", "timeout_s"}
    if unknown:
        raise ConfigError(f"ports.{name}: unknown keys {sorted(unknown)}")
    fixture = _path(obj["fixture"], base) if obj.get("fixture") else None
    if fixture is not None and obj.get("url"):
        raise ConfigError(f"ports.{name}: give either a fixture or a url, not both")
    return PortSpec(fixture, obj.get("url"), obj.get("model"), float(obj.get("timeout_s", 60.0)))


def _policy(obj: Any) -> tuple[str | None, LabelPolicy]:
    if isinstance(obj, str):
        return obj, policy_by_name(obj)
    if isinstance(obj, Mapping):
        try:
            return None, LabelPolicy(**{k: float(v) for k, v in obj.items()})
        except TypeError as exc:
            raise ConfigError(f"bad policy: {exc}") from None
    raise ConfigError("policy must be a corpus name or {db_min, l_min}")


def _segmenter(obj: Mapping) -> SegmenterConfig:
    obj = dict(obj)
    if "lambda" in obj:
        obj["lam"] = obj.pop("lambda")
    if "min_gap" in obj:
        obj["d"] = obj.pop("min_gap")
    leftovers = set(obj) - {"lam", "d", "min_piano_s", "min_avg"}
    if leftovers:
        _reject("segmenter", leftovers)
    try:
        return SegmenterConfig(
            lam=float(obj.get("lam", 0.5)),
            d=int(obj.get("d", 3)),
            min_piano_s=float(obj.get("min_piano_s", 45.0)),
            min_avg=float(obj.get("min_avg", 0.7)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _reject(section: str, leftovers: Mapping):
    raise ConfigError(f"{section}: unknown keys {sorted(leftovers)}")


def from_mapping(raw: Mapping[str, Any], base_dir: str | Path = ".") -> PipelineConfig:
    base = Path(base_dir)
    raw = dict(raw or {})
    known = {"workdir", "inputs", "ports", "segmenter", "policy", "threshold", "min_lm_score",
             "frontier", "metadata", "dedup", "workers", "timestamps"}
    if set(raw) - known:
        _reject("config", set(raw) - known)

    inputs_raw = raw.get("inputs") or {}
    if set(inputs_raw) - set(INPUT_KEYS):
        _reject("inputs", set(inputs_raw) - set(INPUT_KEYS))
    inputs = {k: _path(v, base) for k, v in inputs_raw.items() if v is not None}

    ports = raw.get("ports") or {}
    if set(ports) - {"scorer", "related", "metadata_lm"}:
        _reject("ports", set(ports) - {"scorer", "related", "metadata_lm"})

    cfg = PipelineConfig(
        workdir=_path(raw.get("workdir", "pianocurate-work"), base),
        inputs=inputs,
        scorer=_port(ports.get("scorer"), base, "scorer"),
        related=_port(ports.get("related"), base, "related"),
        metadata_lm=_port(ports.get("metadata_lm"), base, "metadata_lm"),
        segmenter=_segmenter(raw.get("segmenter") or {}),
        threshold=float(raw.get("threshold", 0.7)),
        min_lm_score=int(raw.get("min_lm_score", 3)),
        workers=int(raw.get("workers", 1)),
        timestamps=bool(raw.get("timestamps", True)),
    )
    if "policy" in raw:
        name, policy = _policy(raw["policy"])
        cfg = replace(cfg, policy_name=name, policy=policy)
    if raw.get("frontier"):
        try:
            cfg = replace(cfg, frontier=FrontierConfig(**raw["frontier"]))
        except TypeError as exc:
            raise ConfigError(f"frontier: {exc}") from None
    if raw.get("metadata"):
        cfg = replace(cfg, strict_metadata=bool(raw["metadata"].get("strict", False)))
    if raw.get("dedup"):
        try:
            cfg = replace(cfg, dedup=DedupPolicy(**raw["dedup"]))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"dedup: {exc}") from None
    check(cfg)
    return cfg


def check(cfg: PipelineConfig) -> None:
    """Reject impossible values and input paths that do not exist."""
    if not 0.0 <= cfg.threshold <= 1.0:
        raise ConfigError(f"threshold must lie in [0, 1], got {cfg.threshold}")
    if not 0 <= cfg.min_lm_score <= 5:
        raise ConfigError(f"min_lm_score must lie in 0-5, got {cfg.min_lm_score}")
    if cfg.workers < 1:
        raise ConfigError(f"workers must be at least 1, got {cfg.workers}")
    if cfg.frontier.budget <= 0:
        raise ConfigError(f"frontier budget must be positive, got {cfg.frontier.budget}")
    missing = [f"inputs.{k} = {p}" for k, p in cfg.inputs.items() if not p.exists()]
    for name in ("scorer", "related", "metadata_lm"):
        spec: PortSpec = getattr(cfg, name)
        if spec.fixture is not None and not spec.fixture.exists():
            missing.append(f"ports.{name}.fixture = {spec.fixture}")
        if spec.url is not None and not spec.model:
            raise ConfigError(f"ports.{name}: an HTTP endpoint needs a model name")
    if missing:
        raise ConfigError("referenced files do not exist: " + "; ".join(missing))


def load(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    text = path.read_text(encoding="utf-8")
    try:
        raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if raw is not None and not isinstance(raw, Mapping):
        raise ConfigError(f"{path}: top level must be a mapping")
    return from_mapping(raw or {}, path.parent)
