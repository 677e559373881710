"""Command line entry point: ``pianocurate <stage> [options]``.

Exit status is 0 when a stage completes (individual entries may still have
failed; see its report), 1 when every attempted entry failed, and 2 on a
systemic error such as a missing input or a bad configuration.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from ..errors import ConfigError, PipelineError
from ..pseudolabel import LabelPolicy, policy_by_name
from ..segmenter import SegmenterConfig
from . import config as config_mod
from .stages import EXIT_SYSTEMIC, FULL_RUN, STAGES, StageContext, run_stage

log = logging.getLogger("pianocurate")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML or JSON pipeline config")
    p.add_argument("--workdir", type=Path, help="override the configured work directory")
    p.add_argument("--force", action="store_true", help="reprocess entries already done")
    p.add_argument("--workers", type=int, help="worker pool size")
    p.add_argument("--lambda", dest="lam", type=float, help="segmenter score threshold")
    p.add_argument("--min-gap", dest="d", type=int, help="segmenter d, in windows")
    p.add_argument("--min-piano-s", type=float, help="minimum piano segment length (s, strict)")
    p.add_argument("--min-avg", type=float, help="minimum segment average score")
    p.add_argument("--policy", help="pseudo-label corpus policy name")
    p.add_argument("--db-min", type=float, help="pseudo-label energy threshold (dBFS)")
    p.add_argument("--l-min", type=float, help="pseudo-label minimum region length (s)")
    p.add_argument("--threshold", type=float, help="file classification threshold T")
    p.add_argument("--no-timestamps", action="store_true", help="leave timestamps out of the manifest")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pianocurate", description="Solo-piano audio curation pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)
    for stage in STAGES:
        _common(sub.add_parser(stage, help=f"run the {stage} stage"))
    _common(sub.add_parser("run", help="run " + " -> ".join(FULL_RUN)))
    demo = sub.add_parser("demo", help="write a self-contained synthetic fixture set and its config")
    demo.add_argument("directory", type=Path)
    demo.add_argument("--recordings", type=int, default=10)
    demo.add_argument("--seed", type=int, default=0)
    return parser


def resolve_config(args: argparse.Namespace) -> config_mod.PipelineConfig:
    cfg = config_mod.load(args.config) if args.config else config_mod.from_mapping({}, Path.cwd())
    changes = {}
    if args.workdir is not None:
        changes["workdir"] = args.workdir
    if args.workers is not None:
        changes["workers"] = args.workers
    if args.threshold is not None:
        changes["threshold"] = args.threshold
    if args.no_timestamps:
        changes["timestamps"] = False
    seg = {k: getattr(args, k) for k in ("lam", "d", "min_piano_s", "min_avg") if getattr(args, k) is not None}
    if seg:
        base = cfg.segmenter
        try:
            changes["segmenter"] = SegmenterConfig(**{**base.__dict__, **seg})
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    policy, name = cfg.policy, cfg.policy_name
    if args.policy:
        policy, name = policy_by_name(args.policy), args.policy
    if args.db_min is not None or args.l_min is not None:
        policy = LabelPolicy(
            db_min=args.db_min if args.db_min is not None else policy.db_min,
            l_min=args.l_min if args.l_min is not None else policy.l_min,
        )
        name = None
    changes.update(policy=policy, policy_name=name)
    cfg = replace(cfg, **changes)
    config_mod.check(cfg)
    return cfg


def _print_report(report) -> None:
    data = report.to_json()
    line = {"stage": data["stage"], **data["counts"], "elapsed_s": data["elapsed_s"]}
    print(json.dumps(line))
    for fid, why in data["failed"].items():
        print(f"  failed {fid}: {why}", file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * getattr(args, "verbose", 0)
    logging.basicConfig(level=max(level, logging.DEBUG), format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "demo":
            from .demo import write_demo

            path = write_demo(args.directory, n_recordings=args.recordings, seed=args.seed)
            print(str(path))
            return 0
        cfg = resolve_config(args)
        ctx = StageContext(cfg, force=args.force)
        stages = FULL_RUN if args.command == "run" else (args.command,)
        code = 0
        for stage in stages:
            report = run_stage(stage, ctx)
            _print_report(report)
            code = max(code, report.exit_code)
        return code
    except PipelineError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SYSTEMIC


if __name__ == "__main__":
    sys.exit(main())
