"""Command-line surface: one subcommand per pipeline stage.

    wearanom simulate --config scenario.json --workdir out/
    wearanom label|features|train|detect|evaluate|explain|report ...

``--config`` points at a JSON document mirroring PipelineConfig;
``--workdir``, ``--seed``, ``--percentile``, and ``--strict`` override
the corresponding config fields.
"""

from __future__ import annotations

import argparse
import json
import sys

from .pipeline import STAGES, MissingArtifactError, PipelineConfig, run_stage


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wearanom",
        description="Explainable anomaly detection for wearable-derived daily features.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", help="JSON pipeline config file")
        p.add_argument("--workdir", help="artifact directory (overrides config)")
        p.add_argument("--seed", type=int, help="global seed (overrides config)")
        p.add_argument("--percentile", type=float,
                       help="detection threshold percentile (overrides config)")
        p.add_argument("--strict", action="store_true",
                       help="treat plausibility warnings as hard parse errors")
        p.add_argument("--cohort", help="cohort JSONL path (overrides config)")
    return parser


def load_config(args: argparse.Namespace) -> PipelineConfig:
    doc = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    if args.workdir:
        doc["workdir"] = args.workdir
    if args.seed is not None:
        doc["seed"] = args.seed
        doc.setdefault("scenario", {}).pop("seed", None)
        doc.setdefault("train", {}).pop("seed", None)
    if args.percentile is not None:
        doc["percentile"] = args.percentile
    if args.strict:
        doc["strict"] = True
    if args.cohort:
        doc["cohort_path"] = args.cohort
    return PipelineConfig.from_dict(doc)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
    except (OSError, ValueError, TypeError) as exc:
        print(f"wearanom: bad config: {exc}", file=sys.stderr)
        return 2
    try:
        result = run_stage(args.command, cfg)
    except MissingArtifactError as exc:
        print(f"wearanom {args.command}: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"wearanom {args.command}: {exc}", file=sys.stderr)
        return 1
    print(json.dumps({"command": args.command, **result}, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
