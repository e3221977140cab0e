"""Command-line interface: simulate, slam, eval and config dump.

Exit codes: 0 on success, 1 on runtime failure, 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import PipelineConfig, dump_config, load_config
from .errors import BathySlamError, ConfigError
from .pipeline import evaluate_submaps, run_eval, run_simulate, run_slam
from .survey_io import load_submaps, load_survey, save_survey


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="YAML configuration file")
    parser.add_argument("--seed", type=int, help="override the configured global seed")
    parser.add_argument("--threads", type=int, help="worker threads (env BATHY_SLAM_THREADS)")
    parser.add_argument("--verbose", "-v", action="store_true", help="log progress to stderr")


def _resolve_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    threads = args.threads
    if threads is None and os.environ.get("BATHY_SLAM_THREADS"):
        try:
            threads = int(os.environ["BATHY_SLAM_THREADS"])
        except ValueError as exc:
            raise ConfigError("BATHY_SLAM_THREADS must be an integer") from exc
    if threads is not None:
        import dataclasses

        cfg = dataclasses.replace(cfg, threads=threads)
    cfg.validate()
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bathyslam",
        description="Bathymetric submap SLAM: simulate surveys, refine them, "
        "and measure map self-consistency.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a synthetic survey file")
    p_sim.add_argument("--out", type=Path, required=True,
                       help="survey file to write (.bsv binary or .csv)")
    _add_common(p_sim)

    p_slam = sub.add_parser("slam", help="run the full SLAM pipeline on a survey")
    p_slam.add_argument("survey", type=Path, help="survey file")
    p_slam.add_argument("--out", type=Path, required=True, help="output directory")
    _add_common(p_slam)

    p_eval = sub.add_parser("eval", help="compute the consistency metric only")
    p_eval.add_argument("survey", type=Path,
                        help="survey file (.bsv/.csv) or submap-set map file (.bsm)")
    p_eval.add_argument("--out", type=Path, help="optional JSON report path")
    _add_common(p_eval)

    p_cfg = sub.add_parser("config", help="configuration utilities")
    cfg_sub = p_cfg.add_subparsers(dest="config_command", required=True)
    p_dump = cfg_sub.add_parser("dump", help="print the configuration with defaults")
    p_dump.add_argument("--out", type=Path, help="write to a file instead of stdout")
    _add_common(p_dump)

    return parser


def _cmd_simulate(args) -> int:
    cfg = _resolve_config(args)
    survey = run_simulate(cfg)
    save_survey(args.out, survey)
    print(f"wrote {len(survey.pings)} pings to {args.out}")
    return 0


def _cmd_slam(args) -> int:
    cfg = _resolve_config(args)
    survey = load_survey(args.survey)
    result = run_slam(survey, cfg, out_dir=args.out)
    r = result.report
    print(r.to_json())
    print(
        f"consistency rms: {r.initial_rms:.4f} -> {r.optimized_rms:.4f} "
        f"({r.submap_count} submaps, {r.lc_edge_count} loop closures); "
        f"artifacts in {args.out}",
        file=sys.stderr,
    )
    return 0


def _cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    if args.survey.suffix.lower() == ".bsm":
        cmap = evaluate_submaps(load_submaps(args.survey), cfg)
    else:
        cmap = run_eval(load_survey(args.survey), cfg)
    payload = {
        "rms": None if cmap.zero_coverage else cmap.rms,
        "covered_cells": cmap.covered_cells,
        "zero_coverage": cmap.zero_coverage,
    }
    text = json.dumps(payload, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return 0


def _cmd_config_dump(args) -> int:
    cfg = _resolve_config(args)
    text = dump_config(cfg)
    if args.out:
        args.out.write_text(text)
    else:
        print(text, end="")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "slam":
            return _cmd_slam(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "config":
            return _cmd_config_dump(args)
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except BathySlamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
