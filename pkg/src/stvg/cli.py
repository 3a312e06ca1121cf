"""Command-line entry point: ``stvg run | eval | study``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .core import LRAConfig, PipelineConfig
from .errors import ParseError, StvgError
from .evalkit import evaluate_results
from .pipeline import STUDIES, ConfigError, RunConfig, run_pipeline, run_study

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MAJORITY_FAILURE = 3


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", required=True, type=Path, help="dataset manifest JSON")
    p.add_argument("--backend", default="toy:0", help="toy:SEED or scripted:DIR (default: toy:0)")
    p.add_argument("--out", type=Path, default=Path("stvg_out"), help="output directory")
    p.add_argument("--cache-dir", type=Path, default=None, help="overrides $STVG_CACHE_DIR")
    p.add_argument("--frames", type=int, default=20, help="frames sampled per clip (default 20)")
    p.add_argument("--k", type=int, default=7, help="top-K frames for the temporal span (default 7)")
    p.add_argument("--lra-steps", type=int, default=10, help="prompt-tuning iterations (default 10)")
    p.add_argument("--lra-lr", type=float, default=1e-2, help="prompt-tuning step size (default 0.01)")
    p.add_argument("--no-dsth", action="store_true", help="disable both spatial and temporal prompts")
    p.add_argument("--no-sp", action="store_true", help="disable the spatial prompt only")
    p.add_argument("--no-tp", action="store_true", help="disable the temporal prompt only")
    p.add_argument("--no-tas", action="store_true", help="disable temporal-augmented assembling")
    p.add_argument("--no-gti", action="store_true", help="use the last special token instead of the most activated")
    p.add_argument("--decompositions", type=Path, default=None,
                   help="JSON fixture mapping query_id -> {attribute, action}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stvg", description="Zero-shot spatio-temporal video grounding")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="ground every manifest entry and evaluate")
    _add_common(run)
    run.add_argument("--heatmaps", action="store_true", help="write per-frame PGM heatmaps")
    run.add_argument("--workers", type=int, default=1)

    ev = sub.add_parser("eval", help="recompute metrics from a results file")
    ev.add_argument("--results", required=True, type=Path)

    st = sub.add_parser("study", help="grounding-token and temporal-consistency analyses")
    st.add_argument("kind", choices=STUDIES)
    _add_common(st)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    try:
        pipeline = PipelineConfig(n_frames_sampled=args.frames, top_k_frames=args.k,
                                  lra=LRAConfig(n_ep=args.lra_steps, step_size=args.lra_lr))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(
        manifest=args.manifest,
        backend=args.backend,
        out_dir=args.out,
        pipeline=pipeline,
        enable_gti_selection=not args.no_gti,
        enable_spatial_prompt=not (args.no_dsth or args.no_sp),
        enable_temporal_prompt=not (args.no_dsth or args.no_tp),
        enable_tas=not args.no_tas,
        cache_dir=args.cache_dir,
        heatmaps=getattr(args, "heatmaps", False),
        workers=getattr(args, "workers", 1),
        decompositions=args.decompositions,
    )


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "eval":
            summary = evaluate_results(args.results)
            print(json.dumps(summary.to_json(), indent=1))
            return EXIT_OK
        cfg = config_from_args(args)
        if args.command == "study":
            path = run_study(args.kind, cfg)
            print(path)
            return EXIT_OK
        outcome = run_pipeline(cfg)
    except (ConfigError, ParseError) as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    except StvgError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG
    report = {"results": str(outcome.results_path), "n_samples": outcome.n_total, "n_failed": outcome.n_failed}
    if outcome.summary is not None:
        report.update(outcome.summary.to_json())
    print(json.dumps(report, indent=1))
    return EXIT_MAJORITY_FAILURE if outcome.majority_failed else EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
