"""Command-line entry points for the batch pipeline."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .pipeline import STAGES, StageFailure, run_pipeline

ENV_OUTDIR = "AMDIQCC_OUTPUT_DIR"


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", default=None, help="config file (sections [protocol], [security], [simulator], [pipeline])")
    p.add_argument("--output", default=None,
                   help=f"run directory (default ${ENV_OUTDIR} or ./run)")
    p.add_argument("--seed", type=int, default=None, help="override simulator seed")
    p.add_argument("--loss-db", default=None,
                   help="override per-user loss, single value or comma triple")
    p.add_argument("--sequences", type=int, default=None,
                   help="override number of simulated sequences")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="amdiqcc",
        description="Three-user asynchronous MDI conferencing: simulate, pair, "
                    "compensate, sift and analyze detection-event streams.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        p = sub.add_parser(name, help=f"run the {name} stage")
        _add_common(p)
        if name == "analyze":
            p.add_argument("--input", default=None,
                           help="counts document (default: <output>/counts.counts)")
    p = sub.add_parser("run-all", help="run every stage in order")
    _add_common(p)
    p.add_argument("--stages", default=",".join(STAGES),
                   help="comma-separated subset of stages to run")
    p.add_argument("--segments", type=int, default=1,
                   help="split the run into N memory-bounded segments")
    return parser


def _default_config(outdir: Path) -> Path:
    path = outdir / "default.cfg"
    if not path.exists():
        path.write_text(
            "[protocol]\n[security]\n[simulator]\n[pipeline]\n"
        )
    return path


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    outdir = Path(args.output or os.environ.get(ENV_OUTDIR, "run"))
    outdir.mkdir(parents=True, exist_ok=True)
    config = Path(args.config) if args.config else _default_config(outdir)

    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.loss_db is not None:
        parts = [float(x) for x in args.loss_db.replace(",", " ").split()]
        overrides["loss_db"] = tuple(parts * 3 if len(parts) == 1 else parts)
    if args.sequences is not None:
        overrides["n_sequences"] = args.sequences

    if args.command == "run-all":
        stages = [s.strip() for s in args.stages.split(",") if s.strip()]
    else:
        stages = [args.command]
    counts_path = getattr(args, "input", None)
    try:
        if getattr(args, "segments", 1) > 1:
            from .pipeline import run_segmented

            manifest = run_segmented(config, outdir, args.segments,
                                     overrides=overrides)
        else:
            manifest = run_pipeline(config, stages, outdir,
                                    counts_path=counts_path, overrides=overrides)
    except StageFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if "analyze" in stages and "analyze" in manifest:
        a = manifest["analyze"]
        print(f"n_Z = {a['n_z']}")
        print(f"Y111Z_lower = {a['y111z_lower']:.4e}")
        print(f"e111PZ_upper = {a['e111pz_upper']:.4f}")
        print(f"L_min = {a['l_min']:.4e} bits")
        print(f"rate = {a['rate_bpp']:.4e} bits/pulse")
    else:
        done = ", ".join(s for s in stages)
        print(f"completed: {done} -> {outdir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
