"""Standalone figure command over a qsmooth --out directory."""

from __future__ import annotations

import argparse
import os
import sys

from .plots import PlotJob, plot_mse, plot_tracking
from .readers import SchemaError


def build_parser():
    parser = argparse.ArgumentParser(
        prog="qsmooth-report",
        description="Render figures from qsmooth CSV outputs (SVG by default).")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tracking", help="truth vs estimator means with sigma bands")
    p.add_argument("--dir", required=True, help="qsmooth estimate output directory")
    p.add_argument("--out", required=True, help="figure path (.svg or .png)")
    p.add_argument("--methods", default="filter,smooth")
    p.add_argument("--t-min", type=float, default=None)
    p.add_argument("--t-max", type=float, default=None)
    p.add_argument("--band", type=float, default=2.0, help="band half-width in sigmas")
    p.set_defaults(kind="tracking")

    p = sub.add_parser("mse", help="ensemble MSE comparison")
    p.add_argument("--summary", required=True, help="ensemble summary.csv")
    p.add_argument("--out", required=True)
    p.add_argument("--log", action="store_true")
    p.add_argument("--t-min", type=float, default=None)
    p.add_argument("--t-max", type=float, default=None)
    p.set_defaults(kind="mse")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.kind == "tracking":
            job = PlotJob(run_dir=args.dir, output=args.out,
                          methods=tuple(m.strip() for m in args.methods.split(",") if m.strip()),
                          t_min=args.t_min, t_max=args.t_max, band_sigmas=args.band)
            path = plot_tracking(job)
        else:
            path = plot_mse(args.summary, args.out, log_scale=args.log,
                            t_min=args.t_min, t_max=args.t_max)
    except (SchemaError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {os.path.abspath(path)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
