"""Training curves from flowlab metrics.csv files.

One panel: windowed sample mean reward per run over training rounds, with
the shared target mean as a dashed reference line. Inputs are read-only;
the output is a raster image with fixed pixel dimensions.

    flowplots --in runs/tb/metrics.csv:TB --in runs/gtb/metrics.csv:GTB \\
        --out curves.png [--ymax 25]
"""

import argparse
import csv
import math
import sys
from dataclasses import dataclass

import numpy as np

METRICS_HEADER = (
    "round,n_seen,loss,logZ,sample_mean_reward,target_mean_reward,"
    "rel_mean_error,ad_statistic,modes_found,diversity"
).split(",")

FIGSIZE = (8.0, 4.5)
DPI = 120


class CurveError(ValueError):
    """Bad input file or inconsistent inputs."""


@dataclass(frozen=True)
class CurveSpec:
    inputs: tuple  # of (metrics_csv_path, label)
    out_path: str
    ymax: float = None


@dataclass(frozen=True)
class Curve:
    label: str
    rounds: np.ndarray
    sample_mean: np.ndarray
    target_mean: float


def read_curve(path, label):
    """One metrics.csv -> Curve. The header must match the contract exactly;
    the body must be non-empty and carry one target mean throughout."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise CurveError(f"{path}: empty file, expected a metrics.csv header")
        for i, (got, want) in enumerate(zip(header, METRICS_HEADER)):
            if got != want:
                raise CurveError(
                    f"{path}: header column {i + 1} is {got!r}, expected {want!r}"
                )
        if len(header) != len(METRICS_HEADER):
            raise CurveError(
                f"{path}: header has {len(header)} columns, "
                f"expected {len(METRICS_HEADER)}"
            )
        rows = [row for row in reader if row]
    if not rows:
        raise CurveError(f"{path}: no metric rows")
    cols = {name: i for i, name in enumerate(METRICS_HEADER)}
    rounds = np.array([int(r[cols["round"]]) for r in rows])
    sample = np.array([float(r[cols["sample_mean_reward"]]) for r in rows])
    targets = np.array([float(r[cols["target_mean_reward"]]) for r in rows])
    first = float(targets[0])
    if not np.all(_close(targets, first)):
        raise CurveError(f"{path}: target_mean_reward varies between rows")
    return Curve(label, rounds, sample, first)


def _close(a, b):
    return np.isclose(a, b, rtol=1e-9, atol=0.0)


def load_curves(spec):
    """All inputs as Curves, with the cross-file target agreement checked."""
    if not spec.inputs:
        raise CurveError("need at least one --in metrics.csv:label")
    curves = [read_curve(path, label) for path, label in spec.inputs]
    first = curves[0]
    for c in curves[1:]:
        if not _close(c.target_mean, first.target_mean):
            raise CurveError(
                "target_mean_reward disagrees between inputs: "
                f"{first.target_mean:.12g} ({first.label}) vs "
                f"{c.target_mean:.12g} ({c.label})"
            )
    return curves


def render_curves(spec):
    """Render the curves spec describes and return the output path. Nothing
    is written until every input has validated."""
    curves = load_curves(spec)

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=FIGSIZE, dpi=DPI)
    try:
        for c in curves:
            ax.plot(c.rounds, c.sample_mean, label=c.label, linewidth=1.4)
        ax.axhline(
            curves[0].target_mean, linestyle="--", color="black",
            linewidth=1.0, label="target mean",
        )
        ax.set_xlabel("round")
        ax.set_ylabel("sample mean reward")
        if spec.ymax is not None:
            ax.set_ylim(top=spec.ymax)
        ax.legend(loc="lower right", fontsize=9)
        fig.tight_layout()
        fig.savefig(spec.out_path, dpi=DPI)
    finally:
        plt.close(fig)
    return spec.out_path


def _parse_input(text):
    path, sep, label = text.rpartition(":")
    if not sep or not path or not label:
        raise CurveError(f"--in {text!r} is not metrics.csv:label")
    return path, label


def build_parser():
    parser = argparse.ArgumentParser(
        prog="flowplots", description="Plot flowlab training curves"
    )
    parser.add_argument(
        "--in", dest="inputs", action="append", default=[],
        metavar="PATH:LABEL", help="metrics.csv and its legend label; repeatable",
    )
    parser.add_argument("--out", required=True, help="output raster image path")
    parser.add_argument("--ymax", type=float, default=None, help="y-axis cap")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.ymax is not None and not math.isfinite(args.ymax):
            raise CurveError("--ymax must be finite")
        spec = CurveSpec(
            inputs=tuple(_parse_input(t) for t in args.inputs),
            out_path=args.out,
            ymax=args.ymax,
        )
        out = render_curves(spec)
    except (CurveError, OSError) as err:
        sys.stderr.write(f"flowplots: error: {err}\n")
        return 2
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
