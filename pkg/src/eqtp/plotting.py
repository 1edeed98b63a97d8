"""Success-rate-vs-steps curves from evaluation report CSVs."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

REQUIRED = ("step", "score")
SERIES_KEYS = ("model", "augment")


class PlotError(ValueError):
    pass


def read_curves(paths) -> dict[str, list[tuple[int, float]]]:
    """Series label -> sorted (step, score) points.

    Rows are grouped by the ``model``/``augment`` columns when present. With
    several files and no such columns the file stem names the series.
    """
    if isinstance(paths, (str, Path)):
        paths = [paths]
    curves: dict[str, dict[int, float]] = {}
    for path in paths:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise PlotError(f"{path}: {e.strerror or e}") from e
        lines = text.splitlines()
        if not any(ln.strip() for ln in lines):
            raise PlotError(f"{path}: empty CSV")
        reader = csv.reader(lines)
        header = [h.strip() for h in next(reader)]
        missing = [c for c in REQUIRED if c not in header]
        if missing:
            raise PlotError(f"{path}:1: missing column(s) {', '.join(missing)}")
        col = {h: i for i, h in enumerate(header)}
        keys = [k for k in SERIES_KEYS if k in col]
        rows = 0
        for line_no, rec in enumerate(reader, 2):
            if not rec or not any(f.strip() for f in rec):
                continue
            if len(rec) != len(header):
                raise PlotError(f"{path}:{line_no}: expected {len(header)} fields, got {len(rec)}")
            try:
                step = int(rec[col["step"]])
                score = float(rec[col["score"]])
            except ValueError as e:
                raise PlotError(f"{path}:{line_no}: {e}") from e
            if step < 0 or not math.isfinite(score) or not 0.0 <= score <= 1.0:
                raise PlotError(f"{path}:{line_no}: step must be >= 0 and score in [0, 1]")
            parts = [rec[col[k]].strip() for k in keys if rec[col[k]].strip()]
            label = "/".join(parts) if parts else (path.stem if len(paths) > 1 else "score")
            series = curves.setdefault(label, {})
            if step in series and series[step] != score:
                raise PlotError(f"{path}:{line_no}: conflicting scores for step {step} in series {label!r}")
            series[step] = score
            rows += 1
        if rows == 0:
            raise PlotError(f"{path}: no data rows")
    return {k: sorted(v.items()) for k, v in curves.items()}


def resample(curves: dict[str, list[tuple[int, float]]]) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """All series on the union of their steps; linear in between, NaN outside a series' range."""
    grid = np.array(sorted({s for pts in curves.values() for s, _ in pts}), dtype=np.int64)
    out = {}
    for label, pts in curves.items():
        xs = np.array([p[0] for p in pts], dtype=float)
        ys = np.array([p[1] for p in pts], dtype=float)
        v = np.interp(grid.astype(float), xs, ys)
        v[(grid < xs[0]) | (grid > xs[-1])] = np.nan
        out[label] = v
    return grid, out


def write_resampled(path: str | Path, grid: np.ndarray, series: dict[str, np.ndarray]) -> None:
    labels = list(series)
    with open(path, "w", newline="") as fp:
        w = csv.writer(fp)
        w.writerow(["step"] + labels)
        for i, s in enumerate(grid):
            w.writerow([int(s)] + ["" if np.isnan(series[k][i]) else f"{series[k][i]:.4f}" for k in labels])


def plot_curves(csv_paths, out: str | Path, title: str = "") -> tuple[Path, Path]:
    """Render the curves to ``out`` (PNG) and the resampled table next to it."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    curves = read_curves(csv_paths)
    grid, series = resample(curves)
    out = Path(out)
    table = out.with_suffix(".csv")
    if table == Path(csv_paths if isinstance(csv_paths, (str, Path)) else csv_paths[0]):
        table = out.with_name(out.stem + "_resampled.csv")
    fig, ax = plt.subplots(figsize=(5.0, 3.4), dpi=120)
    for label, pts in curves.items():
        xs, ys = zip(*pts)
        ax.plot(xs, ys, marker="o", markersize=3 if len(xs) > 1 else 5, linewidth=1.5, label=label)
    ax.set_xlabel("training steps")
    ax.set_ylabel("success rate")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(alpha=0.3)
    if len(curves) > 1:
        ax.legend(frameon=False)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out, metadata={"Software": None})
    plt.close(fig)
    write_resampled(table, grid, series)
    return out, table
