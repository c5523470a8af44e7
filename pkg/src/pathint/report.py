"""Delimited/JSON report writers and figure rendering for the CLI.

All floats are written with repr-faithful precision (%.17g) and JSON objects
use sorted keys, so repeated runs with the same inputs produce byte-identical
text outputs.  Figures are rendered with the Agg backend and stripped of
volatile metadata.
"""

from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .integration import ItoLadderResult
from .paths import SamplePath
from .quadvar import QVLadder

SCHEMA_VERSION = 1

__all__ = [
    "SCHEMA_VERSION",
    "ensure_out_dir",
    "write_qv_csv",
    "write_integral_csvs",
    "write_study_csv",
    "write_json",
    "write_summary",
    "fig_path",
    "fig_level_decay",
    "fig_rate_fit",
]


def ensure_out_dir(out: str) -> str:
    os.makedirs(out, exist_ok=True)
    return out


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return "%.17g" % float(x)
    return str(x)


def _write_rows(fp: str, header, rows) -> None:
    with open(fp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def _sample_indices(m: int, cap: int) -> np.ndarray:
    if m <= cap:
        return np.arange(m)
    return np.unique(np.round(np.linspace(0, m - 1, cap)).astype(int))


def write_qv_csv(fp: str, path: SamplePath, qv: QVLadder, cap: int = 513) -> None:
    """Covariation curves as level,threshold,i,j,t,value rows (time-capped)."""
    idx = _sample_indices(path.n_points, cap)
    times = path.times[idx]
    rows = []
    for level, lv in enumerate(qv.levels):
        sub = lv.cov[idx]
        for i in range(path.d):
            for j in range(path.d):
                for t, v in zip(times, sub[:, i, j]):
                    rows.append((level, lv.threshold, i, j, t, v))
    _write_rows(fp, ["level", "threshold", "i", "j", "t", "value"], rows)


def write_integral_csvs(
    out: str, path: SamplePath, result: ItoLadderResult, cap: int = 513
) -> list:
    """Integral curves as level,t,value rows; one file per matrix entry if d > 1.

    Returns the list of files written (relative names).
    """
    idx = _sample_indices(path.n_points, cap)
    times = path.times[idx]
    matrix = result.curves[0].ndim == 3
    written = []

    def dump(name: str, per_level_scalar) -> None:
        rows = []
        for level, curve in enumerate(per_level_scalar):
            for t, v in zip(times, curve):
                rows.append((level, t, v))
        _write_rows(os.path.join(out, name), ["level", "t", "value"], rows)
        written.append(name)

    if not matrix:
        dump("integral_curves.csv", [c[idx] for c in result.curves])
    elif path.d == 1:
        dump("integral_curves.csv", [c[idx, 0, 0] for c in result.curves])
    else:
        for i in range(path.d):
            for j in range(path.d):
                dump(
                    f"integral_curves_i{i}_j{j}.csv",
                    [c[idx, i, j] for c in result.curves],
                )
    return written


def write_study_csv(fp: str, thresholds, gaps) -> None:
    rows = [(lv, th, g) for lv, (th, g) in enumerate(zip(thresholds, gaps))]
    _write_rows(fp, ["level", "threshold", "gap"], rows)


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def write_json(fp: str, payload: dict) -> None:
    with open(fp, "w") as fh:
        json.dump(_jsonable(payload), fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_summary(out: str, summary: dict) -> str:
    summary = dict(summary)
    summary["schema_version"] = SCHEMA_VERSION
    fp = os.path.join(out, "summary.json")
    write_json(fp, summary)
    return fp


_SAVE_KW = {"dpi": 110, "metadata": {"Date": None}}


def fig_path(fp: str, path: SamplePath, cap: int = 4097) -> None:
    """Line plot of every coordinate against time."""
    idx = _sample_indices(path.n_points, cap)
    fig, ax = plt.subplots(figsize=(7, 4))
    for i in range(path.d):
        ax.plot(path.times[idx], path.values[idx, i], lw=0.9, label=f"x{i + 1}")
    ax.set_xlabel("t")
    ax.set_ylabel("value")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(fp, **_SAVE_KW)
    plt.close(fig)


def fig_level_decay(fp: str, thresholds, values, ylabel: str, title: str) -> None:
    """Log-log decay plot of a per-level diagnostic against the thresholds."""
    thresholds = np.asarray(thresholds, dtype=float)
    values = np.asarray(values, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 4))
    pos = values > 0
    ax.loglog(thresholds[pos], values[pos], "o-", ms=4)
    ax.invert_xaxis()
    ax.set_xlabel("threshold")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(fp, **_SAVE_KW)
    plt.close(fig)


def fig_rate_fit(fp: str, result: ItoLadderResult) -> None:
    """Residual decay against the scaled-threshold abscissa with the fitted line."""
    keep = result.residual_per_level > 0
    keep[-1] = False
    fig, ax = plt.subplots(figsize=(6, 4))
    x = result.abscissa[keep]
    y = np.log(result.residual_per_level[keep])
    ax.plot(x, y, "o", ms=4, label="levels")
    if np.isfinite(result.rate_slope) and x.size:
        xs = np.linspace(x.min(), x.max(), 32)
        ax.plot(
            xs,
            result.rate_slope * xs + result.rate_intercept,
            "-",
            label=f"slope {result.rate_slope:.3f}",
        )
    ax.set_xlabel("log(threshold * sqrt(log level))")
    ax.set_ylabel("log residual")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(fp, **_SAVE_KW)
    plt.close(fig)
