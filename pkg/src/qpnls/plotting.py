"""PNG figures rendered from the files the CLI writes."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .sweep import REASONS  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def residual_curve(trace_csv, png) -> Path:
    with open(trace_csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    stage = [int(r["stage"]) for r in rows]
    res = np.array([float(r["residual"]) for r in rows])
    corr = np.array([float(r["correction"]) for r in rows])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.semilogy(stage, np.where(res > 0, res, np.nan), "o-", label="residual")
    ax.semilogy(stage[1:], np.where(corr[1:] > 0, corr[1:], np.nan), "s--", label="correction")
    ax.set_xlabel("stage r")
    ax.set_ylabel("norm")
    ax.set_xticks(stage)
    ax.legend()
    return _save(fig, png)


def survival_bars(summary_json, png) -> Path:
    with open(summary_json) as fh:
        summary = json.load(fh)
    frac = summary["surviving_fraction"]
    counts = summary["counts"]
    fig, (a0, a1) = plt.subplots(1, 2, figsize=(8, 3.5))
    a0.bar(range(1, len(frac) + 1), frac)
    a0.set_ylim(0, 1)
    a0.set_xlabel("stage r")
    a0.set_ylabel("surviving fraction")
    a1.bar(range(len(REASONS)), [counts.get(k, 0) for k in REASONS])
    a1.set_xticks(range(len(REASONS)))
    a1.set_xticklabels(REASONS, rotation=30, ha="right")
    a1.set_ylabel("samples")
    return _save(fig, png)


def verdict_map(heatmap_dat, png) -> Path:
    rows = [line.split() for line in Path(heatmap_dat).read_text().splitlines() if line and not line.startswith("#")]
    ax1 = np.array(rows[0][1:], dtype=float)
    ax0 = np.array([r[0] for r in rows[1:]], dtype=float)
    codes = np.array([r[1:] for r in rows[1:]], dtype=int)
    fig, ax = plt.subplots(figsize=(5, 4))
    cmap = plt.get_cmap("tab10", len(REASONS))
    im = ax.pcolormesh(ax1, ax0, codes, cmap=cmap, vmin=-0.5, vmax=len(REASONS) - 0.5, shading="nearest")
    bar = fig.colorbar(im, ax=ax, ticks=range(len(REASONS)))
    bar.ax.set_yticklabels(REASONS)
    return _save(fig, png)


def field_image(field_dat, png) -> Path:
    data = np.loadtxt(field_dat, comments="#")
    t, x = data[:, 0], data[:, 1]
    nt = np.unique(t).size
    nx = np.unique(x).size
    re = data[:, 2].reshape(nt, nx)
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(re.T, origin="lower", aspect="auto", extent=(t.min(), t.max(), x.min(), x.max()))
    ax.set_xlabel("t")
    ax.set_ylabel("x")
    fig.colorbar(im, ax=ax, label="Re u")
    return _save(fig, png)
