"""Matplotlib renderings of report tables.

Figures are a convenience layer on top of the CSVs, not the data contract:
every plot here can be regenerated from the delimited output alone. The Agg
backend keeps rendering headless. BER values of exactly zero are floored to
half a count for log-scale display only; the CSVs keep the true zeros.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .report import UNIT_COLUMNS
from .sweep import SweepResult

_DPI = 150


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=_DPI, bbox_inches="tight")
    plt.close(fig)
    return path


def _ber_floor(est) -> float:
    return est.ber if est.ber > 0 else 0.5 / est.n_bits


def _ratio_or_nan(rv) -> float:
    if rv is None or rv.is_infinite:
        return np.nan
    return rv.value


def render_characterize(times, cdf_empirical, cdf_analytic, path) -> Path:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(times, cdf_empirical, lw=1.4, label="simulated")
    if cdf_analytic is not None:
        ax.plot(times, cdf_analytic, lw=1.0, ls="--", label="analytic")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("fraction absorbed")
    ax.set_ylim(bottom=0)
    ax.legend(frameon=False)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def render_coefficients(resp, path) -> Path:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    k = np.arange(1, resp.L + 1)
    ax.bar(k, resp.h, width=0.8)
    ax.set_xlabel("slot index k")
    ax.set_ylabel("h_k")
    ax.set_title(f"t_s = {resp.t_s} s ({resp.source})")
    ax.grid(alpha=0.3, axis="y")
    return _save(fig, path)


def render_sweep_curve(result: SweepResult, path) -> Path:
    """1-D sweep: BER on a log axis with CI whiskers, SINAR on a twin axis,
    and the no-plane benchmark as a horizontal reference when present."""
    (axis, _), = result.spec.axes
    cells = sorted(result.ok_cells(), key=lambda c: c.params[axis])
    x = np.array([c.params[axis] for c in cells])
    ber = np.array([_ber_floor(c.ber) for c in cells])
    lo = np.array([max(c.ber.ci95[0], 0.1 / c.ber.n_bits) for c in cells])
    hi = np.array([max(c.ber.ci95[1], 0.1 / c.ber.n_bits) for c in cells])

    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    ax.errorbar(x, ber, yerr=np.vstack([np.maximum(ber - lo, 0), hi - ber]),
                fmt="o-", ms=3.5, lw=1.2, capsize=2, label="BER")
    bench = result.benchmark()
    if bench is not None and bench.status == "ok":
        ax.axhline(_ber_floor(bench.ber), color="0.35", ls="--", lw=1.0,
                   label="no plane")
    ax.set_yscale("log")
    ax.set_xlabel(UNIT_COLUMNS[axis])
    ax.set_ylabel("BER")
    ax.grid(alpha=0.3, which="both")

    sin = np.array([_ratio_or_nan(c.sinar) for c in cells])
    if np.isfinite(sin).any():
        ax2 = ax.twinx()
        ax2.plot(x, sin, color="tab:red", lw=1.2, marker="s", ms=3,
                 label="SINAR")
        ax2.set_ylabel("SINAR", color="tab:red")
        ax2.tick_params(axis="y", labelcolor="tab:red")
    ax.legend(frameon=False, loc="best")
    return _save(fig, path)


def _grid_matrix(result: SweepResult, value_of) -> tuple:
    (ax0, vals0), (ax1, vals1) = result.spec.axes
    index0 = {v: i for i, v in enumerate(vals0)}
    index1 = {v: i for i, v in enumerate(vals1)}
    mat = np.full((len(vals0), len(vals1)), np.nan)
    for cell in result.ok_cells():
        mat[index0[cell.params[ax0]], index1[cell.params[ax1]]] = \
            value_of(cell)
    return ax0, np.asarray(vals0, float), ax1, np.asarray(vals1, float), mat


def render_sweep_heatmaps(result: SweepResult, stem) -> list[Path]:
    """2-D sweep: one heatmap of log10(BER) and one of SINAR.

    Skipped cells stay blank. Rows follow the first axis, columns the second.
    """
    stem = Path(stem)
    written = []
    for suffix, value_of, label in (
            ("ber", lambda c: np.log10(_ber_floor(c.ber)), "log10(BER)"),
            ("sinar", lambda c: _ratio_or_nan(c.sinar), "SINAR")):
        ax0, v0, ax1, v1, mat = _grid_matrix(result, value_of)
        fig, ax = plt.subplots(figsize=(6.6, 4.6))
        mesh = ax.pcolormesh(v1, v0, np.ma.masked_invalid(mat),
                             shading="nearest", cmap="viridis")
        fig.colorbar(mesh, ax=ax, label=label)
        ax.set_xlabel(UNIT_COLUMNS[ax1])
        ax.set_ylabel(UNIT_COLUMNS[ax0])
        written.append(_save(fig, stem.with_name(f"{stem.name}_{suffix}.png")))
    return written


def render_optima(groups, group_axis: str, path) -> Path:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    x = [v for v, _ in groups]
    y = [opt.r_a_star for _, opt in groups]
    flagged = [(v, opt.r_a_star) for v, opt in groups if opt.indistinct]
    ax.plot(x, y, "o-", lw=1.2, ms=4)
    if flagged:
        fx, fy = zip(*flagged)
        ax.plot(fx, fy, "o", mfc="none", mec="tab:red", ms=10,
                label="indistinct")
        ax.legend(frameon=False)
    ax.set_xlabel(UNIT_COLUMNS[group_axis])
    ax.set_ylabel("optimal aperture radius [um]")
    ax.grid(alpha=0.3)
    return _save(fig, path)
