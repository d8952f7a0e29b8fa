"""Figure rendering for experiment reports.

Each function writes a PNG next to the delimited output of its experiment.
Figures are descriptive only; the CSV artifacts remain the normative record.
"""
from __future__ import annotations

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path):
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)


def trajectory_figure(traj, path) -> None:
    """Phase portrait plus state components against time."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    t = traj.times
    if traj.kind == "matrix":
        x = traj.states[:, 0, 0] - 0.5
        y = traj.states[:, 0, 1]
        labels = ("m11", "m12", "m22")
        series = (traj.states[:, 0, 0], traj.states[:, 0, 1], traj.states[:, 1, 1])
    elif traj.kind == "xy":
        x, y = traj.states[:, 0], traj.states[:, 1]
        labels = ("x", "y")
        series = (x, y)
    else:
        r, phi = traj.states[:, 0], traj.states[:, 1]
        x, y = r * np.cos(phi), r * np.sin(phi)
        labels = ("r", "phi")
        series = (r, phi)
    ax1.plot(x, y, lw=0.8)
    ax1.plot(x[0], y[0], "o", ms=4, label="start")
    ax1.set_xlabel("x")
    ax1.set_ylabel("y")
    ax1.set_aspect("equal", adjustable="datalim")
    ax1.legend(loc="best", fontsize=8)
    for lab, s in zip(labels, series):
        ax2.plot(t, s, lw=0.8, label=lab)
    ax2.set_xlabel("t")
    ax2.legend(loc="best", fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def cycle_figure(report, path) -> None:
    """Periodic orbit inside its invariant annulus, plus orbit radius."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    theta = np.linspace(0, 2 * np.pi, 256)
    for radius, style in ((report.annulus.r1, "--"), (report.annulus.r2, "--")):
        ax1.plot(radius * np.cos(theta), radius * np.sin(theta), style, color="gray", lw=0.8)
    ax1.plot(report.orbit_xy[:, 0], report.orbit_xy[:, 1], lw=1.2)
    ax1.plot([report.x_star], [0.0], "o", ms=4)
    ax1.set_xlabel("x")
    ax1.set_ylabel("y")
    ax1.set_aspect("equal", adjustable="datalim")
    ax1.set_title(f"period {report.period:.4f}, log rho {report.log_rho:.2f}", fontsize=9)
    r = np.hypot(report.orbit_xy[:, 0], report.orbit_xy[:, 1])
    ax2.plot(report.orbit_times, r, lw=1.0)
    ax2.axhline(report.annulus.r1, ls="--", color="gray", lw=0.8)
    ax2.axhline(report.annulus.r2, ls="--", color="gray", lw=0.8)
    ax2.set_xlabel("t")
    ax2.set_ylabel("orbit radius")
    fig.tight_layout()
    _save(fig, path)


def moments_figure(series, path, ode_times=None, ode_states=None) -> None:
    """Empirical second moments over time, optionally with the ODE overlay."""
    fig, ax = plt.subplots(figsize=(6.5, 4))
    comps = (((0, 0), "m11"), ((0, 1), "m12"), ((1, 1), "m22"))
    for (i, j), lab in comps:
        ax.plot(series.times, series.m_emp[:, i, j], lw=0.9, label=f"{lab} (empirical)")
    if ode_times is not None:
        for (i, j), lab in comps:
            ax.plot(ode_times, ode_states[:, i, j], "--", lw=0.9, label=f"{lab} (moment ODE)")
    ax.set_xlabel("t")
    ax.set_ylabel("second moment")
    ax.legend(loc="best", fontsize=7)
    ax.set_title(f"{series.model_tag}, n = {series.n}", fontsize=9)
    fig.tight_layout()
    _save(fig, path)


def entropy_figure(series, path) -> None:
    """Relative entropy and Fisher information decay (log scale)."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    pos_h = series.entropy > 0
    pos_i = series.fisher > 0
    ax1.semilogy(series.times[pos_h], series.entropy[pos_h], lw=1.0, label="H")
    ax1.semilogy(series.times[pos_i], series.fisher[pos_i], lw=1.0, label="I")
    ax1.set_xlabel("t")
    ax1.legend(loc="best", fontsize=8)
    ok = np.isfinite(series.residual)
    ax2.semilogy(series.times[ok], np.maximum(series.residual[ok], 1e-18), lw=0.8)
    ax2.set_xlabel("t")
    ax2.set_ylabel("|dH/dt + I|")
    fig.tight_layout()
    _save(fig, path)


def chaos_figure(result, path) -> None:
    """Mean sup-error against replica count with the fitted power law."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    counts = np.array(result.replica_counts, dtype=float)
    ax.errorbar(counts, result.means, yerr=2 * result.stderrs, fmt="o", ms=4, capsize=3)
    grid = np.array(result.used_counts, dtype=float)
    ax.plot(grid, np.exp(result.intercept) * grid ** result.slope, "--",
            label=f"slope {result.slope:.3f}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("replica count I")
    ax.set_ylabel("mean sup |X1 - Y1|^2")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def sweep_figure(axis_name, values, scalars, path) -> None:
    """Key scalar outputs of a sweep against the swept parameter."""
    keys = sorted({k for s in scalars if s for k in s})
    numeric = [k for k in keys if all(
        s is None or isinstance(s.get(k), (int, float)) for s in scalars)]
    if not numeric:
        return
    fig, ax = plt.subplots(figsize=(6, 4))
    for k in numeric[:6]:
        xs = [v for v, s in zip(values, scalars) if s is not None and k in s]
        ys = [s[k] for s in scalars if s is not None and k in s]
        if len(xs) >= 2 and all(np.isfinite(y) for y in ys):
            ax.plot(xs, ys, "o-", ms=3, lw=0.9, label=k)
    ax.set_xlabel(axis_name)
    ax.legend(loc="best", fontsize=7)
    fig.tight_layout()
    _save(fig, path)
