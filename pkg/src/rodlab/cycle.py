"""Stability region, Poincare return map, periodic orbit, Floquet multiplier,
and convergence-rate measurement for the 2D closed conformation-tensor ODE.

The Poincare section is the half-line S = {y = 0, x > 0}; crossings are
accepted only with the rotating orientation (y passing + -> - with x > 0,
after at least half a revolution), which excludes both the antipodal
crossing and departure artifacts at the section itself.

The cycle is strongly attracting in this regime: the multiplier
rho = exp(contour integral of the divergence) is of order exp(-100), so a
direct finite difference of the return map at the fixed point is identically
zero in double precision. The independent second estimator rho_tilde is
therefore measured as a per-segment renormalized two-trajectory finite
difference: a transverse offset of size delta is propagated alongside the
orbit, projected off the flow direction and rescaled back to delta at each
segment, and the log-contraction factors are accumulated over one period.
The estimator never evaluates the divergence, so the two routes stay
independent; both are reported in log form as well (the raw multipliers
underflow for slow forcing).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .closure import OdeConfig, _rhs_xy_raw
from .errors import (
    ConvergenceError,
    InvalidParameterError,
    InvalidSlackError,
    NoReturnError,
    RegimeError,
)
from .types import ConfTensor, ModelParams, QState, cycle_regime_check, q_from_conf

_SECTION_TOL = 1e-12  # |y| at an accepted, refined crossing
_FIXED_POINT_TOL = 1e-11
_MAX_RETURNS = 10_000


@dataclass(frozen=True)
class AnnulusSpec:
    """Forward-invariant annulus r1 <= r <= r2 with its Peclet threshold."""

    eps1: float
    eps2: float
    r1: float
    r2: float
    pe_max: float


def annulus(params: ModelParams, eps1: float, eps2: float) -> AnnulusSpec:
    """Build the invariant annulus for the given slacks.

    r1 = sqrt((N-1)/(4N) - eps1), r2 = sqrt((N-1)/(4N) + eps2), and
    pe_max = (16 N eps1 / |a|) min(r1 / (1/N + 4 eps1), r2 / (1/N - 4 eps2)).
    Requires the no-stationary-point condition N > 1/(1 - 4 eps1 - a^2),
    which keeps |a|/(2r) < 1 throughout the annulus.
    """
    cycle_regime_check(params)
    n = params.n_conc
    a = params.a
    eps1_max = (n - 1.0) / (4.0 * n)
    eps2_max = 1.0 / (4.0 * n)
    if not (0.0 < eps1 < eps1_max):
        raise InvalidSlackError(f"eps1 must lie in (0, {eps1_max:.6g}), got {eps1}")
    if not (0.0 < eps2 < eps2_max):
        raise InvalidSlackError(f"eps2 must lie in (0, {eps2_max:.6g}), got {eps2}")
    gap = 1.0 - 4.0 * eps1 - a * a
    if gap <= 0.0 or not n > 1.0 / gap:
        raise RegimeError(
            "no-stationary-point condition fails: "
            f"need n_conc > 1/(1 - 4 eps1 - a^2) = {1.0 / gap if gap > 0 else math.inf:.6g}"
        )
    r1 = math.sqrt(eps1_max - eps1)
    r2 = math.sqrt(eps1_max + eps2)
    if a == 0.0:
        pe_max = math.inf
    else:
        pe_max = (16.0 * n * eps1 / abs(a)) * min(
            r1 / (1.0 / n + 4.0 * eps1), r2 / (1.0 / n - 4.0 * eps2)
        )
    return AnnulusSpec(eps1=eps1, eps2=eps2, r1=r1, r2=r2, pe_max=pe_max)


def divergence(q: QState, params: ModelParams) -> float:
    """Divergence of the planar vector field: 8(N-1) - 64N(x^2+y^2) - 6 Pe a y."""
    return divergence_xy(q.x, q.y, params)


def divergence_xy(x, y, params: ModelParams):
    n = params.n_conc
    return 8.0 * (n - 1.0) - 64.0 * n * (x * x + y * y) - 6.0 * params.pe * params.a * y


def dulac_margin(spec: AnnulusSpec, params: ModelParams) -> float:
    """Step-2 smallness bound: -8(N-1) + 64 N eps1 + 6 Pe |a| r2.

    Strictly negative means the divergence is negative on the whole annulus,
    which is a stronger requirement than pe < pe_max.
    """
    n = params.n_conc
    return -8.0 * (n - 1.0) + 64.0 * n * spec.eps1 + 6.0 * params.pe * abs(params.a) * spec.r2


def _rk4_xy_single(x, y, pe, a, n, h):
    k1x, k1y = _rhs_xy_raw(x, y, pe, a, n)
    k2x, k2y = _rhs_xy_raw(x + 0.5 * h * k1x, y + 0.5 * h * k1y, pe, a, n)
    k3x, k3y = _rhs_xy_raw(x + 0.5 * h * k2x, y + 0.5 * h * k2y, pe, a, n)
    k4x, k4y = _rhs_xy_raw(x + h * k3x, y + h * k3y, pe, a, n)
    return x + (h / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x), \
        y + (h / 6.0) * (k1y + 2 * k2y + 2 * k3y + k4y)


def _refine_crossing(x, y, pe, a, n, h):
    """Bisect theta in (0, 1] so that one rk4 substep of theta*h lands on y = 0."""
    lo, hi = 0.0, 1.0
    for _ in range(90):
        mid = 0.5 * (lo + hi)
        _, ym = _rk4_xy_single(x, y, pe, a, n, mid * h)
        if abs(ym) <= _SECTION_TOL:
            lo = hi = mid
            break
        if ym > 0.0:
            lo = mid
        else:
            hi = mid
    theta = 0.5 * (lo + hi)
    xc, yc = _rk4_xy_single(x, y, pe, a, n, theta * h)
    return theta, xc, yc


class _SectionTracker:
    """Chunked xy integration collecting oriented section crossings."""

    def __init__(self, q0: QState, params: ModelParams, h: float, record: bool = False):
        self.pe, self.a, self.n = params.pe, params.a, params.n_conc
        self.h = h
        self.x, self.y = q0.x, q0.y
        self.t = 0.0
        self.phase = 0.0
        self.record = record
        self.paths = []
        self.crossings = []  # (t_cross, x_cross)

    def advance(self, nsteps: int) -> None:
        path = _kernels.rk4_xy_path(self.x, self.y, self.pe, self.a, self.n, self.h, nsteps)
        phi = np.arctan2(path[:, 1], path[:, 0])
        dphi = np.diff(phi)
        dphi = np.where(dphi > np.pi, dphi - 2 * np.pi, dphi)
        dphi = np.where(dphi < -np.pi, dphi + 2 * np.pi, dphi)
        phase_before = self.phase + np.concatenate(([0.0], np.cumsum(dphi[:-1])))
        cand = np.flatnonzero(
            (path[:-1, 1] > 0.0) & (path[1:, 1] <= 0.0) & (path[:-1, 0] > 0.0)
        )
        extra = 0.0
        for i in cand:
            if phase_before[i] + extra < -math.pi:
                theta, xc, _ = _refine_crossing(
                    path[i, 0], path[i, 1], self.pe, self.a, self.n, self.h
                )
                self.crossings.append((self.t + (i + theta) * self.h, xc))
                extra += 2.0 * math.pi
        self.phase += float(np.sum(dphi)) + extra
        self.t += nsteps * self.h
        self.x, self.y = path[-1, 0], path[-1, 1]
        if self.record:
            self.paths.append(path[1:] if self.paths else path)
        return path

    def path_array(self):
        return np.concatenate(self.paths) if self.paths else np.empty((0, 2))


def poincare_return(
    q0: QState,
    params: ModelParams,
    ode_config: OdeConfig,
    max_time: float | None = None,
) -> tuple[QState, float]:
    """First return of the section point (x0, 0) to {y = 0, x > 0}.

    The crossing is localized to |y| <= 1e-12 by bisection inside the
    bracketing step. Raises NoReturnError if no oriented crossing occurs
    within the time budget (default 10 * 2 pi / Pe).
    """
    if params.pe <= 0.0:
        raise RegimeError("poincare return requires pe > 0")
    if abs(q0.y) > _SECTION_TOL:
        raise InvalidParameterError(f"q0 must lie on the section y = 0, got y = {q0.y}")
    if q0.x <= 0.0:
        raise InvalidParameterError(f"q0 must have x > 0, got x = {q0.x}")
    budget = max_time if max_time is not None else 10.0 * 2.0 * math.pi / params.pe
    h = ode_config.step
    tracker = _SectionTracker(QState(q0.x, 0.0), params, h)
    chunk = 4096
    steps_left = int(math.ceil(budget / h))
    while steps_left > 0:
        m = min(chunk, steps_left)
        tracker.advance(m)
        steps_left -= m
        if tracker.crossings:
            t_cross, x_cross = tracker.crossings[0]
            return QState(x_cross, 0.0), t_cross
    raise NoReturnError(
        f"no section return within t = {budget:.6g} (left the cycle regime?)"
    )


@dataclass
class CycleReport:
    """Periodic orbit of the planar system and its stability numbers.

    rho is the multiplier from the divergence quadrature, rho_tilde the
    renormalized finite-difference estimate; both are < 1 in the cycle
    regime and carried in log form as well since they underflow easily.
    decay_rate is -log(rho_tilde) / period.
    """

    x_star: float
    period: float
    rho: float
    rho_tilde: float
    log_rho: float
    log_rho_tilde: float
    decay_rate: float
    orbit_times: np.ndarray
    orbit_xy: np.ndarray
    eig_min: float
    eig_max: float
    iterates: tuple
    annulus: AnnulusSpec
    params: ModelParams

    @property
    def eig_bounds(self) -> tuple[float, float]:
        return (self.eig_min, self.eig_max)

    def summary(self) -> dict:
        return {
            "x_star": self.x_star,
            "period": self.period,
            "rho": self.rho,
            "rho_tilde": self.rho_tilde,
            "log_rho": self.log_rho,
            "log_rho_tilde": self.log_rho_tilde,
            "decay_rate": self.decay_rate,
            "eig_min": self.eig_min,
            "eig_max": self.eig_max,
            "returns": len(self.iterates) - 1,
        }

    def to_csv(self, path) -> None:
        from .csvio import write_csv

        r = np.hypot(self.orbit_xy[:, 0], self.orbit_xy[:, 1])
        phi = np.mod(np.arctan2(self.orbit_xy[:, 1], self.orbit_xy[:, 0]), 2 * np.pi)
        comment = (
            f"params: pe={self.params.pe!r} a={self.params.a!r} "
            f"n_conc={self.params.n_conc!r} x_star={self.x_star!r} period={self.period!r}"
        )
        rows = (
            [t, xy[0], xy[1], rr, pp]
            for t, xy, rr, pp in zip(self.orbit_times, self.orbit_xy, r, phi)
        )
        write_csv(path, ["t", "x", "y", "r", "phi"], rows, comment=comment)


def _sample_orbit(x_star, params, h):
    """One full return from (x*, 0) recorded at every step plus the refined
    crossing endpoint. Returns (times, points, period)."""
    pe, a, n = params.pe, params.a, params.n_conc
    tracker = _SectionTracker(QState(x_star, 0.0), params, h, record=True)
    chunk = 4096
    budget_steps = int(math.ceil(10.0 * 2.0 * math.pi / params.pe / h))
    taken = 0
    while not tracker.crossings and taken < budget_steps:
        tracker.advance(chunk)
        taken += chunk
    if not tracker.crossings:
        raise NoReturnError("periodic orbit sampling found no return")
    t_cross, x_cross = tracker.crossings[0]
    path = tracker.path_array()
    # keep the appended refined endpoint strictly after the last grid point
    nfull = int(math.floor(t_cross / h - 1e-9))
    times = np.arange(nfull + 1) * h
    pts = path[: nfull + 1].copy()
    times = np.append(times, t_cross)
    pts = np.vstack([pts, [x_cross, 0.0]])
    return times, pts, t_cross


def _renormalized_fd_log_multiplier(orbit_x0, params, period, h, delta, seg_steps=100):
    """Accumulated log-contraction of a transverse finite-difference offset
    propagated over one period with per-segment renormalization."""
    pe, a, n = params.pe, params.a, params.n_conc
    p = np.array([orbit_x0, 0.0])
    fx, fy = _rhs_xy_raw(p[0], p[1], pe, a, n)
    fn = math.hypot(fx, fy)
    u = np.array([-fy / fn, fx / fn])
    pair = np.ascontiguousarray(np.vstack([p, p + delta * u]))
    nfull = int(period / h)
    rem = period - nfull * h
    log_acc = 0.0
    done = 0

    def _measure():
        nonlocal log_acc
        px, py = pair[0]
        gx, gy = _rhs_xy_raw(px, py, pe, a, n)
        gn = math.hypot(gx, gy)
        gx /= gn
        gy /= gn
        dx = pair[1, 0] - px
        dy = pair[1, 1] - py
        dot = dx * gx + dy * gy
        tx = dx - dot * gx
        ty = dy - dot * gy
        tn = math.hypot(tx, ty)
        log_acc += math.log(tn / delta)
        pair[1, 0] = px + delta * tx / tn
        pair[1, 1] = py + delta * ty / tn

    while done < nfull:
        m = min(seg_steps, nfull - done)
        _kernels.rk4_xy_batch(pair, pe, a, n, h, m)
        done += m
        if done < nfull:
            _measure()
    if rem > 0.0:
        pair[0] = _rk4_xy_single(pair[0, 0], pair[0, 1], pe, a, n, rem)
        pair[1] = _rk4_xy_single(pair[1, 0], pair[1, 1], pe, a, n, rem)
    _measure()
    return log_acc


def find_cycle(params: ModelParams, spec: AnnulusSpec, ode_config: OdeConfig) -> CycleReport:
    """Locate the attracting periodic orbit and measure its stability.

    Iterates the return map from the annulus midpoint until successive
    abscissas agree to 1e-11 (the contraction makes this one or two
    returns), then samples one period and produces both multiplier
    estimates, the decay rate, and the eigenvalue bounds of the associated
    tensor orbit.
    """
    if not (0.0 < params.pe < spec.pe_max):
        raise RegimeError(
            f"pe must lie in (0, pe_max = {spec.pe_max:.6g}), got {params.pe}"
        )
    cycle_regime_check(params)
    h = ode_config.step
    x = 0.5 * (spec.r1 + spec.r2)
    iterates = [x]
    for _ in range(_MAX_RETURNS):
        q1, _ = poincare_return(QState(x, 0.0), params, ode_config)
        iterates.append(q1.x)
        if abs(q1.x - x) <= _FIXED_POINT_TOL:
            x = q1.x
            break
        x = q1.x
    else:
        raise ConvergenceError(
            "return-map iteration did not converge",
            diagnostics={"iterates": iterates},
        )
    x_star = x
    times, pts, period = _sample_orbit(x_star, params, h)

    dvals = divergence_xy(pts[:, 0], pts[:, 1], params)
    log_rho = float(np.trapezoid(dvals, times))

    delta = 1e-5 * x_star
    log_rho_tilde = _renormalized_fd_log_multiplier(x_star, params, period, h, delta)

    r_per = np.hypot(pts[:, 0], pts[:, 1])
    r_max = float(r_per.max())
    return CycleReport(
        x_star=float(x_star),
        period=float(period),
        rho=math.exp(log_rho),
        rho_tilde=math.exp(log_rho_tilde),
        log_rho=log_rho,
        log_rho_tilde=log_rho_tilde,
        decay_rate=-log_rho_tilde / period,
        orbit_times=times,
        orbit_xy=pts,
        eig_min=0.5 - r_max,
        eig_max=0.5 + r_max,
        iterates=tuple(float(v) for v in iterates),
        annulus=spec,
        params=params,
    )


class OrbitInterpolant:
    """Cubic Hermite evaluation of the periodic orbit at arbitrary phase."""

    def __init__(self, cycle: CycleReport):
        self.period = cycle.period
        self.h = float(cycle.orbit_times[1] - cycle.orbit_times[0])
        self.pts = cycle.orbit_xy
        p = cycle.params
        dx, dy = _rhs_xy_raw(self.pts[:, 0], self.pts[:, 1], p.pe, p.a, p.n_conc)
        self.derivs = np.stack([dx, dy], axis=1)
        self.nfull = len(self.pts) - 2  # index of the last uniform-grid point

    def __call__(self, tau):
        tau = np.mod(np.atleast_1d(np.asarray(tau, dtype=float)), self.period)
        idx = np.minimum((tau / self.h).astype(int), self.nfull)
        width = np.where(idx < self.nfull, self.h, self.period - self.nfull * self.h)
        theta = (tau - idx * self.h) / width
        p0 = self.pts[idx]
        p1 = self.pts[idx + 1]
        f0 = self.derivs[idx] * width[:, None]
        f1 = self.derivs[idx + 1] * width[:, None]
        t2 = theta * theta
        t3 = t2 * theta
        h00 = (2 * t3 - 3 * t2 + 1)[:, None]
        h10 = (t3 - 2 * t2 + theta)[:, None]
        h01 = (-2 * t3 + 3 * t2)[:, None]
        h11 = (t3 - t2)[:, None]
        return h00 * p0 + h10 * f0 + h01 * p1 + h11 * f1


def aligned_orbit_gap(
    q0: QState,
    cycle: CycleReport,
    params: ModelParams,
    ode_config: OdeConfig,
    horizon: float | None = None,
):
    """Trajectory from q0 and the phase-aligned periodic reference.

    The phase shift is fixed from the trajectory's last detected section
    crossing (the per-return slips decay geometrically, so the last crossing
    already carries the asymptotic shift). Returns (times, traj_xy, ref_xy).
    """
    h = ode_config.step
    horizon = horizon if horizon is not None else 2.2 * cycle.period
    nsteps = int(round(horizon / h))
    tracker = _SectionTracker(q0, params, h, record=True)
    chunk = 4096
    left = nsteps
    while left > 0:
        tracker.advance(min(chunk, left))
        left -= chunk
    path = tracker.path_array()[: nsteps + 1]
    times = np.arange(nsteps + 1) * h
    if not tracker.crossings:
        raise NoReturnError("trajectory never crossed the section; cannot phase-align")
    t0 = tracker.crossings[-1][0] % cycle.period
    ref = OrbitInterpolant(cycle)(times - t0)
    return times, path, ref


def fit_exponential_tail(
    times,
    values,
    t_skip: float = 0.1,
    hi_frac: float = 0.2,
    floor_mult: float = 100.0,
    floor_min: float = 1e-12,
    min_points: int = 50,
) -> float:
    """Least-squares slope magnitude of log(values) on its clean tail.

    The fit window excludes the initial transient (t <= t_skip, values above
    hi_frac of the early maximum) and everything within floor_mult of the
    observed floor. Returns math.inf when fewer than min_points samples
    survive (the degenerate already-converged case).
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    pos = values > 0.0
    if not np.any(pos):
        return math.inf
    vmin = values[pos].min()
    lo = max(vmin * floor_mult, floor_min)
    early = times <= times[0] + 0.05 * (times[-1] - times[0])
    v_early = values[early & pos].max() if np.any(early & pos) else values[pos].max()
    hi = hi_frac * v_early
    mask = pos & (values > lo) & (values < hi) & (times > t_skip)
    if mask.sum() < min_points:
        return math.inf
    slope = np.polyfit(times[mask], np.log(values[mask]), 1)[0]
    return float(abs(slope))


def convergence_rate(
    m0: ConfTensor,
    cycle: CycleReport,
    params: ModelParams,
    ode_config: OdeConfig,
    horizon: float | None = None,
) -> float:
    """Fitted exponential decay rate of the phase-aligned orbit error.

    Integrates M(t) from m0, aligns the periodic reference through the
    section-crossing times, and fits log ||M(t) - M_per(t)||_F on the tail.
    Returns math.inf when m0 already sits on the cycle (degenerate fit).
    """
    q0 = q_from_conf(m0)
    r0 = q0.r
    if not (cycle.annulus.r1 - 1e-12 <= r0 <= cycle.annulus.r2 + 1e-12):
        raise RegimeError(
            f"initial radius {r0:.6g} outside annulus "
            f"[{cycle.annulus.r1:.6g}, {cycle.annulus.r2:.6g}]"
        )
    times, path, ref = aligned_orbit_gap(q0, cycle, params, ode_config, horizon)
    # ||M - M_per||_F = sqrt(2) * |(x, y) - (x, y)_per| for traceless pairs
    err = math.sqrt(2.0) * np.hypot(path[:, 0] - ref[:, 0], path[:, 1] - ref[:, 1])
    return fit_exponential_tail(times, err)
