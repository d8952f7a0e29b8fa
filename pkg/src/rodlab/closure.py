"""Right-hand sides and integrators for the closed conformation-tensor ODE.

Three equivalent forms are provided: the matrix form (any dimension d >= 2),
the traceless-coordinate form (x, y), and the polar form (r, phi); the last
two assume d = 2 and the simple-shear flow. Integration never projects back
onto the symmetric / fixed-trace manifold: conservation drift is measured and
reported, not hidden.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import (
    InvalidParameterError,
    InvalidStateError,
    IntegrationFailureError,
    SingularityError,
)
from .types import ConfTensor, Ensemble, FlowMatrix, ModelParams, QState

VALID_METHODS = ("rk4", "rk45-adaptive")


@dataclass(frozen=True)
class OdeConfig:
    """Time-stepping configuration.

    rk4 is the fixed-step default (bit-reproducible); rk45-adaptive is the
    embedded Cash-Karp pair with per-step error control, kept as a
    cross-check. ``stride`` controls output sampling (every stride-th step).
    """

    step: float = 1e-3
    t_end: float = 10.0
    method: str = "rk4"
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    stride: int = 10

    def __post_init__(self):
        if not self.step > 0.0:
            raise InvalidParameterError(f"step must be > 0, got {self.step}")
        if not self.t_end > 0.0:
            raise InvalidParameterError(f"t_end must be > 0, got {self.t_end}")
        if self.method not in VALID_METHODS:
            raise InvalidParameterError(f"method must be one of {VALID_METHODS}")
        if not (self.rel_tol > 0.0 and self.abs_tol > 0.0):
            raise InvalidParameterError("tolerances must be > 0")
        if self.stride < 1:
            raise InvalidParameterError(f"stride must be >= 1, got {self.stride}")


@dataclass
class Trajectory:
    """Sampled solution: times (strictly increasing) and matching states.

    kind is one of "matrix" (states (..., d, d)), "xy" (states (..., 2)) or
    "polar" (states (..., 2) as (r, unwrapped phi)). ``meta`` carries the
    measured conservation drift and a PSD warning flag for matrix runs.
    """

    times: np.ndarray
    states: np.ndarray
    params: ModelParams
    kind: str = "matrix"
    meta: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        from .csvio import write_csv

        comment = (
            f"params: pe={self.params.pe!r} a={self.params.a!r} "
            f"n_conc={self.params.n_conc!r} length={self.params.length!r} "
            f"dim={self.params.dim} kind={self.kind}"
        )
        if self.kind == "matrix":
            d = self.states.shape[-1]
            iu = [(i, j) for i in range(d) for j in range(i, d)]
            header = ["t"] + [f"m{i+1}{j+1}" for i, j in iu]
            rows = (
                [t] + [s[i, j] for i, j in iu]
                for t, s in zip(self.times, self.states)
            )
        elif self.kind == "xy":
            header = ["t", "x", "y"]
            rows = ([t, s[0], s[1]] for t, s in zip(self.times, self.states))
        else:
            header = ["t", "r", "phi"]
            rows = ([t, s[0], s[1]] for t, s in zip(self.times, self.states))
        write_csv(path, header, rows, comment=comment)


def rhs_matrix(m, params: ModelParams, kappa: FlowMatrix) -> np.ndarray:
    """Time derivative of the conformation tensor in the fixed-trace form.

    kappa M + M kappa^T - (2/L^2)(kappa:M) M
      + 4 n_conc (2 M^2 - (2/L^2)(M:M) M) + 2 Id - (2 d / L^2) M

    Accepts a ConfTensor or a raw (..., d, d) array (batched evaluation);
    M need not be symmetric, so asymmetry drift remains representable.
    """
    arr = m.m if isinstance(m, ConfTensor) else np.asarray(m, dtype=float)
    tr = np.trace(arr, axis1=-2, axis2=-1)
    if np.any(tr <= 0.0):
        raise InvalidStateError("degenerate state: tr(M) <= 0")
    k = kappa.kappa if isinstance(kappa, FlowMatrix) else np.asarray(kappa, dtype=float)
    return _rhs_matrix_raw(arr, k, params.n_conc, params.length_sq, params.dim)


def _rhs_matrix_raw(m, k, n_conc, l2, d):
    km = k @ m
    mk = m @ np.swapaxes(k, -1, -2)
    m2 = m @ m
    kdotm = np.sum(k * m, axis=(-2, -1))[..., None, None]
    mdotm = np.sum(m * m, axis=(-2, -1))[..., None, None]
    coef = -(2.0 / l2) * kdotm - (8.0 * n_conc / l2) * mdotm - 2.0 * d / l2
    out = km + mk + (8.0 * n_conc) * m2 + coef * m
    idx = np.arange(m.shape[-1])
    out[..., idx, idx] += 2.0
    return out


def rhs_xy(q: QState, params: ModelParams) -> tuple[float, float]:
    """(dx/dt, dy/dt) of the traceless-coordinate form under simple shear."""
    dx, dy = _rhs_xy_raw(q.x, q.y, params.pe, params.a, params.n_conc)
    return float(dx), float(dy)


def _rhs_xy_raw(x, y, pe, a, n):
    s = x * x + y * y
    common = 1.0 - n + 4.0 * n * s
    dx = -4.0 * x * common + pe * y * (1.0 - 2.0 * a * x)
    dy = -4.0 * y * common + pe * (-x + 0.5 * a - 2.0 * a * y * y)
    return dx, dy


def rhs_polar(r: float, phi: float, params: ModelParams) -> tuple[float, float]:
    """(dphi/dt, dr/dt) of the polar form; singular at r = 0."""
    if r == 0.0:
        raise SingularityError("polar vector field is singular at r = 0")
    pe, a, n = params.pe, params.a, params.n_conc
    dphi = -pe * (1.0 - 0.5 * a / r * math.cos(phi))
    dr = -4.0 * r * (n * (4.0 * r * r - 1.0) + 1.0) \
        + 0.5 * a * pe * (1.0 - 4.0 * r * r) * math.sin(phi)
    return dphi, dr


def _record_grid(config: OdeConfig):
    nsteps = int(round(config.t_end / config.step))
    if nsteps < 1:
        raise InvalidParameterError("t_end shorter than one step")
    strides = [config.stride] * (nsteps // config.stride)
    rem = nsteps % config.stride
    if rem:
        strides.append(rem)
    return nsteps, strides


def integrate(m0, params: ModelParams, kappa: FlowMatrix, config: OdeConfig) -> Trajectory:
    """Integrate the matrix form from m0 (ConfTensor, or (B, d, d) batch).

    States remain symmetric with constant trace up to integrator drift; the
    drift maxima are measured at the recorded samples and stored in
    Trajectory.meta together with the minimum eigenvalue seen (a negative
    value only sets meta["psd_warning"], it does not stop the run).
    """
    if isinstance(m0, ConfTensor):
        state = m0.m.copy()
    else:
        state = np.array(m0, dtype=float)
        if state.ndim not in (2, 3) or state.shape[-1] != state.shape[-2]:
            raise InvalidStateError(f"m0 must be (d, d) or (B, d, d), got {state.shape}")
    d = state.shape[-1]
    k = kappa.kappa if isinstance(kappa, FlowMatrix) else np.asarray(kappa, dtype=float)
    if k.shape != (d, d):
        raise InvalidStateError(f"kappa shape {k.shape} does not match d = {d}")
    tr0 = np.trace(state, axis1=-2, axis2=-1)
    if np.any(tr0 <= 0.0):
        raise InvalidStateError("degenerate state: tr(M) <= 0")

    if config.method == "rk45-adaptive":
        return _integrate_adaptive(state, params, k, config)

    batched = state.ndim == 3
    work = state if batched else state[None, :, :]
    work = np.ascontiguousarray(work)
    h = config.step
    nsteps, strides = _record_grid(config)

    times = [0.0]
    samples = [work.copy()]
    tracked = _ConservationTracker(tr0)
    tracked.update(work)
    t = 0.0
    use_kernel = d == 2
    for nsub in strides:
        if use_kernel:
            _kernels.rk4_conf2_batch(
                work, k[0, 0], k[0, 1], k[1, 0], k[1, 1],
                8.0 * params.n_conc, 1.0 / params.length_sq, float(d), h, nsub,
            )
        else:
            for _ in range(nsub):
                work = _rk4_step_matrix(work, k, params, h)
        t += nsub * h
        if not np.all(np.isfinite(work)):
            raise IntegrationFailureError("non-finite state", t=t, state=samples[-1])
        times.append(t)
        samples.append(work.copy())
        tracked.update(work)

    states = np.stack(samples)
    if not batched:
        states = states[:, 0]
    return Trajectory(
        times=np.array(times), states=states, params=params, kind="matrix",
        meta=tracked.meta(),
    )


class _ConservationTracker:
    """Running max of trace drift / asymmetry and min eigenvalue at samples."""

    def __init__(self, tr0):
        self.tr0 = np.asarray(tr0, dtype=float)
        self.max_trace_drift = 0.0
        self.max_asymmetry = 0.0
        self.min_eigenvalue = math.inf

    def update(self, batch):
        tr = np.trace(batch, axis1=-2, axis2=-1)
        self.max_trace_drift = max(self.max_trace_drift, float(np.max(np.abs(tr - self.tr0))))
        asym = np.max(np.abs(batch - np.swapaxes(batch, -1, -2)))
        self.max_asymmetry = max(self.max_asymmetry, float(asym))
        sym = 0.5 * (batch + np.swapaxes(batch, -1, -2))
        self.min_eigenvalue = min(self.min_eigenvalue, float(np.linalg.eigvalsh(sym).min()))

    def meta(self):
        return {
            "max_trace_drift": self.max_trace_drift,
            "max_asymmetry": self.max_asymmetry,
            "min_eigenvalue": self.min_eigenvalue,
            "psd_warning": self.min_eigenvalue < 0.0,
        }


def _rk4_step_matrix(m, k, params, h):
    n, l2, d = params.n_conc, params.length_sq, params.dim
    k1 = _rhs_matrix_raw(m, k, n, l2, d)
    k2 = _rhs_matrix_raw(m + 0.5 * h * k1, k, n, l2, d)
    k3 = _rhs_matrix_raw(m + 0.5 * h * k2, k, n, l2, d)
    k4 = _rhs_matrix_raw(m + h * k3, k, n, l2, d)
    return m + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


# Cash-Karp embedded 5(4) coefficients.
_CK_A = (
    (),
    (1.0 / 5.0,),
    (3.0 / 40.0, 9.0 / 40.0),
    (3.0 / 10.0, -9.0 / 10.0, 6.0 / 5.0),
    (-11.0 / 54.0, 5.0 / 2.0, -70.0 / 27.0, 35.0 / 27.0),
    (1631.0 / 55296.0, 175.0 / 512.0, 575.0 / 13824.0, 44275.0 / 110592.0, 253.0 / 4096.0),
)
_CK_B5 = (37.0 / 378.0, 0.0, 250.0 / 621.0, 125.0 / 594.0, 0.0, 512.0 / 1771.0)
_CK_B4 = (2825.0 / 27648.0, 0.0, 18575.0 / 48384.0, 13525.0 / 55296.0, 277.0 / 14336.0, 1.0 / 4.0)


def _integrate_adaptive(state, params, k, config):
    batched = state.ndim == 3
    work = state if batched else state[None, :, :]
    n, l2, d = params.n_conc, params.length_sq, params.dim

    def f(y):
        return _rhs_matrix_raw(y, k, n, l2, d)

    t = 0.0
    h = config.step
    h_min = 1e-12
    times = [0.0]
    samples = [work.copy()]
    tracked = _ConservationTracker(np.trace(work, axis1=-2, axis2=-1))
    tracked.update(work)
    accepted = 0
    while t < config.t_end - 1e-14:
        h = min(h, config.t_end - t)
        ks = [f(work)]
        for stage in range(1, 6):
            y = work
            for coeff, kk in zip(_CK_A[stage], ks):
                y = y + (h * coeff) * kk
            ks.append(f(y))
        y5 = work
        y4 = work
        for b5, b4, kk in zip(_CK_B5, _CK_B4, ks):
            if b5:
                y5 = y5 + (h * b5) * kk
            if b4:
                y4 = y4 + (h * b4) * kk
        err = np.max(np.abs(y5 - y4))
        scale = config.abs_tol + config.rel_tol * float(np.max(np.abs(work)))
        if not np.isfinite(err):
            raise IntegrationFailureError("non-finite step", t=t, state=samples[-1])
        if err <= scale:
            t += h
            work = y5
            accepted += 1
            if (accepted % config.stride == 0 or t >= config.t_end - 1e-14) and t > times[-1]:
                times.append(t)
                samples.append(work.copy())
                tracked.update(work)
        ratio = (scale / err) ** 0.2 if err > 0.0 else 2.0
        h *= min(2.0, max(0.2, 0.9 * ratio))
        if h < h_min:
            raise IntegrationFailureError("step size underflow", t=t, state=work)
    states = np.stack(samples)
    if not batched:
        states = states[:, 0]
    return Trajectory(
        times=np.array(times), states=states, params=params, kind="matrix",
        meta=tracked.meta(),
    )


def integrate_xy(q0: QState, params: ModelParams, config: OdeConfig) -> Trajectory:
    """Integrate the (x, y) form (simple shear, d = 2) from q0 or a (B, 2) batch."""
    if isinstance(q0, QState):
        work = np.array([[q0.x, q0.y]])
        batched = False
    else:
        work = np.array(q0, dtype=float)
        batched = work.ndim == 2
        if not batched:
            work = work[None, :]
    work = np.ascontiguousarray(work)
    h = config.step
    _, strides = _record_grid(config)
    times = [0.0]
    samples = [work.copy()]
    t = 0.0
    for nsub in strides:
        _kernels.rk4_xy_batch(work, params.pe, params.a, params.n_conc, h, nsub)
        t += nsub * h
        times.append(t)
        samples.append(work.copy())
    states = np.stack(samples)
    if not batched:
        states = states[:, 0]
    return Trajectory(times=np.array(times), states=states, params=params, kind="xy")


def integrate_polar(r0: float, phi0: float, params: ModelParams, config: OdeConfig) -> Trajectory:
    """Integrate the polar form from (r0, phi0); phi is left unwrapped."""
    if r0 <= 0.0:
        raise SingularityError("polar integration requires r0 > 0")
    work = np.array([[r0, phi0]])
    h = config.step
    _, strides = _record_grid(config)
    times = [0.0]
    samples = [work.copy()]
    t = 0.0
    for nsub in strides:
        _kernels.rk4_polar_batch(work, params.pe, params.a, params.n_conc, h, nsub)
        t += nsub * h
        if not np.all(np.isfinite(work)) or work[0, 0] <= 0.0:
            raise IntegrationFailureError("polar state left r > 0", t=t, state=samples[-1])
        times.append(t)
        samples.append(work.copy())
    states = np.stack(samples)[:, 0]
    return Trajectory(times=np.array(times), states=states, params=params, kind="polar")


def doi_closure_gap(ensemble: Ensemble, k) -> float:
    """Frobenius norm of the quadratic-closure error on an ensemble.

    || E_hat( (K:X(x)X) X(x)X ) - (K:M_hat) M_hat ||_F with E_hat, M_hat the
    empirical means over the ensemble; zero for point masses by construction.
    """
    x = ensemble.positions
    karr = k.kappa if isinstance(k, FlowMatrix) else np.asarray(k, dtype=float)
    s = np.einsum("ia,ab,ib->i", x, karr, x)
    lhs = np.einsum("i,ia,ib->ab", s, x, x) / x.shape[0]
    mhat = np.einsum("ia,ib->ab", x, x) / x.shape[0]
    rhs = np.sum(karr * mhat) * mhat
    return float(np.linalg.norm(lhs - rhs))


def renormalized(m: np.ndarray, length: float = 1.0) -> np.ndarray:
    """Post-hoc projection: symmetrize and rescale the trace to length^2.

    Not applied by any integrator; provided for explicit use only.
    """
    sym = 0.5 * (m + np.swapaxes(m, -1, -2))
    tr = np.trace(sym, axis1=-2, axis2=-1)
    return sym * (length * length / tr)[..., None, None]
