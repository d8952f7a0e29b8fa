"""Linear Fokker-Planck layer on the Gaussian family.

Densities are never gridded: with Gaussian data the linear Fokker-Planck
flow reduces to matrix dynamics for the inverse covariance P, and relative
entropy / Fisher information have closed forms. Both closed forms are
validated against an adaptive 2D quadrature oracle (truncated at eight
standard deviations), which is the anti-regression guard the test suite and
the entropy experiment both run.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import dblquad

from .closure import OdeConfig, _rhs_matrix_raw
from .cycle import CycleReport, aligned_orbit_gap, fit_exponential_tail
from .errors import (
    InvalidStateError,
    NumericalStateError,
    RegimeError,
)
from .types import ConfTensor, FlowMatrix, ModelParams, q_from_conf

_TRACE_ATOL = 1e-6  # unit-trace precondition, loose enough for trajectory drift


@dataclass(frozen=True)
class DriftMatrixK:
    """Linear drift coefficient K of the rewritten Fokker-Planck equation."""

    k: np.ndarray


def drift_k(m, params: ModelParams, kappa) -> DriftMatrixK:
    """K = -kappa + (kappa:M) Id + 4 n_conc (-M + (M:M) Id) + 2 Id.

    Requires the unit-trace normalization tr(M) = 1.
    """
    arr = m.m if isinstance(m, ConfTensor) else np.asarray(m, dtype=float)
    tr = float(np.trace(arr))
    if abs(tr - 1.0) > _TRACE_ATOL:
        raise InvalidStateError(f"drift matrix requires tr(M) = 1, got {tr!r}")
    karr = kappa.kappa if isinstance(kappa, FlowMatrix) else np.asarray(kappa, dtype=float)
    return DriftMatrixK(_drift_k_raw(arr, karr, params.n_conc))


def _drift_k_raw(m, k, n_conc):
    d = m.shape[-1]
    eye = np.eye(d)
    km = np.sum(k * m, axis=(-2, -1))[..., None, None]
    mm = np.sum(m * m, axis=(-2, -1))[..., None, None]
    return -k + km * eye + 4.0 * n_conc * (-m + mm * eye) + 2.0 * eye


def prec_rhs(p: np.ndarray, k) -> np.ndarray:
    """Evolution of the inverse covariance: P K + K^T P - 2 P^2.

    Output is exactly symmetric for symmetric input.
    """
    karr = k.k if isinstance(k, DriftMatrixK) else np.asarray(k, dtype=float)
    pk = p @ karr
    return pk + np.swapaxes(pk, -1, -2) - 2.0 * (p @ p)


@dataclass(frozen=True)
class GaussianState:
    """Centered Gaussian: covariance and its inverse, both positive definite."""

    cov: np.ndarray
    prec: np.ndarray

    def __post_init__(self):
        cov = np.asarray(self.cov, dtype=float)
        if np.linalg.eigvalsh(cov).min() <= 0.0:
            raise InvalidStateError("covariance must be positive definite")
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "prec", np.asarray(self.prec, dtype=float))

    @classmethod
    def from_cov(cls, cov) -> "GaussianState":
        cov = np.asarray(cov, dtype=float)
        return cls(cov=cov, prec=np.linalg.inv(cov))

    @classmethod
    def from_prec(cls, prec) -> "GaussianState":
        prec = np.asarray(prec, dtype=float)
        return cls(cov=np.linalg.inv(prec), prec=prec)

    def log_density(self, pts: np.ndarray) -> np.ndarray:
        """log psi at points (.., d); normalization sqrt(det P) / (2 pi)^(d/2)."""
        pts = np.asarray(pts, dtype=float)
        d = self.cov.shape[0]
        quad = np.einsum("...a,ab,...b->...", pts, self.prec, pts)
        sign, logdet = np.linalg.slogdet(self.prec)
        if sign <= 0:
            raise InvalidStateError("precision matrix must be positive definite")
        return -0.5 * quad + 0.5 * logdet - 0.5 * d * math.log(2.0 * math.pi)


def _clamp_tiny(value: float) -> float:
    # exact-equality cases produce O(1e-16) negatives through cancellation
    if -1e-12 < value < 0.0:
        return 0.0
    return value


def relative_entropy(g1: GaussianState, g2: GaussianState) -> float:
    """H(psi1 | psi2) = (tr(M2^-1 M1) - d + ln det M2 - ln det M1) / 2."""
    d = g1.cov.shape[0]
    if g2.cov.shape[0] != d:
        raise InvalidStateError("dimension mismatch")
    tr = float(np.trace(g2.prec @ g1.cov))
    _, ld1 = np.linalg.slogdet(g1.cov)
    _, ld2 = np.linalg.slogdet(g2.cov)
    return _clamp_tiny(0.5 * (tr - d + ld2 - ld1))


def fisher_information(g1: GaussianState, g2: GaussianState) -> float:
    """I(psi1 | psi2) = tr[(M2^-1 - M1^-1) M1 (M2^-1 - M1^-1)] for centered
    Gaussians (grad log(psi1/psi2) = (P2 - P1) x)."""
    if g2.cov.shape[0] != g1.cov.shape[0]:
        raise InvalidStateError("dimension mismatch")
    delta = g2.prec - g1.prec
    return _clamp_tiny(float(np.trace(delta @ g1.cov @ delta)))


def relative_entropy_quadrature(g1: GaussianState, g2: GaussianState,
                                n_sigma: float = 8.0) -> float:
    """Adaptive 2D quadrature of integral ln(psi1/psi2) psi1 (oracle route)."""
    return _quadrature_2d(g1, g2, kind="entropy", n_sigma=n_sigma)


def fisher_information_quadrature(g1: GaussianState, g2: GaussianState,
                                  n_sigma: float = 8.0) -> float:
    """Adaptive 2D quadrature of integral |grad ln(psi1/psi2)|^2 psi1."""
    return _quadrature_2d(g1, g2, kind="fisher", n_sigma=n_sigma)


def _quadrature_2d(g1, g2, kind, n_sigma):
    if g1.cov.shape[0] != 2:
        raise InvalidStateError("quadrature oracle is two-dimensional")
    half = n_sigma * math.sqrt(float(np.linalg.eigvalsh(g1.cov).max()))
    delta = g2.prec - g1.prec

    if kind == "entropy":
        def integrand(y, x):
            pt = np.array([x, y])
            l1 = g1.log_density(pt)
            return float((l1 - g2.log_density(pt)) * math.exp(l1))
    else:
        def integrand(y, x):
            pt = np.array([x, y])
            grad = delta @ pt
            return float(grad @ grad * math.exp(g1.log_density(pt)))

    val, _ = dblquad(integrand, -half, half, -half, half,
                     epsabs=1e-9, epsrel=1e-9)
    return val


@dataclass
class EntropyDissipationSeries:
    """H(t), I(t) and the dissipation-identity residual |dH/dt + I|.

    The residual uses a five-point central difference for dH/dt, so the two
    outermost samples at each end carry nan residuals.
    """

    times: np.ndarray
    entropy: np.ndarray
    fisher: np.ndarray
    residual: np.ndarray

    def to_csv(self, path) -> None:
        from .csvio import write_csv

        rows = (
            [t, hh, ii, rr]
            for t, hh, ii, rr in zip(self.times, self.entropy, self.fisher, self.residual)
        )
        write_csv(path, ["t", "entropy", "fisher", "residual"], rows)


def _entropy_fisher_from_precisions(p1, p2):
    """Closed forms evaluated batched from precision matrices (2x2 stacks)."""
    det1 = p1[..., 0, 0] * p1[..., 1, 1] - p1[..., 0, 1] * p1[..., 1, 0]
    det2 = p2[..., 0, 0] * p2[..., 1, 1] - p2[..., 0, 1] * p2[..., 1, 0]
    # M1 = P1^-1; tr(P2 M1) = (P2 : adj(P1)^T) / det1 with 2x2 adjugate
    tr_p2m1 = (
        p2[..., 0, 0] * p1[..., 1, 1]
        - p2[..., 0, 1] * p1[..., 1, 0]
        - p2[..., 1, 0] * p1[..., 0, 1]
        + p2[..., 1, 1] * p1[..., 0, 0]
    ) / det1
    entropy = 0.5 * (tr_p2m1 - 2.0 + np.log(det1 / det2))
    delta = p2 - p1
    adj1 = np.empty_like(p1)
    adj1[..., 0, 0] = p1[..., 1, 1]
    adj1[..., 0, 1] = -p1[..., 0, 1]
    adj1[..., 1, 0] = -p1[..., 1, 0]
    adj1[..., 1, 1] = p1[..., 0, 0]
    m1 = adj1 / det1[..., None, None]
    fisher = np.einsum("...ij,...jk,...ki->...", delta, m1, delta)
    return entropy, fisher


def entropy_dissipation_check(
    m0_1: ConfTensor,
    m0_2: ConfTensor,
    params: ModelParams,
    kappa,
    ode_config: OdeConfig,
) -> EntropyDissipationSeries:
    """Evolve two Gaussian solutions of the same linear equation and check
    dH/dt = -I.

    The drift matrix K(t) is fixed from the closure trajectory started at
    m0_1 (the designated solution); both precision matrices are integrated
    under that shared K. H is recorded at every step so the finite-difference
    derivative resolves the identity to ~1e-6.
    """
    karr = kappa.kappa if isinstance(kappa, FlowMatrix) else np.asarray(kappa, dtype=float)
    n, l2, d = params.n_conc, params.length_sq, params.dim
    if d != 2:
        raise InvalidStateError("entropy experiment runs in dimension 2")
    h = ode_config.step
    nsteps = int(round(ode_config.t_end / h))

    m_ref = m0_1.m.copy()
    p = np.stack([np.linalg.inv(m0_1.m), np.linalg.inv(m0_2.m)])

    def joint_rhs(m, pp):
        k_t = _drift_k_raw(m, karr, n)
        pk = pp @ k_t
        return (
            _rhs_matrix_raw(m, karr, n, l2, d),
            pk + np.swapaxes(pk, -1, -2) - 2.0 * (pp @ pp),
        )

    times = np.empty(nsteps + 1)
    ent = np.empty(nsteps + 1)
    fis = np.empty(nsteps + 1)

    def record(i):
        times[i] = i * h
        e, f = _entropy_fisher_from_precisions(p[0], p[1])
        ent[i] = e
        fis[i] = f
        det = p[:, 0, 0] * p[:, 1, 1] - p[:, 0, 1] * p[:, 1, 0]
        if np.any(det <= 0.0) or np.any(np.trace(p, axis1=-2, axis2=-1) <= 0.0):
            raise NumericalStateError(
                f"precision matrix lost positive definiteness at t = {i * h:.6g}"
            )

    record(0)
    for i in range(nsteps):
        k1m, k1p = joint_rhs(m_ref, p)
        k2m, k2p = joint_rhs(m_ref + 0.5 * h * k1m, p + 0.5 * h * k1p)
        k3m, k3p = joint_rhs(m_ref + 0.5 * h * k2m, p + 0.5 * h * k2p)
        k4m, k4p = joint_rhs(m_ref + h * k3m, p + h * k3p)
        m_ref = m_ref + (h / 6.0) * (k1m + 2 * k2m + 2 * k3m + k4m)
        p = p + (h / 6.0) * (k1p + 2 * k2p + 2 * k3p + k4p)
        record(i + 1)

    residual = np.full(nsteps + 1, np.nan)
    if nsteps >= 4:
        dh = (-ent[4:] + 8.0 * ent[3:-1] - 8.0 * ent[1:-3] + ent[:-4]) / (12.0 * h)
        residual[2:-2] = np.abs(dh + fis[2:-2])
    return EntropyDissipationSeries(times=times, entropy=ent, fisher=fis, residual=residual)


def lsi_constant(cycle: CycleReport) -> float:
    """Uniform log-Sobolev constant of the periodic Gaussian solution.

    mu = min over the period of 1 / lambda_max(M_per(t)); for the 2x2
    unit-trace orbit lambda_max = 1/2 + r, so mu = 1 / (1/2 + max r) and is
    bounded below by 1 / (1/2 + r2).
    """
    r = np.hypot(cycle.orbit_xy[:, 0], cycle.orbit_xy[:, 1])
    return float(1.0 / (0.5 + r.max()))


@dataclass
class PsiConvergence:
    """Entropy gap to the periodic Gaussian and its fitted decay rate."""

    nu: float
    times: np.ndarray
    entropy: np.ndarray

    def to_csv(self, path) -> None:
        from .csvio import write_csv

        rows = ([t, hh] for t, hh in zip(self.times, self.entropy))
        write_csv(path, ["t", "entropy"], rows)


def _conf_from_xy(xy):
    out = np.empty(xy.shape[:-1] + (2, 2))
    out[..., 0, 0] = 0.5 + xy[..., 0]
    out[..., 0, 1] = xy[..., 1]
    out[..., 1, 0] = xy[..., 1]
    out[..., 1, 1] = 0.5 - xy[..., 0]
    return out


def _prec_from_cov2(m):
    det = m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    out = np.empty_like(m)
    out[..., 0, 0] = m[..., 1, 1]
    out[..., 0, 1] = -m[..., 0, 1]
    out[..., 1, 0] = -m[..., 1, 0]
    out[..., 1, 1] = m[..., 0, 0]
    return out / det[..., None, None]


def psi_convergence_experiment(
    m0: ConfTensor,
    cycle: CycleReport,
    params: ModelParams,
    ode_config: OdeConfig,
    horizon: float | None = None,
) -> PsiConvergence:
    """Decay of H(psi_M(t) | psi_Mper(t)) along phase-aligned trajectories.

    With Gaussian initial data the solution stays Gaussian with covariance
    M(t), so the entropy gap is a closed-form function of the aligned pair.
    Returns the fitted exponential rate nu (math.inf when m0 starts on the
    cycle and there is nothing to fit).
    """
    q0 = q_from_conf(m0)
    if not (cycle.annulus.r1 - 1e-12 <= q0.r <= cycle.annulus.r2 + 1e-12):
        raise RegimeError(
            f"initial radius {q0.r:.6g} outside annulus "
            f"[{cycle.annulus.r1:.6g}, {cycle.annulus.r2:.6g}]"
        )
    times, path, ref = aligned_orbit_gap(q0, cycle, params, ode_config, horizon)
    p1 = _prec_from_cov2(_conf_from_xy(path))
    p2 = _prec_from_cov2(_conf_from_xy(ref))
    ent, _ = _entropy_fisher_from_precisions(p1, p2)
    ent = np.maximum(ent, 0.0)
    nu = fit_exponential_tail(times, ent, floor_min=1e-14)
    return PsiConvergence(nu=nu, times=times, entropy=ent)
