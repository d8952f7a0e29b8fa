"""Shared parameter, tensor, and coordinate types with validated invariants.

Conventions: all quantities are dimensionless. The conformation tensor M is
symmetric positive semidefinite with tr(M) = L^2; normalized runs use L = 1.
Its traceless part in 2D is parameterized by (x, y) with M = Q + Id/2 and
Q = [[x, y], [y, -x]], or in polar form x = r cos(phi), y = r sin(phi).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    InvalidParameterError,
    InvalidStateError,
    UnsupportedDimensionError,
)

# Construction-time invariant checks use this absolute tolerance.
CONSTRUCTION_ATOL = 1e-10


@dataclass(frozen=True)
class ModelParams:
    """Physical parameters of the rod model.

    pe      -- Peclet number (shear strength), >= 0
    a       -- molecular shape parameter
    n_conc  -- concentration parameter, >= 0 (0 switches off the aligning drift)
    length  -- rod length L, > 0 (normalized runs use 1)
    dim     -- spatial dimension d, integer >= 2
    """

    pe: float
    a: float
    n_conc: float
    length: float = 1.0
    dim: int = 2

    def __post_init__(self):
        if not (self.pe >= 0.0):
            raise InvalidParameterError(f"pe must be >= 0, got {self.pe}")
        if not (self.n_conc >= 0.0):
            raise InvalidParameterError(f"n_conc must be >= 0, got {self.n_conc}")
        if not (self.length > 0.0):
            raise InvalidParameterError(f"length must be > 0, got {self.length}")
        if int(self.dim) != self.dim or self.dim < 2:
            raise InvalidParameterError(f"dim must be an integer >= 2, got {self.dim}")

    @property
    def length_sq(self) -> float:
        return self.length * self.length


@dataclass(frozen=True)
class FlowMatrix:
    """Velocity-gradient matrix of the ambient homogeneous flow (d x d)."""

    kappa: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.kappa, dtype=float)
        if k.ndim != 2 or k.shape[0] != k.shape[1]:
            raise InvalidStateError(f"kappa must be square, got shape {k.shape}")
        object.__setattr__(self, "kappa", k)

    @property
    def dim(self) -> int:
        return self.kappa.shape[0]


def make_shear_kappa(params: ModelParams) -> FlowMatrix:
    """Build the 2D simple-shear flow matrix (Pe/2) [[0, a+1], [a-1, 0]].

    Decomposes exactly as Pe (Omega + a D) with Omega skew-symmetric and D
    symmetric traceless.
    """
    if params.dim != 2:
        raise UnsupportedDimensionError(
            f"shear flow matrix is defined for dim = 2, got dim = {params.dim}"
        )
    half_pe = 0.5 * params.pe
    k = np.array(
        [[0.0, half_pe * (params.a + 1.0)], [half_pe * (params.a - 1.0), 0.0]]
    )
    return FlowMatrix(k)


@dataclass(frozen=True)
class ConfTensor:
    """Second-moment (conformation) tensor: symmetric PSD with positive trace.

    Symmetry and positive semidefiniteness are validated at construction, not
    structurally enforced, so integrator drift remains observable downstream.
    """

    m: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise InvalidStateError(f"conformation tensor must be square, got {m.shape}")
        asym = np.max(np.abs(m - m.T))
        if asym > CONSTRUCTION_ATOL:
            raise InvalidStateError(f"not symmetric: max |m - m^T| = {asym:.3e}")
        tr = float(np.trace(m))
        if tr <= 0.0:
            raise InvalidStateError(f"trace must be positive, got {tr}")
        eigmin = float(np.linalg.eigvalsh(0.5 * (m + m.T)).min())
        if eigmin < -CONSTRUCTION_ATOL:
            raise InvalidStateError(f"not PSD: min eigenvalue = {eigmin:.3e}")
        object.__setattr__(self, "m", m)

    @property
    def dim(self) -> int:
        return self.m.shape[0]

    @property
    def trace(self) -> float:
        return float(np.trace(self.m))


@dataclass(frozen=True)
class QState:
    """Traceless-part coordinates (x, y) of a 2D unit-trace tensor.

    The polar representation is exposed through the ``r`` / ``phi``
    properties (phi normalized to [0, 2*pi), with phi = 0 at r = 0 by
    convention: the polar vector field is singular at the origin and all
    cycle-regime trajectories stay in an annulus bounded away from it).
    """

    x: float
    y: float

    @property
    def r(self) -> float:
        return math.hypot(self.x, self.y)

    @property
    def phi(self) -> float:
        if self.x == 0.0 and self.y == 0.0:
            return 0.0
        return math.atan2(self.y, self.x) % (2.0 * math.pi)


def q_from_conf(m: ConfTensor) -> QState:
    """Extract (x, y) = (m11 - 1/2, m12) from a 2D unit-trace tensor."""
    if m.dim != 2:
        raise UnsupportedDimensionError(f"traceless coordinates need dim = 2, got {m.dim}")
    if abs(m.trace - 1.0) > CONSTRUCTION_ATOL:
        raise InvalidStateError(f"unit trace required, got tr = {m.trace!r}")
    return QState(x=float(m.m[0, 0] - 0.5), y=float(m.m[0, 1]))


def conf_from_q(q: QState) -> ConfTensor:
    """Rebuild the tensor M = Q + Id/2 from traceless coordinates."""
    return ConfTensor(np.array([[0.5 + q.x, q.y], [q.y, 0.5 - q.x]]))


def polar_from_q(q: QState) -> tuple[float, float]:
    """Return (r, phi) with phi in [0, 2*pi); (0, 0) maps to (0, 0)."""
    return q.r, q.phi


def q_from_polar(r: float, phi: float) -> QState:
    """Inverse polar map x = r cos(phi), y = r sin(phi)."""
    if r < 0.0:
        raise InvalidStateError(f"radius must be >= 0, got {r}")
    return QState(x=r * math.cos(phi), y=r * math.sin(phi))


@dataclass(frozen=True)
class Ensemble:
    """Particle positions plus the seed and time that produced them."""

    positions: np.ndarray  # (n, d)
    model_tag: str
    rng_seed: int
    time: float = 0.0

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[0] < 1:
            raise InvalidStateError(f"positions must be (n >= 1, d), got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise InvalidStateError("positions contain non-finite values")
        object.__setattr__(self, "positions", pos)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]


def cycle_regime_check(params: ModelParams) -> None:
    """Necessary parameter-level conditions for the limit-cycle analysis.

    Raises RegimeError unless dim = 2, |a| < 1 and n_conc > 1/(1 - a^2).
    The Peclet threshold depends on the annulus slacks and is checked by
    the limit-cycle module.
    """
    from .errors import RegimeError

    if params.dim != 2:
        raise RegimeError(f"cycle analysis requires dim = 2, got {params.dim}")
    if not abs(params.a) < 1.0:
        raise RegimeError(f"cycle regime requires |a| < 1, got a = {params.a}")
    n_min = 1.0 / (1.0 - params.a * params.a)
    if not params.n_conc > n_min:
        raise RegimeError(
            f"cycle regime requires n_conc > 1/(1-a^2) = {n_min:.6g}, got {params.n_conc}"
        )
