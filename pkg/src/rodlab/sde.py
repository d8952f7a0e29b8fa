"""Seeded Monte-Carlo integrators for the four stochastic rod models.

Models (selected by tag):

* ``original``     sphere-constrained rods; Euler-Maruyama on the Ito form
  with exact renormalization to |X| = L each step (or the Heun/Stratonovich
  scheme as a cross-check).
* ``meanfield-a``  mean-field variant with identity noise; the constraint
  E|X|^2 = L^2 holds in law only.
* ``meanfield-b``  mean-field variant with shaped noise R R^T = Id - M/tr(M).
* ``replica``      I replicas projected onto the shared constraint
  (1/I) sum |X^i|^2 = L^2, rescaled exactly each step.

Expectations in the drifts are replaced by same-ensemble empirical averages
(the particle approximation of the McKean-Vlasov structure). Noise comes
from a counter-based Philox generator keyed by the seed and consumed in a
fixed order, and all cross-particle reductions are sequential, so output is
a pure function of (model_tag, initial, params, config) regardless of
thread availability.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import (
    DegenerateEnsembleError,
    InvalidParameterError,
    InvalidStateError,
    NumericalStateError,
)
from .types import Ensemble, FlowMatrix, ModelParams

SQRT2 = np.sqrt(2.0)
MODEL_TAGS = ("original", "meanfield-a", "meanfield-b", "replica")
SCHEMES = ("euler-maruyama-project", "heun-stratonovich")

_CKPT_MAGIC = b"RODLABCK"
_CKPT_VERSION = 1


@dataclass(frozen=True)
class SdeConfig:
    step: float = 1e-3
    t_end: float = 1.0
    n_particles: int = 1000
    seed: int = 0
    scheme: str = "euler-maruyama-project"
    stride: int = 10

    def __post_init__(self):
        if not self.step > 0.0:
            raise InvalidParameterError(f"step must be > 0, got {self.step}")
        if not self.t_end > 0.0:
            raise InvalidParameterError(f"t_end must be > 0, got {self.t_end}")
        if self.n_particles < 1:
            raise InvalidParameterError(f"n_particles must be >= 1, got {self.n_particles}")
        if self.scheme not in SCHEMES:
            raise InvalidParameterError(f"scheme must be one of {SCHEMES}")
        if self.stride < 1:
            raise InvalidParameterError(f"stride must be >= 1, got {self.stride}")


@dataclass
class MomentSeries:
    """Empirical second moments recorded along an SDE run."""

    times: np.ndarray        # (k,)
    m_emp: np.ndarray        # (k, d, d)
    msq_norm: np.ndarray     # (k,) = trace of m_emp
    n: int
    seed: int
    model_tag: str
    params: ModelParams

    def to_csv(self, path) -> None:
        from .csvio import write_csv

        d = self.m_emp.shape[-1]
        iu = [(i, j) for i in range(d) for j in range(i, d)]
        header = ["t"] + [f"m{i+1}{j+1}" for i, j in iu] + ["msq_norm", "n", "seed"]
        comment = (
            f"model={self.model_tag} pe={self.params.pe!r} a={self.params.a!r} "
            f"n_conc={self.params.n_conc!r} length={self.params.length!r}"
        )
        rows = (
            [t] + [m[i, j] for i, j in iu] + [q, self.n, self.seed]
            for t, m, q in zip(self.times, self.m_emp, self.msq_norm)
        )
        write_csv(path, header, rows, comment=comment)


def empirical_second_moment(positions: np.ndarray) -> np.ndarray:
    """(1/n) sum X^i (x) X^i with a deterministic, thread-independent reduction."""
    return np.einsum("ia,ib->ab", positions, positions, optimize=False) / positions.shape[0]


def sphere_constraint_error(positions: np.ndarray, length: float) -> float:
    """max_i | ||X^i|| - L |, the original model's constraint residual."""
    return float(np.max(np.abs(np.linalg.norm(positions, axis=1) - length)))


def replica_constraint_error(positions: np.ndarray, length: float) -> float:
    """| (1/I) sum ||X^i||^2 - L^2 | / L^2, the replica constraint residual."""
    msq = float(np.mean(np.sum(positions * positions, axis=1)))
    return abs(msq - length * length) / (length * length)


# -- initial ensembles


def initial_sphere_ensemble(n: int, params: ModelParams, seed: int) -> Ensemble:
    """n points uniform on the sphere of radius L (for the original model)."""
    gen = np.random.Generator(np.random.Philox(seed))
    x = gen.standard_normal((n, params.dim))
    x *= params.length / np.linalg.norm(x, axis=1, keepdims=True)
    return Ensemble(positions=x, model_tag="original", rng_seed=seed)


def initial_gaussian_ensemble(
    n: int, params: ModelParams, seed: int, cov: np.ndarray | None = None,
    model_tag: str = "meanfield-a",
) -> Ensemble:
    """n Gaussian samples with covariance cov (default isotropic, tr = L^2)."""
    gen = np.random.Generator(np.random.Philox(seed))
    d = params.dim
    if cov is None:
        cov = (params.length_sq / d) * np.eye(d)
    cov = np.asarray(cov, dtype=float)
    w, v = np.linalg.eigh(cov)
    if w.min() < -1e-12:
        raise InvalidStateError("covariance must be PSD")
    root = v @ np.diag(np.sqrt(np.clip(w, 0.0, None))) @ v.T
    x = gen.standard_normal((n, d)) @ root.T
    return Ensemble(positions=x, model_tag=model_tag, rng_seed=seed)


def initial_replica_ensemble(
    n: int, params: ModelParams, seed: int, cov: np.ndarray | None = None,
) -> Ensemble:
    """Gaussian draws rescaled so (1/I) sum ||X^i||^2 = L^2 exactly."""
    base = initial_gaussian_ensemble(n, params, seed, cov, model_tag="replica")
    x = base.positions
    msq = float(np.mean(np.sum(x * x, axis=1)))
    if msq <= 0.0:
        raise DegenerateEnsembleError("all-zero sample set")
    x = x * (params.length / np.sqrt(msq))
    return Ensemble(positions=x, model_tag="replica", rng_seed=seed)


# -- generic (any d) step implementations; the d = 2 kernels must match these


def _step_original_np(x, db, k, four_n, length, h, heun=False):
    mhat = empirical_second_moment(x)
    d = x.shape[1]

    def tangential(pos):
        u = pos @ k.T + four_n * (pos @ mhat)
        r2 = np.sum(pos * pos, axis=1, keepdims=True)
        xu = np.sum(pos * u, axis=1, keepdims=True) / r2
        xb = np.sum(pos * db, axis=1, keepdims=True) / r2
        return u - xu * pos, SQRT2 * (db - xb * pos), r2

    a0, g0, r2 = tangential(x)
    if heun:
        pred = x + h * a0 + g0
        a1, g1, _ = tangential(pred)
        xn = x + 0.5 * h * (a0 + a1) + 0.5 * (g0 + g1)
    else:
        xn = x + h * (a0 - (d - 1.0) * x / r2) + g0
    xn *= length / np.linalg.norm(xn, axis=1, keepdims=True)
    return xn, mhat


def _meanfield_drift_coeff(mhat, k, four_n, lam):
    tr = float(np.trace(mhat))
    if tr <= 1e-12:
        raise DegenerateEnsembleError(f"tr(M_hat) = {tr:.3e} too small")
    km = float(np.sum(k * mhat))
    mm = float(np.sum(mhat * mhat))
    return (km + four_n * mm + lam) / tr


def _step_meanfield_a_np(x, db, k, four_n, h):
    """Drift predictor-corrector; the heun average removes the O(h) bias on
    the neutral mean-square-norm direction (no restoring force there)."""
    d = x.shape[1]
    mhat = empirical_second_moment(x)
    c = _meanfield_drift_coeff(mhat, k, four_n, d)
    a0 = x @ k.T + four_n * (x @ mhat) - c * x
    pred = x + h * a0 + SQRT2 * db
    pm = empirical_second_moment(pred)
    pc = _meanfield_drift_coeff(pm, k, four_n, d)
    a1 = pred @ k.T + four_n * (pred @ pm) - pc * pred
    xn = x + 0.5 * h * (a0 + a1) + SQRT2 * db
    return xn, mhat


def _step_meanfield_b_np(x, db, k, four_n, h):
    """Variant B: same drift treatment, noise shaped by R frozen at the
    step start."""
    d = x.shape[1]
    mhat = empirical_second_moment(x)
    c = _meanfield_drift_coeff(mhat, k, four_n, d - 1.0)
    shaped = db @ noise_sqrt_factor(mhat).T
    a0 = x @ k.T + four_n * (x @ mhat) - c * x
    pred = x + h * a0 + SQRT2 * shaped
    pm = empirical_second_moment(pred)
    pc = _meanfield_drift_coeff(pm, k, four_n, d - 1.0)
    a1 = pred @ k.T + four_n * (pred @ pm) - pc * pred
    xn = x + 0.5 * h * (a0 + a1) + SQRT2 * shaped
    return xn, mhat


def _step_replica_np(x, db, k, four_n, length, h):
    i_rep, d = x.shape
    mhat = empirical_second_moment(x)
    u = x @ k.T + four_n * (x @ mhat)
    g = float(np.sum(x * u))
    n2 = float(np.sum(x * x))
    xb = float(np.sum(x * db))
    xn = x + h * (u - (g / n2) * x - (d * i_rep - 1.0) * x / n2) + SQRT2 * (db - (xb / n2) * x)
    s = float(np.sum(xn * xn))
    xn *= np.sqrt(i_rep * length * length / s)
    return xn, mhat


def noise_sqrt_factor(mhat: np.ndarray) -> np.ndarray:
    """Symmetric square root R of Id - M/tr(M) (variant-B noise shape)."""
    d = mhat.shape[0]
    s = np.eye(d) - mhat / np.trace(mhat)
    w, v = np.linalg.eigh(s)
    if w.min() < -1e-10 or not np.all(np.isfinite(w)):
        raise NumericalStateError(f"noise factorization failed: eigenvalues {w}")
    return v @ np.diag(np.sqrt(np.clip(w, 0.0, None))) @ v.T


# -- public single-step operations (Ensemble in, Ensemble out)


def _unwrap(ensemble, kappa):
    k = kappa.kappa if isinstance(kappa, FlowMatrix) else np.asarray(kappa, dtype=float)
    return ensemble.positions, k


def step_original(ensemble: Ensemble, params: ModelParams, kappa, h: float, noise) -> Ensemble:
    """One Euler-Maruyama step of the sphere-constrained model.

    noise carries the Brownian increments (std sqrt(h) per component); the
    step ends with exact renormalization to ||X^i|| = L.
    """
    x, k = _unwrap(ensemble, kappa)
    if x.shape[1] == 2:
        xn, *_ = _kernels.sde_original_step2(
            x, np.asarray(noise), k[0, 0], k[0, 1], k[1, 0], k[1, 1],
            4.0 * params.n_conc, params.length, h,
        )
    else:
        xn, _ = _step_original_np(x, np.asarray(noise), k, 4.0 * params.n_conc, params.length, h)
    return Ensemble(xn, "original", ensemble.rng_seed, ensemble.time + h)


def step_meanfield_a(ensemble: Ensemble, params: ModelParams, kappa, h: float, noise) -> Ensemble:
    """One drift predictor-corrector step of mean-field variant A."""
    x, k = _unwrap(ensemble, kappa)
    if x.shape[1] == 2:
        xn, m00, _, m11 = _kernels.sde_meanfield_a_step2(
            x, np.asarray(noise), k[0, 0], k[0, 1], k[1, 0], k[1, 1],
            4.0 * params.n_conc, float(x.shape[1]), h,
        )
        if m00 + m11 <= 1e-12:
            raise DegenerateEnsembleError(f"tr(M_hat) = {m00 + m11:.3e} too small")
    else:
        xn, _ = _step_meanfield_a_np(x, np.asarray(noise), k, 4.0 * params.n_conc, h)
    return Ensemble(xn, "meanfield-a", ensemble.rng_seed, ensemble.time + h)


def step_meanfield_b(ensemble: Ensemble, params: ModelParams, kappa, h: float, noise) -> Ensemble:
    """One drift predictor-corrector step of mean-field variant B (shaped noise)."""
    x, k = _unwrap(ensemble, kappa)
    if x.shape[1] == 2:
        xn, m00, _, m11, status = _kernels.sde_meanfield_b_step2(
            x, np.asarray(noise), k[0, 0], k[0, 1], k[1, 0], k[1, 1],
            4.0 * params.n_conc, float(x.shape[1]), h,
        )
        if m00 + m11 <= 1e-12:
            raise DegenerateEnsembleError(f"tr(M_hat) = {m00 + m11:.3e} too small")
        if status != 0:
            raise NumericalStateError("noise factorization failed")
    else:
        xn, _ = _step_meanfield_b_np(x, np.asarray(noise), k, 4.0 * params.n_conc, h)
    return Ensemble(xn, "meanfield-b", ensemble.rng_seed, ensemble.time + h)


def step_replica(ensemble: Ensemble, params: ModelParams, kappa, h: float, noise) -> Ensemble:
    """One Euler-Maruyama step of the projected replica system.

    The model itself has no aligning drift (pass n_conc = 0 in params for
    the plain case); a positive n_conc switches on the extended Maier-Saupe
    mode over the replica ensemble.
    """
    x, k = _unwrap(ensemble, kappa)
    if x.shape[1] == 2:
        xn, *_ = _kernels.sde_replica_step2(
            x, np.asarray(noise), k[0, 0], k[0, 1], k[1, 0], k[1, 1],
            4.0 * params.n_conc, params.length, h,
        )
    else:
        xn, _ = _step_replica_np(x, np.asarray(noise), k, 4.0 * params.n_conc, params.length, h)
    return Ensemble(xn, "replica", ensemble.rng_seed, ensemble.time + h)


# -- driver


def run(model_tag: str, initial: Ensemble, params: ModelParams, kappa,
        config: SdeConfig) -> MomentSeries:
    """Run a model from an initial ensemble, recording empirical moments.

    Records at t = 0, every ``stride`` steps, and at t_end. Bit-reproducible
    for fixed (model_tag, initial, params, config).
    """
    if model_tag not in MODEL_TAGS:
        raise InvalidParameterError(f"model_tag must be one of {MODEL_TAGS}")
    if config.scheme == "heun-stratonovich" and model_tag != "original":
        raise InvalidParameterError("heun-stratonovich scheme applies to the original model only")
    x = initial.positions.copy()
    if x.shape[0] != config.n_particles:
        raise InvalidParameterError(
            f"initial ensemble has n = {x.shape[0]}, config expects {config.n_particles}"
        )
    k = kappa.kappa if isinstance(kappa, FlowMatrix) else np.asarray(kappa, dtype=float)
    d = x.shape[1]
    length = params.length
    if model_tag == "original":
        err = sphere_constraint_error(x, length)
        if err > 1e-9 * max(1.0, length):
            raise InvalidStateError(f"initial ensemble violates sphere constraint: {err:.3e}")
    elif model_tag == "replica":
        err = replica_constraint_error(x, length)
        if err > 1e-9:
            raise InvalidStateError(f"initial ensemble violates replica constraint: {err:.3e}")

    h = config.step
    nsteps = int(round(config.t_end / h))
    gen = np.random.Generator(np.random.Philox(config.seed))
    sqh = np.sqrt(h)
    four_n = 4.0 * params.n_conc
    use_kernel = d == 2
    heun = config.scheme == "heun-stratonovich"

    times, moments = [], []

    def record(step_idx):
        m = empirical_second_moment(x)
        times.append(step_idx * h)
        moments.append(m)

    record(0)
    for step_idx in range(nsteps):
        db = gen.standard_normal((x.shape[0], d)) * sqh
        if model_tag == "original":
            if use_kernel:
                fn = _kernels.sde_original_heun_step2 if heun else _kernels.sde_original_step2
                x, *_ = fn(x, db, k[0, 0], k[0, 1], k[1, 0], k[1, 1], four_n, length, h)
            else:
                x, _ = _step_original_np(x, db, k, four_n, length, h, heun=heun)
        elif model_tag == "meanfield-a":
            if use_kernel:
                x, m00, _, m11 = _kernels.sde_meanfield_a_step2(
                    x, db, k[0, 0], k[0, 1], k[1, 0], k[1, 1], four_n, float(d), h)
                if m00 + m11 <= 1e-12:
                    raise DegenerateEnsembleError("ensemble second moment collapsed")
            else:
                x, _ = _step_meanfield_a_np(x, db, k, four_n, h)
        elif model_tag == "meanfield-b":
            if use_kernel:
                x, m00, _, m11, status = _kernels.sde_meanfield_b_step2(
                    x, db, k[0, 0], k[0, 1], k[1, 0], k[1, 1], four_n, float(d), h)
                if m00 + m11 <= 1e-12:
                    raise DegenerateEnsembleError("ensemble second moment collapsed")
                if status != 0:
                    raise NumericalStateError("noise factorization failed")
            else:
                x, _ = _step_meanfield_b_np(x, db, k, four_n, h)
        else:  # replica
            if use_kernel:
                x, *_ = _kernels.sde_replica_step2(
                    x, db, k[0, 0], k[0, 1], k[1, 0], k[1, 1], four_n, length, h)
            else:
                x, _ = _step_replica_np(x, db, k, four_n, length, h)
        if (step_idx + 1) % config.stride == 0 or step_idx + 1 == nsteps:
            record(step_idx + 1)

    times = np.array(times)
    m_emp = np.stack(moments)
    return MomentSeries(
        times=times,
        m_emp=m_emp,
        msq_norm=np.trace(m_emp, axis1=-2, axis2=-1),
        n=x.shape[0],
        seed=config.seed,
        model_tag=model_tag,
        params=params,
    )


def final_ensemble(model_tag: str, initial: Ensemble, params: ModelParams, kappa,
                   config: SdeConfig) -> Ensemble:
    """Positions after the full run (same path as ``run``, same draws)."""
    x = initial.positions.copy()
    k = kappa.kappa if isinstance(kappa, FlowMatrix) else np.asarray(kappa, dtype=float)
    gen = np.random.Generator(np.random.Philox(config.seed))
    h = config.step
    sqh = np.sqrt(h)
    nsteps = int(round(config.t_end / h))
    ens = Ensemble(x, model_tag, config.seed, initial.time)
    step_fns = {
        "original": step_original,
        "meanfield-a": step_meanfield_a,
        "meanfield-b": step_meanfield_b,
        "replica": step_replica,
    }
    fn = step_fns[model_tag]
    for _ in range(nsteps):
        db = gen.standard_normal((x.shape[0], x.shape[1])) * sqh
        ens = fn(ens, params, k, h, db)
        x = ens.positions
    return ens


# -- binary checkpoints (little-endian, versioned header)
#
# layout: magic "RODLABCK" | u32 version | u64 n | u32 d | i64 seed
#         | u64 step_index | f64 time | u32 tag_len | tag utf-8
#         | n*d f64 positions (row-major)


def save_checkpoint(path, ensemble: Ensemble, step_index: int = 0) -> None:
    tag = ensemble.model_tag.encode("utf-8")
    n, d = ensemble.positions.shape
    header = _CKPT_MAGIC + struct.pack(
        "<IQIqQdI", _CKPT_VERSION, n, d, ensemble.rng_seed, step_index,
        ensemble.time, len(tag),
    )
    payload = ensemble.positions.astype("<f8").tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(header + tag + payload)


def load_checkpoint(path) -> tuple[Ensemble, int]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(_CKPT_MAGIC)] != _CKPT_MAGIC:
        raise InvalidStateError("not a rodlab checkpoint")
    off = len(_CKPT_MAGIC)
    version, n, d, seed, step_index, time, tag_len = struct.unpack_from("<IQIqQdI", blob, off)
    if version != _CKPT_VERSION:
        raise InvalidStateError(f"unsupported checkpoint version {version}")
    off += struct.calcsize("<IQIqQdI")
    tag = blob[off: off + tag_len].decode("utf-8")
    off += tag_len
    pos = np.frombuffer(blob, dtype="<f8", count=n * d, offset=off).reshape(n, d).copy()
    return Ensemble(pos, tag, seed, time), step_index
