"""Coupled replica / limit-process experiment measuring the O(1/I) rate.

For each replica count I and each trial, I i.i.d. samples of the limit
process' initial law are drawn, rescaled onto the replica constraint, and
both systems are advanced under bitwise-identical Brownian increments per
(trial, particle, step, component). The recorded statistic is the running
sup over time of |X^1 - Y^1|^2 per trial; the least-squares slope of
ln(mean) against ln(I) is the experiment's verdict.

The limit process needs its law term E(Y . kappa Y). For the plain (no
aligning drift) model this expectation is available exactly: the second
moment of Y satisfies the closed linear moment equation, so the law term is
precomputed by integrating that ODE and frozen as a time series. An
auxiliary particle-ensemble estimate of the law term is kept as an optional
mode for cross-checks; it injects O(n^-1/2) oracle noise and is not used by
the acceptance gate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .closure import _rhs_matrix_raw
from .errors import (
    DegenerateEnsembleError,
    FitError,
    InvalidParameterError,
)
from .types import FlowMatrix, ModelParams

SQRT2 = np.sqrt(2.0)
LAW_TERM_MODES = ("moment-ode", "particle-oracle")


@dataclass(frozen=True)
class ChaosConfig:
    replica_counts: tuple = (16, 64, 256, 1024)
    trials: int = 200
    horizon: float = 1.0
    step: float = 1e-3
    seed: int = 0
    y_oracle_particles: int = 100_000
    law_term: str = "moment-ode"
    maier_saupe: bool = False

    def __post_init__(self):
        counts = tuple(int(i) for i in self.replica_counts)
        if len(counts) < 1 or any(i < 1 for i in counts):
            raise InvalidParameterError("replica_counts must all be >= 1")
        if any(b <= a for a, b in zip(counts, counts[1:])):
            raise InvalidParameterError("replica_counts must be strictly increasing")
        object.__setattr__(self, "replica_counts", counts)
        if self.trials < 1:
            raise InvalidParameterError(f"trials must be >= 1, got {self.trials}")
        if not (self.horizon > 0.0 and self.step > 0.0):
            raise InvalidParameterError("horizon and step must be > 0")
        if self.y_oracle_particles < 1:
            raise InvalidParameterError("y_oracle_particles must be >= 1")
        if self.law_term not in LAW_TERM_MODES:
            raise InvalidParameterError(f"law_term must be one of {LAW_TERM_MODES}")


@dataclass
class ChaosResult:
    """Per-trial sup-errors, per-I aggregates, and the log-log fit."""

    replica_counts: tuple
    sup_errors: dict            # I -> (trials,) sup_t |X^1 - Y^1|^2
    comp2_sup_errors: dict      # same for component 2 (exchangeability probe)
    means: np.ndarray
    stderrs: np.ndarray
    slope: float
    intercept: float
    r_squared: float
    used_counts: tuple          # counts that entered the fit
    config: ChaosConfig = None
    params: ModelParams = None

    def trials_csv(self, path) -> None:
        from .csvio import write_csv

        rows = (
            [i_rep, trial, err]
            for i_rep in self.replica_counts
            for trial, err in enumerate(self.sup_errors[i_rep])
        )
        write_csv(path, ["I", "trial", "sup_error_sq"], rows)

    def summary_csv(self, path) -> None:
        from .csvio import write_csv

        rows = (
            [i_rep, m, s]
            for i_rep, m, s in zip(self.replica_counts, self.means, self.stderrs)
        )
        write_csv(path, ["I", "mean", "stderr"], rows)

    def fit_record(self) -> dict:
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "used_counts": ",".join(str(i) for i in self.used_counts),
        }


def limit_process_step(
    y_ensemble: np.ndarray,
    params: ModelParams,
    kappa,
    h: float,
    noise: np.ndarray,
    law_value: float | None = None,
    moment: np.ndarray | None = None,
) -> np.ndarray:
    """One Euler-Maruyama step of the limit (McKean-Vlasov) process.

    dY = kappa Y dt + sqrt(2) dB - (Y/L^2) E(Y . kappa Y) dt - d Y / L^2 dt.

    law_value supplies the frozen law term E(Y . kappa Y); when omitted it is
    replaced by the empirical mean over the ensemble itself. ``moment``
    optionally supplies E(Y (x) Y) for the extended Maier-Saupe drift.
    """
    k = kappa.kappa if isinstance(kappa, FlowMatrix) else np.asarray(kappa, dtype=float)
    y = np.asarray(y_ensemble, dtype=float)
    l2 = params.length_sq
    d = y.shape[-1]
    ky = y @ k.T
    if law_value is None:
        law_value = float(np.mean(np.einsum("...a,...a->...", y, ky)))
    drift = ky - (law_value / l2) * y - (d / l2) * y
    if params.n_conc > 0.0:
        if moment is None:
            flat = y.reshape(-1, d)
            moment = np.einsum("ia,ib->ab", flat, flat, optimize=False) / flat.shape[0]
        mm = float(np.sum(moment * moment))
        drift += 4.0 * params.n_conc * (y @ moment - (mm / l2) * y)
    return y + h * drift + SQRT2 * noise


def coupled_initial_conditions(y0_samples: np.ndarray, length: float) -> np.ndarray:
    """Rescale i.i.d. Y_0 samples onto the replica constraint.

    X^i_0 = L Y^i_0 ((1/I) sum |Y^j_0|^2)^(-1/2); the empirical mean-square
    norm of the output is L^2 exactly.
    """
    y0 = np.asarray(y0_samples, dtype=float)
    msq = np.mean(np.sum(y0 * y0, axis=-1), axis=-1)
    if np.any(msq <= 0.0):
        raise DegenerateEnsembleError("all-zero sample set")
    return length * y0 / np.sqrt(msq)[..., None, None]


def moment_ode_series(params: ModelParams, kappa, nsteps: int, h: float,
                      cov0: np.ndarray | None = None):
    """Second moment of the limit process on the step grid, plus the law term.

    M_Y satisfies the closed moment equation exactly (the law term is the
    scalar kappa : M_Y, no closure approximation is involved for the linear
    model). Returns (M array (nsteps+1, d, d), law array (nsteps+1,)).
    """
    k = kappa.kappa if isinstance(kappa, FlowMatrix) else np.asarray(kappa, dtype=float)
    d = params.dim
    m = (params.length_sq / d) * np.eye(d) if cov0 is None else np.array(cov0, dtype=float)
    n, l2 = params.n_conc, params.length_sq
    ms = np.empty((nsteps + 1, d, d))
    law = np.empty(nsteps + 1)
    ms[0] = m
    law[0] = float(np.sum(k * m))
    for i in range(nsteps):
        k1 = _rhs_matrix_raw(m, k, n, l2, d)
        k2 = _rhs_matrix_raw(m + 0.5 * h * k1, k, n, l2, d)
        k3 = _rhs_matrix_raw(m + 0.5 * h * k2, k, n, l2, d)
        k4 = _rhs_matrix_raw(m + h * k3, k, n, l2, d)
        m = m + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        ms[i + 1] = m
        law[i + 1] = float(np.sum(k * m))
    return ms, law


def _oracle_law_series(params, k, nsteps, h, n_particles, gen):
    """Empirical law-term series from an auxiliary self-consistent ensemble."""
    d = params.dim
    y = gen.standard_normal((n_particles, d)) * math.sqrt(params.length_sq / d)
    law = np.empty(nsteps + 1)
    sqh = math.sqrt(h)
    for i in range(nsteps + 1):
        ky = y @ k.T
        law[i] = float(np.mean(np.sum(y * ky, axis=1)))
        if i == nsteps:
            break
        noise = gen.standard_normal((n_particles, d)) * sqh
        y = limit_process_step(y, params, k, h, noise, law_value=law[i])
    return law


def _replica_coupled_sweep(i_rep, trials, params, k, law, moments, config):
    """All trials for one replica count, replica and limit systems coupled."""
    d = params.dim
    l2 = params.length_sq
    length = params.length
    h = config.step
    nsteps = int(round(config.horizon / h))
    gen = np.random.Generator(
        np.random.Philox(key=[config.seed, config.replica_counts.index(i_rep)])
    )
    y = gen.standard_normal((trials, i_rep, d)) * math.sqrt(l2 / d)
    x = coupled_initial_conditions(y, length)
    four_n = 4.0 * params.n_conc if config.maier_saupe else 0.0

    sup1 = np.sum((x[:, 0, :] - y[:, 0, :]) ** 2, axis=-1)
    sup2 = np.sum((x[:, 1, :] - y[:, 1, :]) ** 2, axis=-1) if i_rep > 1 else None
    sqh = math.sqrt(h)
    for step in range(nsteps):
        db = gen.standard_normal((trials, i_rep, d)) * sqh
        # replica system
        u = x @ k.T
        if four_n:
            mhat = np.einsum("tia,tib->tab", x, x, optimize=False) / i_rep
            u = u + four_n * np.einsum("tia,tab->tib", x, mhat, optimize=False)
        g = np.sum(x * u, axis=(1, 2))
        n2 = np.sum(x * x, axis=(1, 2))
        xb = np.sum(x * db, axis=(1, 2))
        xn = (
            x
            + h * (u - (g / n2)[:, None, None] * x - (d * i_rep - 1.0) * x / n2[:, None, None])
            + SQRT2 * (db - (xb / n2)[:, None, None] * x)
        )
        s = np.sum(xn * xn, axis=(1, 2))
        x = xn * np.sqrt(i_rep * l2 / s)[:, None, None]
        # limit process, same increments, frozen law term
        y = limit_process_step(
            y, params, k, h, db, law_value=law[step],
            moment=moments[step] if moments is not None else None,
        )
        e1 = np.sum((x[:, 0, :] - y[:, 0, :]) ** 2, axis=-1)
        np.maximum(sup1, e1, out=sup1)
        if sup2 is not None:
            e2 = np.sum((x[:, 1, :] - y[:, 1, :]) ** 2, axis=-1)
            np.maximum(sup2, e2, out=sup2)
    return sup1, sup2


def run_chaos_experiment(
    config: ChaosConfig,
    params: ModelParams,
    kappa,
    oracle_floor: float = 0.0,
) -> ChaosResult:
    """Coupled experiment across all replica counts with the log-log fit.

    Counts whose mean error sits within two standard errors of
    ``oracle_floor`` are excluded from the fit (relevant only for the
    particle-oracle law-term mode; the moment-ODE law term has no floor).
    """
    if len(config.replica_counts) < 3:
        raise FitError("need at least 3 replica counts for a slope fit")
    k = kappa.kappa if isinstance(kappa, FlowMatrix) else np.asarray(kappa, dtype=float)
    nsteps = int(round(config.horizon / config.step))

    if config.law_term == "moment-ode":
        moments, law = moment_ode_series(params, k, nsteps, config.step)
        moments = moments if config.maier_saupe else None
    else:
        gen = np.random.Generator(np.random.Philox(key=[config.seed, 10_007]))
        law = _oracle_law_series(params, k, nsteps, config.step,
                                 config.y_oracle_particles, gen)
        moments = None
        if config.maier_saupe:
            raise InvalidParameterError(
                "maier_saupe mode requires the moment-ode law term"
            )

    sup_errors = {}
    comp2 = {}
    for i_rep in config.replica_counts:
        s1, s2 = _replica_coupled_sweep(i_rep, config.trials, params, k, law, moments, config)
        sup_errors[i_rep] = s1
        if s2 is not None:
            comp2[i_rep] = s2

    means = np.array([sup_errors[i].mean() for i in config.replica_counts])
    stderrs = np.array([
        sup_errors[i].std(ddof=1) / math.sqrt(config.trials) if config.trials > 1 else 0.0
        for i in config.replica_counts
    ])
    if oracle_floor > 0.0:
        keep = means > oracle_floor + 2.0 * stderrs
    else:
        keep = np.ones(len(means), dtype=bool)
    used = tuple(i for i, k_ in zip(config.replica_counts, keep) if k_)
    if keep.sum() < 3:
        raise FitError("fewer than 3 replica counts above the oracle noise floor")
    ln_i = np.log(np.array(used, dtype=float))
    ln_e = np.log(means[keep])
    slope, intercept = np.polyfit(ln_i, ln_e, 1)
    pred = slope * ln_i + intercept
    ss_res = float(np.sum((ln_e - pred) ** 2))
    ss_tot = float(np.sum((ln_e - ln_e.mean()) ** 2))
    r_squared = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return ChaosResult(
        replica_counts=config.replica_counts,
        sup_errors=sup_errors,
        comp2_sup_errors=comp2,
        means=means,
        stderrs=stderrs,
        slope=float(slope),
        intercept=float(intercept),
        r_squared=r_squared,
        used_counts=used,
        config=config,
        params=params,
    )
