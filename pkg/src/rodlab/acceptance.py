"""Acceptance criteria, each runnable by name (CLI full-suite) or via pytest.

Every criterion pins its tolerances here; the test module asserts on the
returned results and the CLI suite maps failures to exit code 4. Runtimes
are reported for information, not gated (they are desk-scale by design).
"""
from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .chaos import ChaosConfig, run_chaos_experiment
from .closure import OdeConfig, integrate, integrate_polar, integrate_xy
from .cycle import annulus, convergence_rate, find_cycle
from .gaussian import (
    GaussianState,
    _drift_k_raw,
    entropy_dissipation_check,
    fisher_information,
    fisher_information_quadrature,
    lsi_constant,
    psi_convergence_experiment,
    relative_entropy,
    relative_entropy_quadrature,
)
from .sde import SdeConfig, initial_gaussian_ensemble, run as run_sde
from .types import ModelParams, QState, conf_from_q, make_shear_kappa

CYCLE_PARAMS = ModelParams(pe=0.6, a=0.5, n_conc=2.0)
EPS1 = EPS2 = 0.05
H_STEP = 1e-3


@dataclass
class CriterionResult:
    cid: int
    name: str
    passed: bool
    details: dict = field(default_factory=dict)
    elapsed: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] criterion {self.cid:2d} {self.name:<28s} ({self.elapsed:6.1f} s)"


_cycle_cache: dict = {}


def _default_cycle():
    key = (CYCLE_PARAMS.pe, CYCLE_PARAMS.a, CYCLE_PARAMS.n_conc, EPS1, EPS2)
    if key not in _cycle_cache:
        spec = annulus(CYCLE_PARAMS, EPS1, EPS2)
        ode = OdeConfig(step=H_STEP, t_end=1.0)
        _cycle_cache[key] = (spec, find_cycle(CYCLE_PARAMS, spec, ode))
    return _cycle_cache[key]


def _random_trace1_pd(rng, scale=1.0):
    a = rng.standard_normal((2, 2)) * scale
    s = a @ a.T + 0.05 * np.eye(2)
    return s / np.trace(s)


def criterion_01_conservation() -> CriterionResult:
    """Trace and symmetry conservation over t in [0, 100] for 20 random starts."""
    rng = np.random.Generator(np.random.Philox(2024_01))
    m0 = np.stack([_random_trace1_pd(rng) for _ in range(20)])
    kappa = make_shear_kappa(CYCLE_PARAMS)
    traj = integrate(m0, CYCLE_PARAMS, kappa, OdeConfig(step=H_STEP, t_end=100.0, stride=10))
    trace_drift = traj.meta["max_trace_drift"]
    asym = traj.meta["max_asymmetry"]
    passed = trace_drift <= 1e-9 and asym <= 1e-10
    return CriterionResult(1, "conservation", passed, {
        "max_trace_drift": trace_drift, "tol_trace": 1e-9,
        "max_asymmetry": asym, "tol_asym": 1e-10,
    })


def criterion_02_representations() -> CriterionResult:
    """Matrix, (x, y), and polar integrations agree to 1e-8 over t in [0, 50]."""
    q0 = QState(0.3, 0.0)
    kappa = make_shear_kappa(CYCLE_PARAMS)
    ode = OdeConfig(step=H_STEP, t_end=50.0, stride=10)
    tm = integrate(conf_from_q(q0), CYCLE_PARAMS, kappa, ode)
    txy = integrate_xy(q0, CYCLE_PARAMS, ode)
    tpo = integrate_polar(q0.r, q0.phi if q0.r > 0 else 0.0, CYCLE_PARAMS, ode)
    xy_m = np.stack([tm.states[:, 0, 0] - 0.5, tm.states[:, 0, 1]], axis=1)
    xy_p = np.stack([
        tpo.states[:, 0] * np.cos(tpo.states[:, 1]),
        tpo.states[:, 0] * np.sin(tpo.states[:, 1]),
    ], axis=1)
    gap_mx = float(np.max(np.abs(xy_m - txy.states)))
    gap_px = float(np.max(np.abs(xy_p - txy.states)))
    gap_mp = float(np.max(np.abs(xy_m - xy_p)))
    worst = max(gap_mx, gap_px, gap_mp)
    return CriterionResult(2, "representation-equivalence", worst <= 1e-8, {
        "matrix_vs_xy": gap_mx, "polar_vs_xy": gap_px, "matrix_vs_polar": gap_mp,
        "tol": 1e-8,
    })


def criterion_03_annulus() -> CriterionResult:
    """Annulus forward-invariance and angular monotonicity over t in [0, 200]."""
    spec, _ = _default_cycle()
    rng = np.random.Generator(np.random.Philox(2024_03))
    radii = np.linspace(spec.r1, spec.r2, 10)
    phis = rng.uniform(0.0, 2.0 * np.pi, size=10)
    starts = np.stack([radii * np.cos(phis), radii * np.sin(phis)], axis=1)
    traj = integrate_xy(starts, CYCLE_PARAMS, OdeConfig(step=H_STEP, t_end=200.0, stride=10))
    r = np.hypot(traj.states[..., 0], traj.states[..., 1])
    r_min, r_max = float(r.min()), float(r.max())
    inside = (r_min >= spec.r1 - 1e-12) and (r_max <= spec.r2 + 1e-12)
    cosphi = traj.states[..., 0] / r
    dphi = -CYCLE_PARAMS.pe * (1.0 - 0.5 * CYCLE_PARAMS.a / r * cosphi)
    max_dphi = float(dphi.max())
    return CriterionResult(3, "annulus-invariance", inside and max_dphi < 0.0, {
        "r_min": r_min, "r1": spec.r1, "r_max": r_max, "r2": spec.r2,
        "max_dphi_dt": max_dphi,
    })


def criterion_04_floquet() -> CriterionResult:
    """Quadrature and finite-difference Floquet multipliers agree to 5%."""
    _, report = _default_cycle()
    ratio_gap = abs(math.exp(report.log_rho_tilde - report.log_rho) - 1.0)
    both_below_one = report.log_rho < 0.0 and report.log_rho_tilde < 0.0
    return CriterionResult(4, "floquet-consistency", ratio_gap <= 0.05 and both_below_one, {
        "log_rho": report.log_rho, "log_rho_tilde": report.log_rho_tilde,
        "relative_gap": ratio_gap, "tol": 0.05,
        "rho": report.rho, "rho_tilde": report.rho_tilde,
    })


def criterion_05_convergence_rate() -> CriterionResult:
    """Phase-aligned orbit error decays at the Floquet rate (15%), 3 starts."""
    _, report = _default_cycle()
    ode = OdeConfig(step=H_STEP, t_end=1.0)
    lam = report.decay_rate
    details = {"lambda": lam, "tol_rel": 0.15}
    passed = True
    for i, x0 in enumerate((0.30, 0.36, 0.40)):
        rate = convergence_rate(conf_from_q(QState(x0, 0.0)), report, CYCLE_PARAMS, ode)
        details[f"rate_x0_{x0}"] = rate
        passed &= math.isfinite(rate) and abs(rate - lam) / lam <= 0.15
    return CriterionResult(5, "exponential-convergence", passed, details)


def criterion_06_gaussian_identity() -> CriterionResult:
    """Residual of the inverse-covariance evolution identity <= 1e-6."""
    kappa = make_shear_kappa(CYCLE_PARAMS)
    ode = OdeConfig(step=H_STEP, t_end=10.0, stride=1)
    traj = integrate(conf_from_q(QState(0.3, 0.0)), CYCLE_PARAMS, kappa, ode)
    m = traj.states
    det = m[:, 0, 0] * m[:, 1, 1] - m[:, 0, 1] * m[:, 1, 0]
    p = np.empty_like(m)
    p[:, 0, 0] = m[:, 1, 1]
    p[:, 0, 1] = -m[:, 0, 1]
    p[:, 1, 0] = -m[:, 1, 0]
    p[:, 1, 1] = m[:, 0, 0]
    p /= det[:, None, None]
    k = _drift_k_raw(m, kappa.kappa, CYCLE_PARAMS.n_conc)
    pk = p @ k
    rhs = pk + np.swapaxes(pk, -1, -2) - 2.0 * (p @ p)
    h = H_STEP
    dp = (-p[4:] + 8.0 * p[3:-1] - 8.0 * p[1:-3] + p[:-4]) / (12.0 * h)
    resid = np.linalg.norm(dp - rhs[2:-2], axis=(1, 2))
    worst = float(resid.max())
    return CriterionResult(6, "gaussian-fp-identity", worst <= 1e-6, {
        "max_residual": worst, "tol": 1e-6,
    })


def criterion_07_entropy_dissipation() -> CriterionResult:
    """Closed forms validated by quadrature; H nonincreasing; |dH/dt + I| <= 1e-5."""
    rng = np.random.Generator(np.random.Philox(2024_07))
    worst_h = worst_i = 0.0
    for _ in range(10):
        a = rng.standard_normal((2, 2))
        c1 = a @ a.T + 0.3 * np.eye(2)
        b = rng.standard_normal((2, 2))
        c2 = b @ b.T + 0.3 * np.eye(2)
        g1, g2 = GaussianState.from_cov(c1), GaussianState.from_cov(c2)
        worst_h = max(worst_h, abs(relative_entropy(g1, g2) - relative_entropy_quadrature(g1, g2)))
        worst_i = max(worst_i, abs(fisher_information(g1, g2) - fisher_information_quadrature(g1, g2)))
    quad_ok = worst_h <= 1e-6 and worst_i <= 1e-6

    kappa = make_shear_kappa(CYCLE_PARAMS)
    series = entropy_dissipation_check(
        conf_from_q(QState(0.25, 0.05)),
        conf_from_q(QState(-0.2, 0.1)),
        CYCLE_PARAMS, kappa, OdeConfig(step=H_STEP, t_end=10.0, stride=1),
    )
    increments = np.diff(series.entropy)
    max_increase = float(increments.max())
    interior = np.isfinite(series.residual)
    max_resid = float(series.residual[interior].max())
    passed = quad_ok and max_increase <= 1e-15 and max_resid <= 1e-5
    return CriterionResult(7, "entropy-dissipation", passed, {
        "quad_gap_entropy": worst_h, "quad_gap_fisher": worst_i, "tol_quad": 1e-6,
        "max_entropy_increase": max_increase,
        "max_residual": max_resid, "tol_residual": 1e-5,
    })


def criterion_08_log_sobolev() -> CriterionResult:
    """H <= I / (2 mu) for 100 sampled pairs, and mu >= 1/(1/2 + r2)."""
    spec, report = _default_cycle()
    mu = lsi_constant(report)
    bound = 1.0 / (0.5 + spec.r2)
    rng = np.random.Generator(np.random.Philox(2024_08))
    idx = rng.integers(0, len(report.orbit_xy), size=100)
    worst_margin = -math.inf
    for j in idx:
        x, y = report.orbit_xy[j]
        per = GaussianState.from_cov(np.array([[0.5 + x, y], [y, 0.5 - x]]))
        a = rng.standard_normal((2, 2))
        cov = a @ a.T + 0.2 * np.eye(2)
        cov *= rng.uniform(0.5, 2.0) / np.trace(cov)
        psi = GaussianState.from_cov(cov)
        h = relative_entropy(psi, per)
        i = fisher_information(psi, per)
        worst_margin = max(worst_margin, h - i / (2.0 * mu))
    passed = worst_margin <= 1e-12 and mu >= bound - 1e-12
    return CriterionResult(8, "log-sobolev", passed, {
        "mu": mu, "lower_bound": bound, "worst_lsi_margin": worst_margin,
    })


def criterion_09_entropy_convergence() -> CriterionResult:
    """Entropy gap to the periodic Gaussian decays with nu within 2x of 2 lambda."""
    _, report = _default_cycle()
    ode = OdeConfig(step=H_STEP, t_end=1.0)
    result = psi_convergence_experiment(conf_from_q(QState(0.30, 0.0)), report,
                                        CYCLE_PARAMS, ode)
    two_lam = 2.0 * report.decay_rate
    nu = result.nu
    passed = math.isfinite(nu) and nu > 0 and two_lam / 2.0 <= nu <= 2.0 * two_lam
    return CriterionResult(9, "entropy-convergence", passed, {
        "nu": nu, "two_lambda": two_lam, "band": "factor 2",
    })


_criterion_10_memo: list = []


def criterion_10_meanfield_match() -> CriterionResult:
    """Variant-A moments track the moment ODE (0.02); A vs B agree (0.03).

    The two variants run as a paired comparison (same initial ensemble and
    same Brownian draws) so their difference isolates the noise-shape
    effect; this is plain common-random-numbers variance reduction, not a
    change of either model.

    Known red: the sup-gap between the n = 1e5 empirical moment and the
    moment ODE over t in [0, 10] is dominated by phase diffusion of the
    ensemble around the limit cycle, whose typical size at this (n, t) is
    0.03-0.2 (verified h-independent and ~n^(-1/2)); the 0.02 tolerance sits
    below that statistical floor for most seeds. Implemented exactly as
    stated with a neutral seed; see the decisions ledger.
    """
    if _criterion_10_memo:
        return _criterion_10_memo[0]
    params = CYCLE_PARAMS
    kappa = make_shear_kappa(params)
    n = 100_000
    cov0 = conf_from_q(QState(0.3, 0.0)).m
    init = initial_gaussian_ensemble(n, params, seed=2024_10, cov=cov0)
    cfg = SdeConfig(step=H_STEP, t_end=10.0, n_particles=n, seed=2024_11, stride=10)
    series_a = run_sde("meanfield-a", init, params, kappa, cfg)
    traj = integrate(series_a.m_emp[0], params, kappa,
                     OdeConfig(step=H_STEP, t_end=10.0, stride=10))
    k = min(len(traj.times), len(series_a.times))
    gap_ode = float(np.max(np.linalg.norm(series_a.m_emp[:k] - traj.states[:k], axis=(1, 2))))

    cfg_b = SdeConfig(step=H_STEP, t_end=5.0, n_particles=n, seed=2024_11, stride=10)
    series_b = run_sde("meanfield-b", init, params, kappa, cfg_b)
    kb = len(series_b.times)
    gap_ab = float(np.max(np.linalg.norm(
        series_a.m_emp[:kb] - series_b.m_emp[:kb], axis=(1, 2))))
    passed = gap_ode <= 0.02 and gap_ab <= 0.03
    result = CriterionResult(10, "meanfield-moment-match", passed, {
        "sup_gap_vs_ode": gap_ode, "tol_ode": 0.02,
        "sup_gap_a_vs_b": gap_ab, "tol_ab": 0.03, "n": n,
        "msq_max_dev": float(np.max(np.abs(series_a.msq_norm - 1.0))),
        "note": "tolerance below the statistical floor of the pinned (n, t); see ledger",
    })
    _criterion_10_memo.append(result)
    return result


def criterion_11_constraints() -> CriterionResult:
    """Sphere and replica constraints to 1e-12; replica I=1 matches original."""
    params = ModelParams(pe=0.5, a=0.5, n_conc=0.0)
    k = make_shear_kappa(params).kappa
    nsteps = 10_000
    h = H_STEP
    sqh = math.sqrt(h)

    gen = np.random.Generator(np.random.Philox(31))
    x = gen.standard_normal((64, 2))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    sphere_err = 0.0
    for _ in range(nsteps):
        db = gen.standard_normal((64, 2)) * sqh
        x, *_ = _kernels.sde_original_step2(x, db, k[0, 0], k[0, 1], k[1, 0], k[1, 1],
                                            0.0, 1.0, h)
        sphere_err = max(sphere_err, float(np.max(np.abs(np.linalg.norm(x, axis=1) - 1.0))))

    gen = np.random.Generator(np.random.Philox(32))
    xr = gen.standard_normal((64, 2))
    xr *= 1.0 / math.sqrt(float(np.mean(np.sum(xr * xr, axis=1))))
    replica_err = 0.0
    for _ in range(nsteps):
        db = gen.standard_normal((64, 2)) * sqh
        xr, *_ = _kernels.sde_replica_step2(xr, db, k[0, 0], k[0, 1], k[1, 0], k[1, 1],
                                            0.0, 1.0, h)
        msq = float(np.mean(np.sum(xr * xr, axis=1)))
        replica_err = max(replica_err, abs(msq - 1.0))

    gen = np.random.Generator(np.random.Philox(33))
    x1 = gen.standard_normal((1, 2))
    x1 /= np.linalg.norm(x1)
    x2 = x1.copy()
    path_gap = 0.0
    for _ in range(nsteps):
        db = gen.standard_normal((1, 2)) * sqh
        x1, *_ = _kernels.sde_original_step2(x1, db, k[0, 0], k[0, 1], k[1, 0], k[1, 1],
                                             0.0, 1.0, h)
        x2, *_ = _kernels.sde_replica_step2(x2, db, k[0, 0], k[0, 1], k[1, 0], k[1, 1],
                                            0.0, 1.0, h)
        path_gap = max(path_gap, float(np.max(np.abs(x1 - x2))))

    passed = sphere_err <= 1e-12 and replica_err <= 1e-12 and path_gap <= 1e-14
    return CriterionResult(11, "constraint-exactness", passed, {
        "sphere_error": sphere_err, "replica_error": replica_err,
        "replica1_vs_original": path_gap, "tols": "1e-12 / 1e-12 / 1e-14",
    })


def criterion_12_chaos() -> CriterionResult:
    """Propagation-of-chaos slope in [-1.3, -0.7] with monotone means."""
    params = ModelParams(pe=0.5, a=0.5, n_conc=0.0)
    kappa = make_shear_kappa(params)
    config = ChaosConfig(replica_counts=(16, 64, 256, 1024), trials=200,
                         horizon=1.0, step=H_STEP, seed=1234)
    result = run_chaos_experiment(config, params, kappa)
    monotone = bool(np.all(np.diff(result.means) < 0.0))
    passed = -1.3 <= result.slope <= -0.7 and monotone
    details = {"slope": result.slope, "band": "[-1.3, -0.7]", "monotone": monotone,
               "r_squared": result.r_squared}
    details.update({f"mean_I{i}": m for i, m in zip(result.replica_counts, result.means)})
    return CriterionResult(12, "propagation-of-chaos", passed, details)


_DETERMINISM_SCENARIOS = """
name = det-ode
experiment = ode

[params]
pe = 0.6
a = 0.5
n_conc = 2.0

[ode]
x0 = 0.3
t_end = 5.0
---
name = det-cycle
experiment = cycle

[params]
pe = 0.6
a = 0.5
n_conc = 2.0
---
name = det-sde
experiment = sde

[params]
pe = 0.6
a = 0.5
n_conc = 2.0

[sde]
model = meanfield-a
n_particles = 2000
t_end = 1.0
---
name = det-entropy
experiment = entropy

[params]
pe = 0.6
a = 0.5
n_conc = 2.0

[entropy]
t_end = 2.0
---
name = det-chaos
experiment = chaos

[params]
pe = 0.5
a = 0.5
n_conc = 0.0

[chaos]
replica_counts = 8, 16, 32
trials = 20
horizon = 0.5
"""


def criterion_13_determinism() -> CriterionResult:
    """Re-runs with the same seed produce byte-identical CSVs; sweeps are
    thread-count independent."""
    import tempfile

    from .runner import execute, sweep
    from .scenario import parse_scenario

    details = {}
    passed = True
    with tempfile.TemporaryDirectory() as tmp:
        for block in _DETERMINISM_SCENARIOS.split("---"):
            scenario = parse_scenario(block)
            digests = []
            for attempt in range(2):
                out = os.path.join(tmp, f"{scenario.name}-{attempt}")
                res = execute(scenario, output_dir=out, seed=7, plot=False)
                if res.status != 0:
                    passed = False
                    details[scenario.name] = f"run failed: {res.error}"
                    break
                digests.append(_csv_digest(res.out_dir))
            else:
                same = digests[0] == digests[1]
                details[scenario.name] = "identical" if same else "MISMATCH"
                passed &= same

        sweep_scenario = parse_scenario(_DETERMINISM_SCENARIOS.split("---")[0])
        sweep_digests = []
        for label, workers in (("t1", 1), ("t4", 4)):
            out = os.path.join(tmp, f"sweep-{label}")
            res = sweep(sweep_scenario, "pe", [0.4, 0.6], output_dir=out,
                        seed=7, threads=workers, plot=False)
            if res.status != 0:
                passed = False
                details["sweep"] = f"run failed: {res.error}"
                break
            sweep_digests.append(_csv_digest(res.out_dir, recursive=True))
        else:
            same = sweep_digests[0] == sweep_digests[1]
            details["sweep_thread_independence"] = "identical" if same else "MISMATCH"
            passed &= same
    return CriterionResult(13, "determinism", passed, details)


def _csv_digest(root, recursive=False):
    import hashlib

    digests = {}
    if recursive:
        walker = (
            (os.path.relpath(os.path.join(dirpath, f), root), os.path.join(dirpath, f))
            for dirpath, _, files in os.walk(root)
            for f in files
        )
        # the sweep output nests under the row/run names; compare by relative path
        pairs = sorted(walker)
    else:
        pairs = sorted((f, os.path.join(root, f)) for f in os.listdir(root))
    for rel, full in pairs:
        if not rel.endswith(".csv"):
            continue
        with open(full, "rb") as fh:
            digests[rel] = hashlib.sha256(fh.read()).hexdigest()
    return digests


CRITERIA = (
    criterion_01_conservation,
    criterion_02_representations,
    criterion_03_annulus,
    criterion_04_floquet,
    criterion_05_convergence_rate,
    criterion_06_gaussian_identity,
    criterion_07_entropy_dissipation,
    criterion_08_log_sobolev,
    criterion_09_entropy_convergence,
    criterion_10_meanfield_match,
    criterion_11_constraints,
    criterion_12_chaos,
    criterion_13_determinism,
)


def run_criteria(names=None, progress=None) -> list[CriterionResult]:
    """Run all (or the named subset of) acceptance criteria.

    names may hold integers (criterion ids) or name fragments.
    """
    selected = []
    for i, fn in enumerate(CRITERIA, start=1):
        label = fn.__name__.replace("criterion_", "").split("_", 1)[1]
        if names is None:
            selected.append((i, fn))
            continue
        for want in names:
            text = str(want).strip()
            if text == str(i) or (not text.isdigit() and text in label):
                selected.append((i, fn))
                break
    results = []
    for _, fn in selected:
        started = time.time()
        res = fn()
        res.elapsed = time.time() - started
        results.append(res)
        if progress is not None:
            progress(res.line())
    return results
