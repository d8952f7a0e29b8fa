import math

import numpy as np
import pytest

from rodlab.closure import OdeConfig, integrate, rhs_matrix
from rodlab.cycle import annulus, find_cycle
from rodlab.errors import InvalidStateError, RegimeError
from rodlab.gaussian import (
    GaussianState,
    drift_k,
    entropy_dissipation_check,
    fisher_information,
    fisher_information_quadrature,
    lsi_constant,
    prec_rhs,
    psi_convergence_experiment,
    relative_entropy,
    relative_entropy_quadrature,
)
from rodlab.types import ConfTensor, ModelParams, QState, conf_from_q, make_shear_kappa

P = ModelParams(pe=0.6, a=0.5, n_conc=2.0)
KAPPA = make_shear_kappa(P)


def random_pd(rng, ridge=0.3):
    a = rng.standard_normal((2, 2))
    return a @ a.T + ridge * np.eye(2)


@pytest.fixture(scope="module")
def cycle():
    spec = annulus(P, 0.05, 0.05)
    return find_cycle(P, spec, OdeConfig(step=1e-3, t_end=1.0))


def test_drift_k_isotropic_examples():
    m = 0.5 * np.eye(2)
    for n_conc in (0.0, 2.0, 5.0):
        p = ModelParams(pe=0.6, a=0.5, n_conc=n_conc)
        k = drift_k(m, p, KAPPA).k
        np.testing.assert_allclose(k, -KAPPA.kappa + 2.0 * np.eye(2), atol=1e-14)
    p0 = ModelParams(pe=0.0, a=0.5, n_conc=3.0)
    k0 = drift_k(m, p0, make_shear_kappa(p0)).k
    np.testing.assert_allclose(k0, 2.0 * np.eye(2), atol=1e-14)


def test_drift_k_reconstruction():
    rng = np.random.default_rng(31)
    for _ in range(20):
        s = random_pd(rng)
        m = s / np.trace(s)
        k = drift_k(m, P, KAPPA).k
        km = np.sum(KAPPA.kappa * m)
        mm = np.sum(m * m)
        rebuilt = (-KAPPA.kappa + km * np.eye(2)
                   + 4.0 * P.n_conc * (-m + mm * np.eye(2)) + 2.0 * np.eye(2))
        np.testing.assert_allclose(k, rebuilt, atol=1e-14)


def test_drift_k_trace_precondition():
    with pytest.raises(InvalidStateError):
        drift_k(np.eye(2), P, KAPPA)


def test_drift_k_compatible_with_moment_rhs():
    # -(K M + M K^T) + 2 Id must equal the closed moment derivative
    rng = np.random.default_rng(32)
    for _ in range(100):
        s = random_pd(rng)
        m = s / np.trace(s)
        k = drift_k(m, P, KAPPA).k
        lhs = -(k @ m + m @ k.T) + 2.0 * np.eye(2)
        rhs = rhs_matrix(ConfTensor(m), P, KAPPA)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_prec_rhs_stationary_balance_and_symmetry():
    rng = np.random.default_rng(33)
    p = random_pd(rng)
    out = prec_rhs(p, p)  # K = P balances drift against diffusion
    np.testing.assert_allclose(out, np.zeros((2, 2)), atol=1e-14)
    for _ in range(20):
        pm = random_pd(rng)
        k = rng.standard_normal((2, 2))
        out = prec_rhs(pm, k)
        assert np.array_equal(out, out.T)


def test_prec_rhs_matches_inverse_finite_differences(cycle):
    cfg = OdeConfig(step=1e-3, t_end=2.0, stride=1)
    traj = integrate(conf_from_q(QState(0.3, 0.0)), P, KAPPA, cfg)
    m = traj.states
    p = np.linalg.inv(m)
    k = np.stack([drift_k(mi, P, KAPPA).k for mi in m[2:-2]])
    rhs = np.stack([prec_rhs(pi, ki) for pi, ki in zip(p[2:-2], k)])
    h = 1e-3
    dp = (-p[4:] + 8.0 * p[3:-1] - 8.0 * p[1:-3] + p[:-4]) / (12.0 * h)
    resid = np.linalg.norm(dp - rhs, axis=(1, 2))
    assert resid.max() <= 1e-6


def test_trace_compatibility_identity():
    # tr(P^-1 dP/dt)/2 = tr(K - P) follows algebraically from the matrix law
    rng = np.random.default_rng(34)
    for _ in range(50):
        p = random_pd(rng)
        k = rng.standard_normal((2, 2))
        dp = prec_rhs(p, k)
        lhs = 0.5 * np.trace(np.linalg.inv(p) @ dp)
        rhs = np.trace(k - p)
        assert abs(lhs - rhs) <= 1e-8


def test_relative_entropy_properties():
    rng = np.random.default_rng(35)
    g = GaussianState.from_cov(random_pd(rng))
    assert relative_entropy(g, g) == 0.0
    g2 = GaussianState.from_cov(random_pd(rng))
    assert relative_entropy(g, g2) > 0.0
    assert relative_entropy(g2, g) > 0.0
    with pytest.raises(InvalidStateError):
        GaussianState.from_cov(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_fisher_information_properties():
    rng = np.random.default_rng(36)
    g = GaussianState.from_cov(random_pd(rng))
    assert fisher_information(g, g) == 0.0
    g2 = GaussianState.from_cov(random_pd(rng))
    assert fisher_information(g, g2) > 0.0


def test_closed_forms_match_quadrature():
    rng = np.random.default_rng(37)
    for _ in range(3):
        g1 = GaussianState.from_cov(random_pd(rng))
        g2 = GaussianState.from_cov(random_pd(rng))
        assert abs(relative_entropy(g1, g2) - relative_entropy_quadrature(g1, g2)) <= 1e-6
        assert abs(fisher_information(g1, g2) - fisher_information_quadrature(g1, g2)) <= 1e-6


def test_pairwise_log_sobolev():
    rng = np.random.default_rng(38)
    for _ in range(100):
        g1 = GaussianState.from_cov(random_pd(rng))
        g2 = GaussianState.from_cov(random_pd(rng))
        mu = 1.0 / np.linalg.eigvalsh(g2.cov).max()
        h = relative_entropy(g1, g2)
        i = fisher_information(g1, g2)
        assert h <= i / (2.0 * mu) + 1e-12


def test_entropy_dissipation_equal_starts():
    m0 = conf_from_q(QState(0.2, 0.1))
    series = entropy_dissipation_check(m0, m0, P, KAPPA, OdeConfig(step=1e-3, t_end=0.5, stride=1))
    assert np.max(np.abs(series.entropy)) <= 1e-12
    assert np.max(np.abs(series.fisher)) <= 1e-12


def test_entropy_dissipation_identity():
    series = entropy_dissipation_check(
        conf_from_q(QState(0.25, 0.05)), conf_from_q(QState(-0.2, 0.1)),
        P, KAPPA, OdeConfig(step=1e-3, t_end=2.0, stride=1))
    assert np.all(np.diff(series.entropy) <= 1e-15)
    interior = np.isfinite(series.residual)
    assert series.residual[interior].max() <= 1e-5
    assert np.all(series.entropy >= 0.0)
    assert np.all(series.fisher >= 0.0)


def test_lsi_constant_bounds(cycle):
    mu = lsi_constant(cycle)
    assert mu >= 1.0 / (0.5 + cycle.annulus.r2) - 1e-12
    assert mu >= 1.0889  # plugged-in default-regime value
    assert mu < 2.0


def test_lsi_constant_isotropic_degenerate(cycle):
    # if the orbit were the isotropic fixed point, lambda_max = 1/2 and mu = 2
    from dataclasses import replace

    fixed = replace(cycle, orbit_xy=np.zeros((10, 2)))
    assert abs(lsi_constant(fixed) - 2.0) <= 1e-15


def test_psi_convergence(cycle):
    result = psi_convergence_experiment(
        conf_from_q(QState(0.30, 0.0)), cycle, P, OdeConfig(step=1e-3, t_end=1.0))
    two_lam = 2.0 * cycle.decay_rate
    assert two_lam / 2.0 <= result.nu <= 2.0 * two_lam
    # tail monotone where measurable
    mask = result.entropy > 1e-11
    tail = result.entropy[mask]
    assert np.all(np.diff(tail[len(tail) // 3:]) <= 1e-12)


def test_psi_convergence_degenerate(cycle):
    on_cycle = conf_from_q(QState(cycle.x_star, 0.0))
    result = psi_convergence_experiment(on_cycle, cycle, P, OdeConfig(step=1e-3, t_end=1.0))
    assert result.nu == math.inf


def test_psi_convergence_annulus_guard(cycle):
    with pytest.raises(RegimeError):
        psi_convergence_experiment(conf_from_q(QState(0.05, 0.0)), cycle, P,
                                   OdeConfig(step=1e-3, t_end=1.0))


def test_entropy_series_csv(tmp_path):
    series = entropy_dissipation_check(
        conf_from_q(QState(0.25, 0.05)), conf_from_q(QState(-0.2, 0.1)),
        P, KAPPA, OdeConfig(step=1e-3, t_end=0.1, stride=1))
    path = tmp_path / "entropy.csv"
    series.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,entropy,fisher,residual"
    assert len(lines) == len(series.times) + 1
