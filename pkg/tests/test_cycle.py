import math

import numpy as np
import pytest

from rodlab.closure import OdeConfig, rhs_xy
from rodlab.cycle import (
    annulus,
    convergence_rate,
    divergence,
    divergence_xy,
    dulac_margin,
    find_cycle,
    fit_exponential_tail,
    poincare_return,
)
from rodlab.errors import (
    InvalidParameterError,
    InvalidSlackError,
    NoReturnError,
    RegimeError,
)
from rodlab.types import ModelParams, QState, conf_from_q, q_from_polar

P = ModelParams(pe=0.6, a=0.5, n_conc=2.0)
ODE = OdeConfig(step=1e-3, t_end=1.0)


@pytest.fixture(scope="module")
def spec():
    return annulus(P, 0.05, 0.05)


@pytest.fixture(scope="module")
def cycle(spec):
    return find_cycle(P, spec, ODE)


def test_annulus_values(spec):
    assert abs(spec.r1 - math.sqrt(0.075)) <= 1e-15
    assert abs(spec.r2 - math.sqrt(0.175)) <= 1e-15
    expected_pe_max = 3.2 * min(math.sqrt(0.075) / 0.7, math.sqrt(0.175) / 0.3)
    assert abs(spec.pe_max - expected_pe_max) <= 1e-12
    assert abs(spec.pe_max - 1.25195) <= 1e-4  # headline number
    assert 0.0 < spec.r1 <= spec.r2 < 0.5


def test_annulus_slack_errors():
    with pytest.raises(InvalidSlackError):
        annulus(P, 0.125, 0.05)  # eps1 >= (N-1)/(4N)
    with pytest.raises(InvalidSlackError):
        annulus(P, 0.05, 0.125)  # eps2 >= 1/(4N)
    with pytest.raises(InvalidSlackError):
        annulus(P, -0.01, 0.05)


def test_annulus_regime_errors():
    with pytest.raises(RegimeError):
        annulus(ModelParams(pe=0.6, a=0.5, n_conc=1.2), 0.01, 0.01)
    # regime holds but the no-stationary-point condition fails
    with pytest.raises(RegimeError):
        annulus(ModelParams(pe=0.1, a=0.8, n_conc=3.0), 0.05, 0.05)


def test_divergence_examples():
    assert divergence(QState(0.0, 0.0), P) == 8.0
    r2 = (P.n_conc - 1.0) / (8.0 * P.n_conc)
    val = divergence(q_from_polar(math.sqrt(r2), 1.3),
                     ModelParams(pe=0.0, a=0.5, n_conc=2.0))
    assert abs(val) <= 1e-13


def test_divergence_matches_finite_differences():
    rng = np.random.default_rng(21)
    eps = 1e-5
    for _ in range(100):
        x, y = rng.uniform(-0.4, 0.4, size=2)
        fx1, _ = rhs_xy(QState(x + eps, y), P)
        fx0, _ = rhs_xy(QState(x - eps, y), P)
        _, fy1 = rhs_xy(QState(x, y + eps), P)
        _, fy0 = rhs_xy(QState(x, y - eps), P)
        fd = (fx1 - fx0) / (2 * eps) + (fy1 - fy0) / (2 * eps)
        assert abs(fd - divergence(QState(x, y), P)) <= 1e-6


def test_dulac_negativity_on_annulus_grid(spec):
    margin = dulac_margin(spec, P)
    assert margin < 0.0
    rr, th = np.meshgrid(np.linspace(spec.r1, spec.r2, 40),
                         np.linspace(0, 2 * math.pi, 80))
    vals = divergence_xy(rr * np.cos(th), rr * np.sin(th), P)
    assert vals.max() < 0.0
    assert vals.max() <= margin + 1e-12  # the bound is the grid's upper envelope


def test_poincare_preconditions():
    with pytest.raises(RegimeError):
        poincare_return(QState(0.3, 0.0), ModelParams(pe=0.0, a=0.5, n_conc=2.0), ODE)
    with pytest.raises(InvalidParameterError):
        poincare_return(QState(0.3, 0.1), P, ODE)
    with pytest.raises(InvalidParameterError):
        poincare_return(QState(-0.3, 0.0), P, ODE)


def test_poincare_no_return_budget():
    with pytest.raises(NoReturnError):
        poincare_return(QState(0.3, 0.0), P, ODE, max_time=0.5)


def test_poincare_fixed_point_returns_itself(cycle):
    q1, t1 = poincare_return(QState(cycle.x_star, 0.0), P, ODE)
    assert abs(q1.x - cycle.x_star) <= 1e-9
    assert abs(t1 - cycle.period) <= 1e-6


def test_poincare_return_monotone_order():
    xs = [0.29, 0.33, 0.37, 0.41]
    outs = [poincare_return(QState(x, 0.0), P, ODE)[0].x for x in xs]
    for a, b in zip(outs, outs[1:]):
        assert a <= b + 1e-12


def test_return_time_small_a_limit():
    p_small = ModelParams(pe=0.5, a=1e-4, n_conc=2.0)
    r_star = math.sqrt((p_small.n_conc - 1.0) / (4.0 * p_small.n_conc))
    _, t_ret = poincare_return(QState(r_star, 0.0), p_small, ODE)
    assert abs(t_ret - 2.0 * math.pi / p_small.pe) <= 1e-3


def test_find_cycle_regime_guard(spec):
    with pytest.raises(RegimeError):
        find_cycle(ModelParams(pe=1.5, a=0.5, n_conc=2.0), spec, ODE)


def test_cycle_report_basics(spec, cycle):
    assert spec.r1 < cycle.x_star < spec.r2
    assert 10.0 < cycle.period < 20.0
    # analytic reference for the near-circular orbit: 2 pi / (Pe sqrt(1 - k^2))
    k = P.a / (2.0 * math.sqrt(0.125))
    assert abs(cycle.period - 2 * math.pi / (P.pe * math.sqrt(1 - k * k))) < 0.05
    assert cycle.log_rho < 0.0 and cycle.log_rho_tilde < 0.0
    assert 0.0 < cycle.rho < 1.0 and 0.0 < cycle.rho_tilde < 1.0
    assert cycle.decay_rate > 0.0


def test_cycle_multiplier_estimators_agree(cycle):
    assert abs(math.exp(cycle.log_rho_tilde - cycle.log_rho) - 1.0) <= 0.05


def test_cycle_orbit_containment(spec, cycle):
    r = np.hypot(cycle.orbit_xy[:, 0], cycle.orbit_xy[:, 1])
    assert r.min() >= spec.r1 - 1e-12
    assert r.max() <= spec.r2 + 1e-12


def test_cycle_eig_bounds(spec, cycle):
    assert 0.5 - spec.r2 - 1e-12 <= cycle.eig_min
    assert cycle.eig_max <= 0.5 + spec.r2 + 1e-12
    assert cycle.eig_bounds == (cycle.eig_min, cycle.eig_max)


def test_cycle_iterates_monotone(cycle):
    xs = np.array(cycle.iterates)
    diffs = np.diff(xs)
    assert np.all(diffs >= -1e-12) or np.all(diffs <= 1e-12)


def test_cycle_unique_across_starts(spec, cycle):
    for x0 in np.linspace(spec.r1 + 0.01, spec.r2 - 0.01, 5):
        q1, _ = poincare_return(QState(float(x0), 0.0), P, ODE)
        q2, _ = poincare_return(q1, P, ODE)
        assert abs(q2.x - cycle.x_star) <= 1e-9


def test_convergence_rate_matches_floquet(cycle):
    lam = cycle.decay_rate
    rate = convergence_rate(conf_from_q(QState(0.30, 0.0)), cycle, P, ODE)
    assert abs(rate - lam) / lam <= 0.15
    rate2 = convergence_rate(conf_from_q(QState(0.40, 0.0)), cycle, P, ODE)
    assert abs(rate2 - rate) / rate <= 0.20


def test_convergence_rate_degenerate_on_cycle(cycle):
    m_on = conf_from_q(QState(cycle.x_star, 0.0))
    assert convergence_rate(m_on, cycle, P, ODE) == math.inf


def test_convergence_rate_annulus_guard(cycle):
    with pytest.raises(RegimeError):
        convergence_rate(conf_from_q(QState(0.1, 0.0)), cycle, P, ODE)


def test_fit_exponential_tail_recovers_rate():
    t = np.linspace(0, 5, 2000)
    e = 3.0 * np.exp(-4.0 * t) + 1e-14
    assert abs(fit_exponential_tail(t, e) - 4.0) <= 0.01
    flat = np.full_like(t, 1e-13)
    assert fit_exponential_tail(t, flat) == math.inf


def test_cycle_csv_export(tmp_path, cycle):
    path = tmp_path / "orbit.csv"
    cycle.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[1] == "t,x,y,r,phi"
    assert len(lines) == len(cycle.orbit_times) + 2
    summary = cycle.summary()
    assert summary["x_star"] == cycle.x_star
    assert summary["period"] == cycle.period
