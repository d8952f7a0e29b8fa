import math

import numpy as np
import pytest

from rodlab.chaos import (
    ChaosConfig,
    coupled_initial_conditions,
    limit_process_step,
    moment_ode_series,
    run_chaos_experiment,
)
from rodlab.errors import DegenerateEnsembleError, FitError, InvalidParameterError
from rodlab.types import ModelParams, make_shear_kappa

P = ModelParams(pe=0.5, a=0.5, n_conc=0.0)
KAPPA = make_shear_kappa(P)
H = 1e-3


def test_chaos_config_validation():
    with pytest.raises(InvalidParameterError):
        ChaosConfig(replica_counts=(16, 8))
    with pytest.raises(InvalidParameterError):
        ChaosConfig(replica_counts=(0, 4))
    with pytest.raises(InvalidParameterError):
        ChaosConfig(trials=0)
    with pytest.raises(InvalidParameterError):
        ChaosConfig(law_term="lookup-table")


def test_limit_process_zero_noise_decay():
    # kappa = 0 removes the law term; dY = -2 Y dt integrates to exp(-2t)
    p0 = ModelParams(pe=0.0, a=0.0, n_conc=0.0)
    y = np.array([[1.0, 0.5]])
    h = 1e-4
    for _ in range(10_000):
        y = limit_process_step(y, p0, np.zeros((2, 2)), h, np.zeros((1, 2)))
    np.testing.assert_allclose(y, np.array([[1.0, 0.5]]) * math.exp(-2.0), atol=5 * h)


def test_limit_process_ou_stationary_covariance():
    # kappa = 0: the limit process is an OU with stationary covariance Id/2
    p0 = ModelParams(pe=0.0, a=0.0, n_conc=0.0)
    n = 10_000
    gen = np.random.Generator(np.random.Philox(41))
    y = gen.standard_normal((n, 2)) * math.sqrt(0.5)
    sqh = math.sqrt(H)
    for _ in range(6000):
        y = limit_process_step(y, p0, np.zeros((2, 2)), H, gen.standard_normal((n, 2)) * sqh)
    cov = y.T @ y / n
    se = 3.0 * 0.5 * math.sqrt(2.0 / n)
    np.testing.assert_allclose(cov, 0.5 * np.eye(2), atol=3 * se)


def test_limit_process_norm_conservation_under_shear():
    n = 10_000
    gen = np.random.Generator(np.random.Philox(42))
    y = gen.standard_normal((n, 2)) * math.sqrt(0.5)
    sqh = math.sqrt(H)
    band = 3.0 * 1.0 / math.sqrt(n)  # 3 x (std of |Y|^2) / sqrt(n)
    for step in range(1000):
        y = limit_process_step(y, P, KAPPA, H, gen.standard_normal((n, 2)) * sqh)
        if step % 100 == 0:
            msq = float(np.mean(np.sum(y * y, axis=1)))
            assert abs(msq - 1.0) <= band * 2


def test_moment_ode_series_contract():
    ms, law = moment_ode_series(P, KAPPA, 1000, H)
    np.testing.assert_allclose(np.trace(ms, axis1=1, axis2=2), 1.0, atol=1e-12)
    np.testing.assert_allclose(law, np.sum(KAPPA.kappa * ms, axis=(1, 2)), atol=1e-14)


def test_coupled_initial_conditions():
    rng = np.random.default_rng(43)
    y0 = rng.standard_normal((64, 2))
    x0 = coupled_initial_conditions(y0, length=1.0)
    msq = np.mean(np.sum(x0 * x0, axis=1))
    assert abs(msq - 1.0) <= 1e-14
    # already normalized -> unchanged
    x1 = coupled_initial_conditions(x0, length=1.0)
    np.testing.assert_allclose(x1, x0, atol=1e-14)
    with pytest.raises(DegenerateEnsembleError):
        coupled_initial_conditions(np.zeros((8, 2)), length=1.0)


def test_initial_scaling_error_bound():
    # E|X0^1 - Y0^1|^2 <= Var(|Y0|^2) / (I L^2), Monte-Carlo check at I = 64
    rng = np.random.default_rng(44)
    i_rep = 64
    resamples = 1000
    errs = np.empty(resamples)
    norms_sq = []
    for j in range(resamples):
        y0 = rng.standard_normal((i_rep, 2)) * math.sqrt(0.5)
        x0 = coupled_initial_conditions(y0, length=1.0)
        errs[j] = np.sum((x0[0] - y0[0]) ** 2)
        norms_sq.extend(np.sum(y0 * y0, axis=1))
    bound = np.var(norms_sq, ddof=1) / i_rep  # Var(|Y0|^2) / (I L^2)
    se = errs.std(ddof=1) / math.sqrt(resamples)
    assert errs.mean() <= bound + 3 * se


def test_chaos_experiment_small():
    config = ChaosConfig(replica_counts=(8, 16, 32), trials=30, horizon=0.5,
                         step=H, seed=45)
    result = run_chaos_experiment(config, P, KAPPA)
    assert -1.6 <= result.slope <= -0.4
    assert np.all(np.diff(result.means) < 0.0)
    assert result.r_squared > 0.9
    again = run_chaos_experiment(config, P, KAPPA)
    for i_rep in config.replica_counts:
        np.testing.assert_array_equal(result.sup_errors[i_rep], again.sup_errors[i_rep])


def test_chaos_exchangeability_components():
    config = ChaosConfig(replica_counts=(8, 16, 32), trials=30, horizon=0.5,
                         step=H, seed=45)
    result = run_chaos_experiment(config, P, KAPPA)
    # two-sample location test at the 5 percent level (Welch z)
    for i_rep in (16, 32):
        e1 = result.sup_errors[i_rep]
        e2 = result.comp2_sup_errors[i_rep]
        z = (e1.mean() - e2.mean()) / math.sqrt(
            e1.var(ddof=1) / len(e1) + e2.var(ddof=1) / len(e2))
        assert abs(z) < 1.96


def test_chaos_needs_three_counts():
    with pytest.raises(FitError):
        run_chaos_experiment(
            ChaosConfig(replica_counts=(8, 16), trials=5, horizon=0.1, step=H, seed=1),
            P, KAPPA)


def test_chaos_particle_oracle_mode():
    # at this oracle size the law-term noise floor (~1/sqrt(5000)) swamps the
    # large-I means; only the floor-free decrement and basic sanity are asserted
    config = ChaosConfig(replica_counts=(8, 16, 32), trials=10, horizon=0.3,
                         step=H, seed=46, law_term="particle-oracle",
                         y_oracle_particles=5000)
    result = run_chaos_experiment(config, P, KAPPA)
    assert np.all(result.means > 0.0) and np.all(np.isfinite(result.means))
    assert result.means[0] > result.means[-1]


def test_chaos_maier_saupe_mode():
    params = ModelParams(pe=0.5, a=0.5, n_conc=2.0)
    config = ChaosConfig(replica_counts=(8, 16, 32), trials=10, horizon=0.3,
                         step=H, seed=47, maier_saupe=True)
    result = run_chaos_experiment(config, params, make_shear_kappa(params))
    assert np.all(result.means > 0.0)
    assert np.all(np.diff(result.means) < 0.0)


def test_chaos_csv_exports(tmp_path):
    config = ChaosConfig(replica_counts=(4, 8, 16), trials=5, horizon=0.1, step=H, seed=48)
    result = run_chaos_experiment(config, P, KAPPA)
    trials = tmp_path / "trials.csv"
    summary = tmp_path / "summary.csv"
    result.trials_csv(trials)
    result.summary_csv(summary)
    tl = trials.read_text().splitlines()
    assert tl[0] == "I,trial,sup_error_sq"
    assert len(tl) == 1 + 3 * 5
    sl = summary.read_text().splitlines()
    assert sl[0] == "I,mean,stderr"
    assert len(sl) == 4
    rec = result.fit_record()
    assert set(rec) == {"slope", "intercept", "r_squared", "used_counts"}
