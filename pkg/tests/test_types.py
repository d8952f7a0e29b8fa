import math

import numpy as np
import pytest

from rodlab.errors import (
    InvalidParameterError,
    InvalidStateError,
    RegimeError,
    UnsupportedDimensionError,
)
from rodlab.types import (
    ConfTensor,
    Ensemble,
    ModelParams,
    QState,
    conf_from_q,
    cycle_regime_check,
    make_shear_kappa,
    polar_from_q,
    q_from_conf,
    q_from_polar,
)


def test_shear_kappa_zero_pe():
    k = make_shear_kappa(ModelParams(pe=0.0, a=0.5, n_conc=2.0)).kappa
    assert np.all(k == 0.0)


def test_shear_kappa_values():
    k = make_shear_kappa(ModelParams(pe=2.0, a=0.0, n_conc=2.0)).kappa
    np.testing.assert_allclose(k, [[0.0, 1.0], [-1.0, 0.0]], atol=0)
    k = make_shear_kappa(ModelParams(pe=1.0, a=1.0, n_conc=2.0)).kappa
    np.testing.assert_allclose(k, [[0.0, 1.0], [0.0, 0.0]], atol=0)


def test_shear_kappa_dimension_error():
    with pytest.raises(UnsupportedDimensionError):
        make_shear_kappa(ModelParams(pe=1.0, a=0.5, n_conc=2.0, dim=3))


def test_shear_kappa_omega_d_decomposition():
    # kappa = Pe (Omega + a D) with Omega skew, D symmetric traceless
    omega = 0.5 * np.array([[0.0, 1.0], [-1.0, 0.0]])
    dmat = 0.5 * np.array([[0.0, 1.0], [1.0, 0.0]])
    rng = np.random.default_rng(7)
    for _ in range(20):
        pe, a = rng.uniform(0, 3), rng.uniform(-1, 1)
        k = make_shear_kappa(ModelParams(pe=pe, a=a, n_conc=1.0)).kappa
        np.testing.assert_allclose(k, pe * (omega + a * dmat), atol=1e-15)


def test_params_validation():
    with pytest.raises(InvalidParameterError):
        ModelParams(pe=-0.1, a=0.5, n_conc=2.0)
    with pytest.raises(InvalidParameterError):
        ModelParams(pe=0.1, a=0.5, n_conc=-1.0)
    with pytest.raises(InvalidParameterError):
        ModelParams(pe=0.1, a=0.5, n_conc=2.0, length=0.0)
    with pytest.raises(InvalidParameterError):
        ModelParams(pe=0.1, a=0.5, n_conc=2.0, dim=1)
    # N = 0 is allowed (free rotational diffusion / replica experiments)
    ModelParams(pe=0.5, a=0.5, n_conc=0.0)


def test_q_from_conf_examples():
    q = q_from_conf(ConfTensor(0.5 * np.eye(2)))
    assert (q.x, q.y) == (0.0, 0.0)
    q = q_from_conf(ConfTensor([[0.75, 0.1], [0.1, 0.25]]))
    assert (q.x, q.y) == (0.25, 0.1)
    q = q_from_conf(ConfTensor([[1.0, 0.0], [0.0, 0.0]]))
    assert (q.x, q.y) == (0.5, 0.0)


def test_q_from_conf_trace_error():
    with pytest.raises(InvalidStateError):
        q_from_conf(ConfTensor([[0.8, 0.0], [0.0, 0.4]]))


def test_conf_q_roundtrip():
    rng = np.random.default_rng(11)
    for _ in range(100):
        a = rng.standard_normal((2, 2))
        s = a @ a.T + 0.05 * np.eye(2)
        m = ConfTensor(s / np.trace(s))
        back = conf_from_q(q_from_conf(m))
        np.testing.assert_allclose(back.m, m.m, atol=1e-15)


def test_polar_examples():
    assert polar_from_q(QState(0.0, 0.0)) == (0.0, 0.0)
    assert polar_from_q(QState(0.25, 0.0)) == (0.25, 0.0)
    r, phi = polar_from_q(QState(0.0, -0.1))
    assert abs(r - 0.1) < 1e-15
    assert abs(phi - 1.5 * math.pi) < 1e-15


def test_polar_roundtrips():
    rng = np.random.default_rng(12)
    for _ in range(200):
        r = rng.uniform(1e-3, 0.999)
        phi = rng.uniform(0.0, 2 * math.pi)
        q = q_from_polar(r, phi)
        r2, phi2 = polar_from_q(q)
        assert abs(r2 - r) <= 1e-13
        assert abs(phi2 - phi) <= 1e-13
        q2 = q_from_polar(r2, phi2)
        assert abs(q2.x - q.x) <= 1e-14 and abs(q2.y - q.y) <= 1e-14


def test_conf_tensor_validation():
    with pytest.raises(InvalidStateError):
        ConfTensor([[0.5, 0.2], [0.1, 0.5]])  # asymmetric
    with pytest.raises(InvalidStateError):
        ConfTensor([[1.0, 0.0], [0.0, -0.5]])  # negative eigenvalue
    with pytest.raises(InvalidStateError):
        ConfTensor(np.zeros((2, 2)))  # nonpositive trace
    with pytest.raises(InvalidStateError):
        ConfTensor(np.ones((2, 3)))


def test_ensemble_validation():
    with pytest.raises(InvalidStateError):
        Ensemble(positions=np.empty((0, 2)), model_tag="original", rng_seed=0)
    with pytest.raises(InvalidStateError):
        Ensemble(positions=np.array([[np.nan, 0.0]]), model_tag="original", rng_seed=0)
    e = Ensemble(positions=np.ones((3, 2)), model_tag="original", rng_seed=5)
    assert e.n == 3 and e.dim == 2


def test_cycle_regime_check():
    cycle_regime_check(ModelParams(pe=0.6, a=0.5, n_conc=2.0))
    with pytest.raises(RegimeError):
        cycle_regime_check(ModelParams(pe=0.6, a=0.5, n_conc=2.0, dim=3))
    with pytest.raises(RegimeError):
        cycle_regime_check(ModelParams(pe=0.6, a=1.2, n_conc=5.0))
    with pytest.raises(RegimeError):  # N = 1.2 < 1/(1 - 0.25)
        cycle_regime_check(ModelParams(pe=0.6, a=0.5, n_conc=1.2))
