import dataclasses
import math

import numpy as np
import pytest

from pertflow.coefficients import (
    CoefficientError,
    check_Hmp,
    check_symmetry,
    derivative_fd_check,
    embedding_norm,
    preset,
    tanh_derivative,
)
from pertflow.operators import OperatorPair
from pertflow.spectral import graph_norm_array


@pytest.fixture
def P():
    return OperatorPair.fourier(4, m=3)


def _rand(P, seed, n=None):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(P.dim if n is None else (n, P.dim))


def test_tanh_derivatives_against_finite_differences():
    x = np.linspace(-2, 2, 9)
    h = 1e-5
    for n in range(1, 6):
        fd = (tanh_derivative(n - 1, x + h) - tanh_derivative(n - 1, x - h)) / (2 * h)
        assert np.allclose(tanh_derivative(n, x), fd, atol=1e-7)
    assert tanh_derivative(1, 0.0) == 1.0
    assert tanh_derivative(2, 0.0) == 0.0


def test_zero_preset(P):
    c = preset("zero", P, 8)
    u = _rand(P, 0)
    assert np.all(c.f(0.0, u) == 0)
    assert np.all(c.B(0.0, u) == 0)
    assert c.B(0.0, u).shape == (P.dim, 8)
    for j in (1, 2, 3):
        vs = [_rand(P, k) for k in range(j)]
        assert np.all(c.f_deriv(j, 0.0, u, vs) == 0)
        assert np.all(c.B_deriv(j, 0.0, u, vs) == 0)


def test_additive_preset_is_constant(P):
    c = preset("additive", P, 3, {"sigma": 0.5})
    a, b = _rand(P, 0), _rand(P, 1)
    assert np.array_equal(c.B(0.0, a), c.B(0.0, b))
    assert c.B(0.0, a)[1, 0] == 0.5
    assert np.all(c.B_deriv(1, 0.0, a, [b]) == 0)
    with pytest.raises(CoefficientError):
        preset("additive", P, 3, {"B0": np.zeros((2, 2))})


def test_scalar_mult_preset(P):
    c = preset("scalar_mult", P, 1, {"beta": 0.3})
    u, v = _rand(P, 0), _rand(P, 1)
    assert np.allclose(c.B(0.0, u)[:, 0], 0.3 * u)
    assert np.allclose(c.B_deriv(1, 0.0, u, [v])[:, 0], 0.3 * v)
    assert np.all(c.B_deriv(2, 0.0, u, [v, v]) == 0)
    assert c.lipschitz_B == pytest.approx(0.3 * embedding_norm(P, 3, P.dim))


def test_nemytskii_single_term_first_derivative(P):
    c = preset("nemytskii", P, 1, {"f_terms": [{"w": 1.0, "phi": "c1", "psi": "c1"}], "B_terms": []})
    v = _rand(P, 3)
    out = c.f_deriv(1, 0.0, np.zeros(P.dim), [v])
    expected = np.zeros(P.dim)
    expected[1] = v[1]
    assert np.allclose(out, expected, atol=1e-15)


def test_nemytskii_batched_evaluation(P):
    c = preset("nemytskii", P, 8)
    U = _rand(P, 0, 5)
    assert c.f(0.0, U).shape == (5, P.dim)
    assert c.B(0.0, U).shape == (5, P.dim, 8)
    for i in range(5):
        assert np.allclose(c.f(0.0, U)[i], c.f(0.0, U[i]))
        assert np.allclose(c.B(0.0, U)[i], c.B(0.0, U[i]))


def test_unknown_preset(P):
    with pytest.raises(CoefficientError):
        preset("cubic", P, 1)


@pytest.mark.parametrize("name,M", [("nemytskii", 8), ("scalar_mult", 1), ("additive", 8)])
def test_derivatives_are_symmetric(P, name, M):
    c = preset(name, P, M)
    u = _rand(P, 0)
    for j in (2, 3):
        vs = [_rand(P, 10 + k) for k in range(j)]
        assert check_symmetry(c, j, u, vs) <= 1e-12


def test_derivatives_are_multilinear(P):
    c = preset("nemytskii", P, 8)
    u = _rand(P, 0)
    vs = [_rand(P, 1), _rand(P, 2), _rand(P, 3)]
    ref = c.f_deriv(3, 0.0, u, vs)
    scaled = c.f_deriv(3, 0.0, u, [2.0 * vs[0], -0.5 * vs[1], vs[2]])
    assert np.allclose(scaled, -ref, atol=1e-12)
    w = _rand(P, 4)
    lhs = c.B_deriv(2, 0.0, u, [vs[0] + w, vs[1]])
    rhs = c.B_deriv(2, 0.0, u, [vs[0], vs[1]]) + c.B_deriv(2, 0.0, u, [w, vs[1]])
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_tensor_wrapper_checks_arity(P):
    c = preset("nemytskii", P, 8)
    T = c.f_tensor(2, np.zeros(P.dim))
    with pytest.raises(CoefficientError):
        T(np.ones(P.dim))
    assert T(np.ones(P.dim), np.ones(P.dim)).shape == (P.dim,)


@pytest.mark.parametrize("j", [0, 1, 2])
def test_fd_check_nemytskii(P, j):
    c = preset("nemytskii", P, 8)
    rep = derivative_fd_check(c, j, _rand(P, 0) * 0.5, [_rand(P, 1), _rand(P, 2)], [2.0**-i for i in range(3, 9)])
    assert rep.passed
    assert rep.info["slope"] == pytest.approx(2.0, abs=0.15)


def test_fd_check_second_derivative_zero_at_origin(P):
    c = preset("nemytskii", P, 1, {"f_terms": [{"w": 1.0, "phi": "c1", "psi": "c1"}], "B_terms": []})
    e1 = np.zeros(P.dim)
    e1[1] = 1.0
    assert np.all(c.f_deriv(2, 0.0, np.zeros(P.dim), [e1, e1]) == 0)
    rep = derivative_fd_check(c, 1, np.zeros(P.dim), [e1], [1e-2, 5e-3, 2.5e-3])
    assert rep.passed and rep.info["max_error"] < 1e-4


def test_fd_check_linear_map_exact(P):
    c = preset("scalar_mult", P, 1)
    rep = derivative_fd_check(c, 1, _rand(P, 0), [_rand(P, 1)], [1e-1, 1e-2])
    assert rep.info["max_error"] < 1e-13
    zero = derivative_fd_check(preset("zero", P, 2), 1, _rand(P, 0), [_rand(P, 1)], [1e-1, 1e-2])
    assert zero.info["max_error"] == 0.0


@pytest.mark.parametrize("name,M", [("zero", 2), ("additive", 8), ("scalar_mult", 1), ("nemytskii", 8)])
def test_Hmp_presets(P, name, M):
    rep = check_Hmp(preset(name, P, M), P, samples=300)
    assert rep.passed, rep.summary()


def test_Hmp_zero_quotients(P):
    rep = check_Hmp(preset("zero", P, 2), P, samples=20)
    assert rep.info["max_quotient"] == 0.0


def test_Hmp_single_term_constant(P):
    c = preset("nemytskii", P, 1, {"f_terms": [{"w": 1.0, "phi": "c1", "psi": "c2"}], "B_terms": []})
    psi = np.zeros(P.dim)
    psi[3] = 1.0
    assert c.lipschitz_f == pytest.approx(float(graph_norm_array(psi, P, 3)))
    rep = check_Hmp(c, P, samples=500)
    assert rep.info["max_ratio"] <= 1 + 1e-9


def test_Hmp_detects_understated_constant(P):
    c = preset("scalar_mult", P, 1, {"beta": 0.3})
    bad = dataclasses.replace(c, lipschitz_B=0.01)
    assert not check_Hmp(bad, P, samples=50).passed


def test_Hmp_order_check(P):
    c = preset("zero", OperatorPair.fourier(4, m=3), 1)
    with pytest.raises(CoefficientError):
        check_Hmp(c, OperatorPair.fourier(4, m=2))


def test_derivatives_bounded_over_samples(P):
    c = preset("nemytskii", P, 8)
    U = _rand(P, 0, 200) * 10
    vs = [np.eye(P.dim)[1]] * 2
    vals = [np.abs(c.f_deriv(2, 0.0, u, vs)).max() for u in U]
    assert max(vals) <= 2 * sum(abs(t) for t in (0.5, 0.4, 0.3))


def test_embedding_norm_identity_G():
    assert embedding_norm(np.eye(3), 2, 3) == pytest.approx(math.sqrt(3))
    assert embedding_norm(np.zeros((3, 3)), 4, 3) == 1.0
