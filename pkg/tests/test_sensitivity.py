import math

import numpy as np
import pytest

from pertflow.coefficients import preset, tanh_derivative
from pertflow.noise import WienerDriver
from pertflow.operators import OperatorPair
from pertflow.sensitivity import (
    brute_force_terms,
    check_phi_recursion,
    correction_terms,
    finite_difference_check,
    hierarchy_ensemble,
    set_partitions,
    solve_hierarchy,
    solve_hierarchy_batch,
    taylor_remainder,
)
from pertflow.solver import SolverError, TimeGrid, solve_ensemble
from pertflow.spectral import graph_norm_array, mode_element


@pytest.fixture
def P():
    return OperatorPair.fourier(4, m=3)


def _driver(M=1, seed=3):
    return WienerDriver(seed, M=M, master_steps=256, T=0.5)


def _terms(n):
    return {t.sizes: t.coefficient for t in correction_terms(n)}


def test_correction_terms_small_orders():
    assert correction_terms(1) == []
    assert _terms(2) == {(1, 1): 1}
    assert _terms(3) == {(1, 1, 1): 1, (2, 1): 3}
    assert _terms(4) == {(1, 1, 1, 1): 1, (2, 1, 1): 6, (2, 2): 3, (3, 1): 4}


def test_correction_terms_total_count():
    bell = [1, 1, 2, 5, 15, 52, 203]
    for n in range(1, 7):
        assert sum(_terms(n).values()) == bell[n] - 1
    assert sum(_terms(5).values()) == 51


@pytest.mark.parametrize("n", range(1, 7))
def test_correction_terms_match_enumeration(n):
    assert _terms(n) == brute_force_terms(n)


def test_set_partitions_count():
    assert sum(1 for _ in set_partitions(range(6))) == 203


def test_correction_terms_out_of_range():
    with pytest.raises(ValueError):
        correction_terms(0)
    with pytest.raises(ValueError):
        correction_terms(4, m=3)


def test_phi_recursion():
    rep = check_phi_recursion(6)
    assert rep.passed
    assert [r["n"] for r in rep.rows] == [2, 3, 4, 5, 6]
    with pytest.raises(ValueError):
        check_phi_recursion(1)


def test_zero_preset_levels_closed_form(P):
    sol = solve_hierarchy(P, preset("zero", P, 1), 0.1, mode_element(P.basis, 2), 3, TimeGrid(0.5, 64),
                          _driver(), 0)
    for j in range(4):
        mags = np.hypot(sol.level(j).states[:, 3], sol.level(j).states[:, 4])
        t = sol.level(j).grid.times
        assert np.allclose(mags, (4 * t) ** j * np.exp(-0.4 * t), rtol=1e-12, atol=1e-15)
    assert math.hypot(*sol.level(1).states[-1, 3:5]) == pytest.approx(1.63746, abs=1e-5)


def test_initial_levels(P):
    c = preset("nemytskii", P, 8)
    u0 = mode_element(P.basis, 1)
    sol = solve_hierarchy(P, c, 0.2, u0, 3, TimeGrid(0.5, 16), _driver(M=8), 1)
    assert np.array_equal(sol.level(0).states[0], u0.coeffs)
    for k in (1, 2, 3):
        assert np.all(sol.level(k).states[0] == 0)


def test_degenerate_G_levels_vanish():
    P = OperatorPair.fourier(4, m=3, g_scale=0.0)
    c = preset("nemytskii", P, 8)
    u0 = mode_element(P.basis, 1).coeffs + 0.5 * mode_element(P.basis, 2, "sin").coeffs
    levels = hierarchy_ensemble(P, c, 0.3, u0, 3, TimeGrid(0.5, 64), _driver(M=8), 4)
    assert np.max(np.abs(levels[1:])) <= 1e-12


def test_triangular_structure_bit_identical(P):
    c = preset("nemytskii", P, 8)
    d, grid = _driver(M=8), TimeGrid(0.5, 32)
    u0 = mode_element(P.basis, 1)
    full = hierarchy_ensemble(P, c, 0.1, u0, 3, grid, d, 8)
    for n in (0, 1, 2):
        part = hierarchy_ensemble(P, c, 0.1, u0, n, grid, d, 8)
        assert np.array_equal(part, full[: n + 1])
    assert np.array_equal(full[0], solve_ensemble(P, c, 0.1, u0, grid, d, 8))


def test_superposition_zero_preset(P):
    c = preset("zero", P, 1)
    grid, d = TimeGrid(0.5, 32), _driver()
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal(P.dim), rng.standard_normal(P.dim)
    la = solve_hierarchy_batch(P, c, 0.2, a, 3, grid, d.increments(0, 32)[None])
    lb = solve_hierarchy_batch(P, c, 0.2, b, 3, grid, d.increments(0, 32)[None])
    lab = solve_hierarchy_batch(P, c, 0.2, 2 * a - 3 * b, 3, grid, d.increments(0, 32)[None])
    assert np.max(np.abs(lab - (2 * la - 3 * lb))) <= 1e-10


def test_scalar_mult_pathwise_closed_form(P):
    beta, eps = 0.3, 0.1
    c = preset("scalar_mult", P, 1, {"beta": beta})
    d, grid = _driver(), TimeGrid(0.5, 64)
    u0 = mode_element(P.basis, 2).coeffs
    sol = solve_hierarchy(P, c, eps, u0, 2, grid, d, 5)
    factor = np.concatenate([[1.0], np.cumprod(1 + beta * d.increments(5, 64)[:, 0])])
    t = grid.times
    for j in range(3):
        mags = np.hypot(sol.level(j).states[:, 3], sol.level(j).states[:, 4])
        assert np.allclose(mags, np.abs(factor) * (4 * t) ** j * np.exp(-4 * eps * t), rtol=1e-11, atol=1e-14)


@pytest.mark.parametrize("backend", ["fourier", "dense"])
def test_levels_are_eps_derivatives_of_the_scheme(backend):
    # level k equals the exact eps-derivative of level k-1 for the discrete scheme,
    # so central differences converge to it at second order
    if backend == "fourier":
        P = OperatorPair.fourier(3, m=3)
    else:
        A = [[0.5, -1.0, 0.0], [1.0, 0.2, 0.3], [0.0, -0.3, 1.0]]
        G = [[2.0, 0.0, 0.0], [0.0, 1.0, 0.5], [0.0, 0.5, 1.0]]
        P = OperatorPair.dense(A, G, m=3)
    c = preset("nemytskii", P, 8)
    d, grid = _driver(M=8), TimeGrid(0.5, 32)
    u0 = np.random.default_rng(1).standard_normal(P.dim) * 0.7
    eps = 0.3
    dW = d.increments(2, 32)[None]
    ref = solve_hierarchy_batch(P, c, eps, u0, 3, grid, dW)
    for k in (1, 2, 3):
        errs = []
        for h in (1e-2, 5e-3):
            up = solve_hierarchy_batch(P, c, eps + h, u0, k - 1, grid, dW)[k - 1]
            dn = solve_hierarchy_batch(P, c, eps - h, u0, k - 1, grid, dW)[k - 1]
            errs.append(np.max(np.abs((up - dn) / (2 * h) - ref[k])))
        assert errs[1] < errs[0] / 3.5 or errs[1] < 1e-9


def test_correction_term_bounds(P):
    c = preset("nemytskii", P, 8)
    d, grid = _driver(M=8), TimeGrid(0.5, 32)
    u0 = mode_element(P.basis, 1).coeffs
    levels = hierarchy_ensemble(P, c, 0.1, u0, 3, grid, d, 4)
    # |B^(j)(u)(v_1..v_j)|_HS in D(G^{m-n}) <= sqrt(sum_l (w_l sup|tanh^(j)| |psi_l|_{m-n})^2) * prod |v_i|
    xs = np.linspace(-5, 5, 2001)
    psi = {0.4: mode_element(P.basis, 2, "sin").coeffs, 0.3: mode_element(P.basis, 1).coeffs}
    for n in (2, 3):
        for term in correction_terms(n):
            sup = np.abs(tanh_derivative(term.j, xs)).max()
            norm_B = math.sqrt(sum((w * sup * float(graph_norm_array(p, P, P.m - n))) ** 2 for w, p in psi.items()))
            for b in range(4):
                for s in (8, 31):
                    u = levels[0, b, s]
                    args = [levels[i, b, s] for i in term.sizes]
                    val = c.B_deriv(term.j, 0.0, u, args)
                    hs = math.sqrt(sum(float(graph_norm_array(val[:, l], P, P.m - n)) ** 2 for l in range(8)))
                    bound = norm_B * math.prod(np.linalg.norm(a) for a in args)
                    assert hs <= bound * (1 + 1e-12)


def test_order_limits(P):
    c = preset("zero", P, 1)
    with pytest.raises(SolverError):
        solve_hierarchy(P, c, 0.1, mode_element(P.basis, 1), 4, TimeGrid(0.5, 4), _driver(), 0)
    with pytest.raises(SolverError):
        taylor_remainder(P, c, mode_element(P.basis, 1), 3, [0.1], TimeGrid(0.5, 4), _driver(), 1, 2.0)
    with pytest.raises(SolverError):
        finite_difference_check(P, c, 0.1, mode_element(P.basis, 1), 4, [0.1], TimeGrid(0.5, 4), _driver(), 1, 2.0)


def test_fd_check_zero_preset_slope_one(P):
    c = preset("zero", P, 1)
    rep = finite_difference_check(P, c, 0.1, mode_element(P.basis, 2), 1, [2.0**-i for i in range(10, 16)],
                                  TimeGrid(0.5, 64), _driver(), 1, 2.0)
    assert rep.passed
    assert abs(rep.info["slope"] - 1.0) <= 1e-3


def test_fd_check_zero_preset_closed_form(P):
    eps, h, g, T = 0.1, 2.0**-6, 4.0, 0.5
    c = preset("zero", P, 1)
    rep = finite_difference_check(P, c, eps, mode_element(P.basis, 2), 1, [h], TimeGrid(T, 64), _driver(), 1,
                                  2.0, norm_order=0)
    t = np.linspace(0, T, 65)
    w = np.abs((np.exp(-(eps + h) * g * t) - np.exp(-eps * g * t)) / h + t * g * np.exp(-eps * g * t))
    assert rep.rows[0]["cp_norm"] == pytest.approx(w.max(), rel=1e-10)


def test_fd_check_degenerate_G():
    P = OperatorPair.fourier(4, m=3, g_scale=0.0)
    c = preset("nemytskii", P, 8)
    rep = finite_difference_check(P, c, 0.1, mode_element(P.basis, 1), 1, [0.1, 0.05], TimeGrid(0.5, 16),
                                  _driver(M=8), 4, 2.0)
    assert all(r["cp_norm"] <= 1e-12 for r in rep.rows)


def test_fd_check_nemytskii(P):
    c = preset("nemytskii", P, 8)
    u0 = mode_element(P.basis, 1).coeffs + 0.5 * mode_element(P.basis, 2, "sin").coeffs
    rep = finite_difference_check(P, c, 0.1, u0, 1, [2.0**-i for i in range(3, 9)], TimeGrid(0.5, 64),
                                  _driver(M=8), 16, 2.0)
    assert rep.passed, rep.summary()
    assert "cp_norm_p2" in rep.rows[0]


def test_taylor_zero_preset(P):
    c = preset("zero", P, 1)
    eps_list = [2.0**-i for i in range(5, 11)]
    for K in (1, 2):
        rep = taylor_remainder(P, c, mode_element(P.basis, 2), K, eps_list, TimeGrid(0.5, 64), _driver(), 1, 2.0)
        assert abs(rep.info["slope"] - (K + 1)) <= 1e-2


def test_taylor_remainder_zero_at_eps_zero(P):
    c = preset("scalar_mult", P, 1)
    rep = taylor_remainder(P, c, mode_element(P.basis, 2), 1, [0.1, 0.0], TimeGrid(0.5, 16), _driver(), 4, 2.0)
    assert rep.rows[-1]["remainder"] == 0.0
