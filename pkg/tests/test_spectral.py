import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pertflow.operators import OperatorPair
from pertflow.spectral import (
    BasisError,
    BasisSpec,
    SpectralElement,
    elements_from_csv,
    elements_to_csv,
    graph_norm,
    graph_norm_array,
    inner_product,
    mode_element,
    mode_index,
    norm,
)


def _e(basis, i):
    x = np.zeros(basis.dim)
    x[i] = 1.0
    return SpectralElement(basis, x)


def test_orthonormal_basis_vectors():
    b = BasisSpec.euclidean(3)
    assert inner_product(_e(b, 0), _e(b, 0)) == 1.0
    assert inner_product(_e(b, 0), _e(b, 1)) == 0.0


def test_inner_product_hand_value():
    b = BasisSpec.euclidean(2)
    assert inner_product(SpectralElement(b, np.array([1.0, 2.0])), SpectralElement(b, np.array([3.0, -1.0]))) == 1.0


def test_mismatched_bases_rejected():
    with pytest.raises(BasisError):
        inner_product(_e(BasisSpec.euclidean(3), 0), _e(BasisSpec.fourier(1), 0))


def test_non_finite_coefficients_rejected():
    with pytest.raises(ValueError):
        SpectralElement(BasisSpec.euclidean(2), np.array([1.0, np.nan]))


def test_elements_are_immutable():
    x = SpectralElement(BasisSpec.euclidean(2), np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        x.coeffs[0] = 5.0


def test_fourier_layout():
    b = BasisSpec.fourier(3)
    assert b.dim == 7
    assert list(b.wavenumbers()) == [0, 1, 1, 2, 2, 3, 3]
    assert mode_index(b, 0) == 0
    assert mode_index(b, 2, "cos") == 3
    assert mode_index(b, 2, "sin") == 4
    with pytest.raises(BasisError):
        mode_index(b, 4)
    with pytest.raises(BasisError):
        mode_index(b, 0, "sin")


def test_graph_norm_order_zero_is_norm():
    P = OperatorPair.fourier(4)
    assert graph_norm(_e(P.basis, 0), P, 0) == 1.0


def test_graph_norm_mode_two():
    P = OperatorPair.fourier(2)
    phi = mode_element(P.basis, 2, "cos")
    assert graph_norm(phi, P, 1) == pytest.approx(math.sqrt(17.0), rel=1e-15)


def test_graph_norm_with_zero_operator():
    b = BasisSpec.euclidean(3)
    for k in range(4):
        assert graph_norm(_e(b, 0), np.zeros((3, 3)), k) == 1.0


def test_graph_norm_accepts_symbols_and_callables():
    P = OperatorPair.fourier(3)
    x = np.arange(P.dim, dtype=float)
    sym = np.diag(P.G)
    ref = graph_norm_array(x, P, 2)
    assert graph_norm_array(x, sym, 2) == pytest.approx(ref)
    assert graph_norm_array(x, P.G, 2) == pytest.approx(ref)
    assert graph_norm_array(x, lambda y: y * sym, 2) == pytest.approx(ref)


def test_graph_norm_order_beyond_m_plus_one():
    P = OperatorPair.fourier(2, m=2)
    graph_norm_array(np.ones(P.dim), P, 3)
    with pytest.raises(ValueError):
        graph_norm_array(np.ones(P.dim), P, 4)


vectors = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=5, max_size=5)


@settings(max_examples=60, deadline=None)
@given(vectors, vectors)
def test_parallelogram_law(a, b):
    B = BasisSpec.fourier(2)
    x, y = SpectralElement(B, np.array(a)), SpectralElement(B, np.array(b))
    lhs = norm(x + y) ** 2 + norm(x - y) ** 2
    rhs = 2 * norm(x) ** 2 + 2 * norm(y) ** 2
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(vectors)
def test_graph_norm_monotone_in_order(a):
    P = OperatorPair.fourier(2, m=3)
    x = np.array(a)
    vals = [graph_norm_array(x, P, k) for k in range(5)]
    assert all(v1 >= v0 for v0, v1 in zip(vals, vals[1:]))


def test_csv_round_trip():
    b = BasisSpec.fourier(2)
    els = [mode_element(b, 1, "sin", 0.1), SpectralElement(b, np.array([1 / 3, -2.5, 0.0, 1e-300, 7.0]))]
    back = elements_from_csv(elements_to_csv(els, {"time": [0.0, 0.5]}))
    assert back == els


def test_csv_without_descriptor_rejected():
    with pytest.raises(BasisError):
        elements_from_csv("x,c0\n0,1.0\n")
