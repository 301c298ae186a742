"""Drift f and diffusion B with exact derivative oracles.

All maps act on coefficient arrays whose last axis is the basis, so a batch of
paths of shape ``(P, N)`` is evaluated in one call.  ``B(t, u)`` returns the
matrix of the finite-rank operator from the M noise directions into H, shape
``(..., N, M)``; column ``l`` is ``B(t, u) e_l``.

Derivatives are symmetric multilinear maps:
``f_deriv(j, t, u, vs)`` is ``f^{(j)}(t, u)(vs[0], ..., vs[j-1])``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import permutations
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import Polynomial

from .reports import Report, loglog_slope
from .spectral import BasisSpec, SpectralElement, graph_norm_array, mode_index

__all__ = [
    "CoefficientError",
    "CoefficientField",
    "DerivativeTensor",
    "preset",
    "tanh_derivative",
    "check_Hmp",
    "derivative_fd_check",
    "embedding_norm",
]


class CoefficientError(ValueError):
    pass


@dataclass(frozen=True)
class DerivativeTensor:
    """j-th derivative frozen at (t, u); call it with j direction arrays."""

    order: int
    fn: Callable[..., np.ndarray]

    def __call__(self, *vs):
        if len(vs) != self.order:
            raise CoefficientError(f"order-{self.order} tensor called with {len(vs)} arguments")
        return self.fn(*vs)


@dataclass(frozen=True, eq=False)
class CoefficientField:
    name: str
    basis: BasisSpec
    m: int
    M: int
    f: Callable[[float, np.ndarray], np.ndarray] = field(repr=False)
    B: Callable[[float, np.ndarray], np.ndarray] = field(repr=False)
    f_deriv: Callable[[int, float, np.ndarray, Sequence[np.ndarray]], np.ndarray] = field(repr=False)
    B_deriv: Callable[[int, float, np.ndarray, Sequence[np.ndarray]], np.ndarray] = field(repr=False)
    lipschitz_f: float = 0.0
    lipschitz_B: float = 0.0
    anchor: SpectralElement | None = None
    max_order: int | None = None  # highest derivative the oracles provide; None = any

    def f_tensor(self, j: int, u, t: float = 0.0) -> DerivativeTensor:
        u = _arr(u)
        return DerivativeTensor(j, lambda *vs: self.f_deriv(j, t, u, [_arr(v) for v in vs]))

    def B_tensor(self, j: int, u, t: float = 0.0) -> DerivativeTensor:
        u = _arr(u)
        return DerivativeTensor(j, lambda *vs: self.B_deriv(j, t, u, [_arr(v) for v in vs]))

    def require_order(self, n: int):
        if self.max_order is not None and n > self.max_order:
            raise CoefficientError(f"{self.name}: derivative oracles stop at order {self.max_order}, need {n}")


def _arr(x) -> np.ndarray:
    return x.coeffs if isinstance(x, SpectralElement) else np.asarray(x, dtype=float)


@lru_cache(maxsize=None)
def _tanh_poly(n: int) -> Polynomial:
    """Polynomial p_n with tanh^{(n)}(x) = p_n(tanh x)."""
    if n == 0:
        return Polynomial([0.0, 1.0])
    prev = _tanh_poly(n - 1)
    return prev.deriv() * Polynomial([1.0, 0.0, -1.0])


def tanh_derivative(n: int, x):
    return _tanh_poly(n)(np.tanh(x))


def embedding_norm(G, m: int, dim: int) -> float:
    """Operator norm of the identity H -> D(G^m) on the truncated space."""
    if hasattr(G, "G"):
        G = G.G
    G = np.asarray(G, dtype=float)
    gram = np.eye(dim)
    Gj = np.eye(dim)
    for _ in range(m):
        Gj = G @ Gj
        gram = gram + Gj.T @ Gj
    return float(math.sqrt(np.linalg.eigvalsh(gram).max()))


def _element(basis: BasisSpec, spec) -> np.ndarray:
    """Profile from ``"c2"``/``"s1"``/``"e3"`` shorthand or an explicit coefficient list."""
    if isinstance(spec, SpectralElement):
        return spec.coeffs.copy()
    if isinstance(spec, str):
        part = {"c": "cos", "s": "sin", "e": "e"}.get(spec[:1])
        if part is None:
            raise CoefficientError(f"bad profile shorthand {spec!r}")
        if part == "e" and basis.kind == "fourier":
            raise CoefficientError("use c<k>/s<k> for fourier profiles")
        if part != "e" and basis.kind == "euclidean":
            part = "e" if part == "cos" else part
            if part != "e":
                raise CoefficientError("use e<i> for euclidean profiles")
        x = np.zeros(basis.dim)
        x[mode_index(basis, int(spec[1:]), part)] = 1.0
        return x
    x = np.asarray(spec, dtype=float)
    if x.shape != (basis.dim,):
        raise CoefficientError(f"profile needs {basis.dim} coefficients")
    return x


def _zero_field(name, basis, m, M, lip_B=0.0, B_const=None, anchor=None) -> CoefficientField:
    N = basis.dim
    B0 = np.zeros((N, M)) if B_const is None else B_const

    def f(t, u):
        return np.zeros_like(np.asarray(u, dtype=float))

    def B(t, u):
        u = np.asarray(u, dtype=float)
        return np.broadcast_to(B0, u.shape[:-1] + (N, M)).copy()

    def f_deriv(j, t, u, vs):
        return np.zeros(np.broadcast_shapes(np.shape(u), *(np.shape(v) for v in vs)))

    def B_deriv(j, t, u, vs):
        if j == 0:
            return B(t, u)
        shape = np.broadcast_shapes(np.shape(u), *(np.shape(v) for v in vs))
        return np.zeros(shape[:-1] + (N, M))

    return CoefficientField(name, basis, m, M, f, B, f_deriv, B_deriv, 0.0, lip_B, anchor)


def _scalar_mult(basis, m, M, beta, emb) -> CoefficientField:
    N = basis.dim

    def f(t, u):
        return np.zeros_like(np.asarray(u, dtype=float))

    def B(t, u):
        u = np.asarray(u, dtype=float)
        out = np.zeros(u.shape + (M,))
        out[..., 0] = beta * u
        return out

    def f_deriv(j, t, u, vs):
        return np.zeros(np.broadcast_shapes(np.shape(u), *(np.shape(v) for v in vs)))

    def B_deriv(j, t, u, vs):
        if j == 0:
            return B(t, u)
        shape = np.broadcast_shapes(np.shape(u), *(np.shape(v) for v in vs))
        out = np.zeros(shape + (M,))
        if j == 1:
            out[..., 0] = beta * np.broadcast_to(vs[0], shape)
        return out

    return CoefficientField(
        "scalar_mult", basis, m, M, f, B, f_deriv, B_deriv, 0.0, abs(beta) * emb,
        SpectralElement.zeros(basis),
    )


def _nemytskii(basis, m, M, f_terms, B_terms, G) -> CoefficientField:
    """f(u) = sum_j w_j tanh(<u, phi_j>) psi_j,  B(u) e_l = w'_l tanh(<u, phi_l>) psi_l."""
    N = basis.dim
    if len(B_terms) > M:
        raise CoefficientError(f"{len(B_terms)} diffusion terms but only M = {M} noise directions")
    fw = np.array([float(t["w"]) for t in f_terms])
    fphi = np.array([_element(basis, t["phi"]) for t in f_terms]).reshape(len(f_terms), N)
    fpsi = np.array([_element(basis, t["psi"]) for t in f_terms]).reshape(len(f_terms), N)
    L = len(B_terms)
    bw = np.zeros(M)
    bphi = np.zeros((M, N))
    bpsi = np.zeros((M, N))
    for l, term in enumerate(B_terms):
        bw[l] = float(term["w"])
        bphi[l] = _element(basis, term["phi"])
        bpsi[l] = _element(basis, term["psi"])
    for arr in (fw, fphi, fpsi, bw, bphi, bpsi):
        if not np.all(np.isfinite(arr)):
            raise CoefficientError("nemytskii parameters must be finite")

    def _proj(vs, phis):
        prod = 1.0
        for v in vs:
            prod = prod * (np.asarray(v, dtype=float) @ phis.T)
        return prod

    def f_deriv(j, t, u, vs):
        s = np.asarray(u, dtype=float) @ fphi.T
        coef = fw * tanh_derivative(j, s) * _proj(vs, fphi)
        return coef @ fpsi

    def B_deriv(j, t, u, vs):
        s = np.asarray(u, dtype=float) @ bphi.T
        coef = bw * tanh_derivative(j, s) * _proj(vs, bphi)  # (..., M)
        return coef[..., None, :] * bpsi.T

    def f(t, u):
        return f_deriv(0, t, u, [])

    def B(t, u):
        return B_deriv(0, t, u, [])

    gn_f = graph_norm_array(fpsi, G, m) if len(f_terms) else np.zeros(0)
    gn_B = graph_norm_array(bpsi, G, m)
    lip_f = float(np.sum(np.abs(fw) * np.linalg.norm(fphi, axis=1) * gn_f)) if len(f_terms) else 0.0
    lip_B = float(math.sqrt(np.sum((bw * np.linalg.norm(bphi, axis=1) * gn_B) ** 2)))
    return CoefficientField(
        "nemytskii", basis, m, M, f, B, f_deriv, B_deriv, lip_f, lip_B, SpectralElement.zeros(basis)
    )


def _default_nemytskii_terms(basis: BasisSpec):
    if basis.kind == "fourier":
        if basis.size < 2:
            raise CoefficientError("default nemytskii profiles need K >= 2")
        f_terms = [
            {"w": 0.5, "phi": "c1", "psi": "c1"},
            {"w": 0.4, "phi": "s1", "psi": "c2"},
            {"w": 0.3, "phi": "c2", "psi": "s1"},
        ]
        B_terms = [
            {"w": 0.4, "phi": "c1", "psi": "s2"},
            {"w": 0.3, "phi": "c2", "psi": "c1"},
        ]
    else:
        f_terms = [{"w": 0.5, "phi": "e0", "psi": "e0"}]
        B_terms = [{"w": 0.4, "phi": "e0", "psi": f"e{min(1, basis.dim - 1)}"}]
    return f_terms, B_terms


def preset(name: str, P, M: int, params: dict | None = None) -> CoefficientField:
    """Build a preset coefficient field for the operator pair ``P`` and noise dimension ``M``.

    ``zero``        f = B = 0.
    ``additive``    f = 0, B constant; ``params["B0"]`` is an N x M matrix, or
                    ``params["sigma"]`` puts sigma on the first min(M, N-1) non-constant slots.
    ``scalar_mult`` f = 0, B(u) e_1 = beta u; ``params["beta"]``.
    ``nemytskii``   tanh Nemytskii-type f and B; ``params["f_terms"]``, ``params["B_terms"]``
                    as lists of ``{"w", "phi", "psi"}``.
    """
    params = dict(params or {})
    basis, m = P.basis, P.m
    N = basis.dim
    if name == "zero":
        return _zero_field("zero", basis, m, M, anchor=SpectralElement.zeros(basis))
    if name == "additive":
        if "B0" in params:
            B0 = np.array(params["B0"], dtype=float)
            if B0.shape != (N, M):
                raise CoefficientError(f"B0 must be {N} x {M}")
        else:
            sigma = float(params.get("sigma", 0.2))
            B0 = np.zeros((N, M))
            offset = 1 if N > 1 else 0
            for l in range(min(M, N - offset)):
                B0[l + offset, l] = sigma
        if not np.all(np.isfinite(B0)):
            raise CoefficientError("B0 must be finite")
        return _zero_field("additive", basis, m, M, 0.0, B0, SpectralElement.zeros(basis))
    if name == "scalar_mult":
        beta = float(params.get("beta", 0.3))
        if not math.isfinite(beta):
            raise CoefficientError("beta must be finite")
        return _scalar_mult(basis, m, M, beta, embedding_norm(P, m, N))
    if name == "nemytskii":
        f_terms, B_terms = _default_nemytskii_terms(basis)
        f_terms = params.get("f_terms", f_terms)
        B_terms = params.get("B_terms", B_terms)
        return _nemytskii(basis, m, M, f_terms, B_terms, P)
    raise CoefficientError(f"unknown preset {name!r}")


def _hs_graph_norm(Bmat: np.ndarray, P, k: int) -> np.ndarray:
    """Hilbert-Schmidt norm of (..., N, M) operators into D(G^k)."""
    cols = np.moveaxis(Bmat, -1, -2)  # (..., M, N)
    gn = graph_norm_array(cols, P, k)
    return np.sqrt(np.sum(gn**2, axis=-1))


def check_Hmp(c: CoefficientField, P, samples: int = 200, seed: int = 0, tol: float = 1e-9) -> Report:
    """Sampled Lipschitz quotients from H into D(G^m) against N_1 + N_2, plus anchor finiteness."""
    if c.m > P.m:
        raise CoefficientError(f"field order m = {c.m} exceeds operator order {P.m}")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((samples, P.dim))
    y = x + rng.standard_normal((samples, P.dim)) * rng.uniform(1e-3, 1.0, (samples, 1))
    t = 0.0
    df = graph_norm_array(c.f(t, x) - c.f(t, y), P, c.m)
    dB = _hs_graph_norm(c.B(t, x) - c.B(t, y), P, c.m)
    dist = np.linalg.norm(x - y, axis=1)
    lip = c.lipschitz_f + c.lipschitz_B
    quot = (df + dB) / dist
    ratio = quot / lip if lip > 0 else np.where(quot > 0, np.inf, 0.0)
    rep = Report("check_Hmp")
    rep.info["max_quotient"] = float(quot.max())
    rep.info["declared_constant"] = lip
    rep.info["max_ratio"] = float(ratio.max())
    rep.rows = [{"sample": i, "quotient": float(q), "ratio": float(r)} for i, (q, r) in enumerate(zip(quot, ratio))]
    rep.check("Lipschitz quotient within declared N_1 + N_2", bool(ratio.max() <= 1 + tol), "condition H(m,p)")
    a = c.anchor.coeffs if c.anchor is not None else np.zeros(P.dim)
    fa = float(graph_norm_array(c.f(t, a), P, c.m))
    Ba = float(_hs_graph_norm(c.B(t, a), P, c.m))
    rep.info["anchor_f_norm"] = fa
    rep.info["anchor_B_norm"] = Ba
    rep.check("f(a), B(a) finite in D(G^m)", math.isfinite(fa) and math.isfinite(Ba), "anchor integrability")
    return rep


def derivative_fd_check(
    c: CoefficientField, j: int, u, directions: Sequence, h_list: Sequence[float], t: float = 0.0
) -> Report:
    """Compare the analytic (j+1)-th derivative with central differences of the j-th.

    For each direction d the quantity checked is
    ``D^{j+1}(u)(d, ..., d)`` against ``[D^j(u + h d) - D^j(u - h d)](d, ..., d) / 2h``,
    for both f and B.
    """
    if j >= c.m:
        raise CoefficientError(f"need j < m = {c.m}")
    u = _arr(u)
    rep = Report("derivative_fd_check")
    errs_by_h = {h: 0.0 for h in h_list}
    for di, d in enumerate(directions):
        d = _arr(d)
        vs = [d] * j
        exact_f = c.f_deriv(j + 1, t, u, vs + [d])
        exact_B = c.B_deriv(j + 1, t, u, vs + [d])
        for h in h_list:
            fd_f = (c.f_deriv(j, t, u + h * d, vs) - c.f_deriv(j, t, u - h * d, vs)) / (2 * h)
            fd_B = (c.B_deriv(j, t, u + h * d, vs) - c.B_deriv(j, t, u - h * d, vs)) / (2 * h)
            err = float(np.linalg.norm(fd_f - exact_f) + np.linalg.norm(fd_B - exact_B))
            errs_by_h[h] = max(errs_by_h[h], err)
            rep.rows.append({"direction": di, "h": h, "error": err})
    hs = list(errs_by_h)
    errs = [errs_by_h[h] for h in hs]
    rep.info["max_error"] = max(errs)
    rep.info["slope"] = loglog_slope(hs, errs)
    rep.check("finite differences agree with analytic derivative", max(errs) <= 1e-4 or rep.info["slope"] >= 1.5,
              "C^1_b regularity of the derivatives")
    return rep


def check_symmetry(c: CoefficientField, j: int, u, vs: Sequence, t: float = 0.0) -> float:
    """Largest change in f^{(j)} and B^{(j)} under permutations of the arguments."""
    u = _arr(u)
    vs = [_arr(v) for v in vs]
    ref_f = c.f_deriv(j, t, u, vs)
    ref_B = c.B_deriv(j, t, u, vs)
    worst = 0.0
    for perm in permutations(range(j)):
        pv = [vs[i] for i in perm]
        worst = max(worst, float(np.abs(c.f_deriv(j, t, u, pv) - ref_f).max()),
                    float(np.abs(c.B_deriv(j, t, u, pv) - ref_B).max()))
    return worst
