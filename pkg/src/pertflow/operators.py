"""The operator pair (A, G): semigroups, Trotter products, resolvents and the
numerical checks of the quasi-contraction hypotheses.

Two backends are provided.

``fourier``
    A = d/dx (transport) and G = -d^2/dx^2 on the circle, acting on the real
    trigonometric basis of :mod:`pertflow.spectral`.  Both are block diagonal
    with one 2x2 block per wavenumber, so everything has a closed form.  The
    transport semigroup is right-translation, ``S_A(t)phi(x) = phi(x - t)``,
    which rotates each (cos, sin) block by the angle ``k t``.

``dense``
    Arbitrary d x d matrices A and G.  Semigroups use ``scipy.linalg.expm``
    (scaling and squaring).

All semigroups are returned as matrices acting on coefficient vectors; batched
application is ``x @ M.T``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.linalg

from .reports import Report, is_monotone_decreasing, loglog_slope
from .spectral import BasisSpec, SpectralElement, graph_norm_array

log = logging.getLogger(__name__)

MAX_DENSE_DIM = 64
MONOTONE_TOL = 1e-10


class OperatorError(ValueError):
    pass


def _check_eps(eps: float):
    if not 0.0 <= eps <= 1.0:
        raise OperatorError(f"eps must lie in [0, 1], got {eps}")


def _check_t(t: float):
    if t < 0:
        raise OperatorError(f"time must be non-negative, got {t}")


@dataclass(frozen=True, eq=False)
class OperatorPair:
    """The pair (A, G) together with the regularity order m and the constants alpha_k.

    Build instances with :meth:`fourier` or :meth:`dense`.
    """

    backend: str
    basis: BasisSpec
    m: int
    A: np.ndarray = field(repr=False)
    G: np.ndarray = field(repr=False)
    alphas: np.ndarray | None = None

    @classmethod
    def fourier(
        cls, K: int, m: int = 3, alphas: Sequence[float] | None = None, g_scale: float = 1.0
    ) -> "OperatorPair":
        """Transport A = d/dx and G = g_scale * (-d^2/dx^2); ``g_scale = 0`` gives G = 0."""
        if g_scale < 0:
            raise OperatorError("g_scale must be non-negative")
        basis = BasisSpec.fourier(K)
        ks = basis.wavenumbers().astype(float)
        A = np.zeros((basis.dim, basis.dim))
        for k in range(1, K + 1):
            c, s = 2 * k - 1, 2 * k
            A[c, s] = k
            A[s, c] = -k
        G = np.diag(g_scale * ks**2)
        if alphas is None:
            alphas = np.zeros(m + 1)
        return cls._build("fourier", basis, m, A, G, alphas)

    @classmethod
    def dense(
        cls, A, G, m: int = 1, alphas: Sequence[float] | None = None, allow_heuristic: bool = True
    ) -> "OperatorPair":
        A = np.array(A, dtype=float)
        G = np.array(G, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape != G.shape:
            raise OperatorError("A and G must be square matrices of equal size")
        d = A.shape[0]
        if d > MAX_DENSE_DIM:
            raise OperatorError(f"dense backend is capped at d <= {MAX_DENSE_DIM}")
        for name, mat in (("A", A), ("G", G)):
            low = np.linalg.eigvalsh(0.5 * (mat + mat.T)).min()
            if low < -MONOTONE_TOL:
                raise OperatorError(f"{name} is not monotone (symmetric part has eigenvalue {low:.3g})")
        pair = cls._build("dense", BasisSpec.euclidean(d), m, A, G, None)
        if alphas is None:
            alphas = estimate_alphas(pair, allow_heuristic=allow_heuristic)
        return cls._build("dense", pair.basis, m, A, G, alphas)

    @classmethod
    def _build(cls, backend, basis, m, A, G, alphas):
        if m < 1:
            raise OperatorError("m must be >= 1")
        if alphas is not None:
            alphas = np.array(alphas, dtype=float)
            if alphas.shape != (m + 1,):
                raise OperatorError(f"need m+1 = {m + 1} alphas, got {alphas.shape}")
            alphas.setflags(write=False)
        A.setflags(write=False)
        G.setflags(write=False)
        return cls(backend, basis, m, A, G, alphas)

    @property
    def dim(self) -> int:
        return self.basis.dim

    def alpha(self, k: int) -> float:
        """alpha_k for k in 1..m+1."""
        return float(self.alphas[k - 1])

    @cached_property
    def _symbols(self) -> np.ndarray:
        return np.diag(self.G).copy()

    def apply_A(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) @ self.A.T

    def apply_G(self, x: np.ndarray) -> np.ndarray:
        if self.backend == "fourier":
            return np.asarray(x) * self._symbols
        return np.asarray(x) @ self.G.T

    def G_power(self, k: int) -> np.ndarray:
        return np.linalg.matrix_power(self.G, k)

    # -- semigroups -----------------------------------------------------------

    def semigroup_matrix(self, eps: float, t: float) -> np.ndarray:
        """Matrix of S_{A+eps G}(t) = exp(-t(A + eps G))."""
        _check_eps(eps)
        _check_t(t)
        return self._propagator(eps, t)

    def _propagator(self, eps: float, t: float, include_A: bool = True) -> np.ndarray:
        if self.backend == "fourier":
            N = self.dim
            K = self.basis.size
            M = np.zeros((N, N))
            M[0, 0] = 1.0
            for k in range(1, K + 1):
                c, s = 2 * k - 1, 2 * k
                decay = math.exp(-eps * self.G[c, c] * t)
                th = k * t if include_A else 0.0
                cs, sn = math.cos(th), math.sin(th)
                M[c, c] = decay * cs
                M[c, s] = -decay * sn
                M[s, c] = decay * sn
                M[s, s] = decay * cs
            return M
        gen = (self.A if include_A else 0.0) + eps * self.G
        return scipy.linalg.expm(-t * gen)

    def propagator_derivatives(self, eps: float, t: float, n: int) -> list[np.ndarray]:
        """[E, dE/deps, ..., d^n E/deps^n] for E(eps) = S_{A+eps G}(t).

        Fourier: the multipliers commute, so d^j E = (-tG)^j E.  Dense: the
        derivatives are read off the exponential of the block bidiagonal
        matrix with -t(A + eps G) on the diagonal and -tG above it, whose
        (0, j) block equals d^j E / j!.
        """
        _check_eps(eps)
        _check_t(t)
        E = self._propagator(eps, t)
        if n == 0:
            return [E]
        if self.backend == "fourier":
            mult = -t * self._symbols
            out = [E]
            for j in range(1, n + 1):
                out.append((mult**j)[:, None] * E)
            return out
        d = self.dim
        X = -t * (self.A + eps * self.G)
        Y = -t * self.G
        big = np.zeros(((n + 1) * d, (n + 1) * d))
        for i in range(n + 1):
            big[i * d:(i + 1) * d, i * d:(i + 1) * d] = X
            if i < n:
                big[i * d:(i + 1) * d, (i + 1) * d:(i + 2) * d] = Y
        ebig = scipy.linalg.expm(big)
        out = [E]
        for j in range(1, n + 1):
            out.append(math.factorial(j) * ebig[:d, j * d:(j + 1) * d])
        return out

    def A_semigroup_matrix(self, t: float) -> np.ndarray:
        _check_t(t)
        return self._propagator(0.0, t)

    def G_semigroup_matrix(self, eps: float, t: float) -> np.ndarray:
        """S_{eps G}(t)."""
        _check_eps(eps)
        _check_t(t)
        return self._propagator(eps, t, include_A=False)

    def resolvent_matrix(self, lam: float, eps: float) -> np.ndarray:
        """(lam + A + eps G)^{-1}."""
        _check_eps(eps)
        self._check_lambda(lam)
        if self.backend == "fourier":
            N = self.dim
            R = np.zeros((N, N))
            R[0, 0] = 1.0 / lam
            for k in range(1, self.basis.size + 1):
                c, s = 2 * k - 1, 2 * k
                a = lam + eps * self.G[c, c]
                det = a * a + k * k
                R[c, c] = a / det
                R[c, s] = -k / det
                R[s, c] = k / det
                R[s, s] = a / det
            return R
        mat = lam * np.eye(self.dim) + self.A + eps * self.G
        try:
            inv = np.linalg.inv(mat)
        except np.linalg.LinAlgError as exc:
            raise OperatorError("singular resolvent system; monotonicity is violated") from exc
        if not np.all(np.isfinite(inv)) or np.linalg.cond(mat) > 1e14:
            raise OperatorError("singular resolvent system; monotonicity is violated")
        return inv

    def _check_lambda(self, lam: float, orders: Sequence[int] = (1,)):
        floor = 0.0
        if self.alphas is not None:
            floor = max([floor] + [self.alpha(k) for k in orders if 1 <= k <= self.m + 1])
        if not lam > floor:
            raise OperatorError(f"lambda = {lam} must exceed {floor}")


@dataclass(frozen=True)
class ResolventQuery:
    lam: float
    eps: float

    def __post_init__(self):
        _check_eps(self.eps)


def _x(phi) -> np.ndarray:
    return phi.coeffs if isinstance(phi, SpectralElement) else np.asarray(phi, dtype=float)


def _wrap(P: OperatorPair, phi, y: np.ndarray):
    return SpectralElement(P.basis, y) if isinstance(phi, SpectralElement) else y


def semigroup_apply(P: OperatorPair, eps: float, t: float, phi):
    return _wrap(P, phi, _x(phi) @ P.semigroup_matrix(eps, t).T)


def trotter_matrix(P: OperatorPair, eps: float, t: float, n: int) -> np.ndarray:
    if n < 1:
        raise OperatorError("Trotter step count must be >= 1")
    _check_eps(eps)
    _check_t(t)
    step = P.A_semigroup_matrix(t / n) @ P.G_semigroup_matrix(eps, t / n)
    return np.linalg.matrix_power(step, n)


def trotter_apply(P: OperatorPair, eps: float, t: float, n: int, phi):
    """(S_A(t/n) S_{eps G}(t/n))^n phi."""
    return _wrap(P, phi, _x(phi) @ trotter_matrix(P, eps, t, n).T)


def resolvent_apply(P: OperatorPair, q: ResolventQuery, phi):
    return _wrap(P, phi, _x(phi) @ P.resolvent_matrix(q.lam, q.eps).T)


def estimate_alphas(
    P: OperatorPair,
    allow_heuristic: bool = False,
    samples: int = 10_000,
    t_max: float = 2.0,
    seed: int = 0,
) -> np.ndarray:
    """Constants alpha_1..alpha_{m+1} with |G^k S_A(t) phi| <= e^{alpha_k t} |G^k phi|.

    For invertible G this is the logarithmic norm of -G^k A G^{-k}, which makes
    the bound rigorous.  For singular G the values are sampled maxima of
    log(ratio)/t and carry no guarantee; that path must be requested
    explicitly via ``allow_heuristic``.
    """
    if P.backend == "fourier":
        return np.zeros(P.m + 1)
    out = np.empty(P.m + 1)
    singular = np.linalg.matrix_rank(P.G) < P.dim
    if not singular:
        for k in range(1, P.m + 2):
            Gk = P.G_power(k)
            conj = -Gk @ P.A @ np.linalg.inv(Gk)
            out[k - 1] = np.linalg.eigvalsh(0.5 * (conj + conj.T)).max()
        return out
    if not allow_heuristic:
        raise OperatorError("G is singular; alpha_k can only be estimated heuristically")
    log.warning("G is singular: alpha_k estimated by sampling, not guaranteed")
    rng = np.random.default_rng(seed)
    phis = rng.standard_normal((samples, P.dim))
    ts = rng.uniform(1e-3, t_max, samples)
    moved = np.stack([P.A_semigroup_matrix(t) @ phi for phi, t in zip(phis, ts)])
    for k in range(1, P.m + 2):
        Gk = P.G_power(k)
        den = np.linalg.norm(phis @ Gk.T, axis=1)
        num = np.linalg.norm(moved @ Gk.T, axis=1)
        keep = den > 1e-12
        if not np.any(keep):
            out[k - 1] = 0.0  # G^k = 0: the bound is vacuous
            continue
        out[k - 1] = np.max(np.log(np.maximum(num[keep], 1e-300) / den[keep]) / ts[keep])
    return out


def _random_elements(P: OperatorPair, samples: int, rng: np.random.Generator) -> np.ndarray:
    x = rng.standard_normal((samples, P.dim))
    if P.backend == "fourier":
        # decay keeps high powers of G numerically balanced across modes
        x = x / (1.0 + P.basis.wavenumbers()) ** 2
    return x


def _bound_check(P, name, eps_values, samples, t_grid, seed, rtol):
    rng = np.random.default_rng(seed)
    rep = Report(name)
    worst = 0.0
    ok = True
    for eps in eps_values:
        phis = _random_elements(P, samples, rng)
        for t in t_grid:
            S = P.semigroup_matrix(eps, t)
            moved = phis @ S.T
            for k in range(1, P.m + 2):
                Gk = P.G_power(k)
                den = np.linalg.norm(phis @ Gk.T, axis=1)
                keep = den > 1e-300
                if not np.any(keep):
                    continue
                ratio = np.linalg.norm(moved[keep] @ Gk.T, axis=1) / den[keep]
                bound = math.exp(P.alpha(k) * t)
                mx = float(ratio.max())
                violated = int(np.sum(ratio > bound * (1 + rtol)))
                ok &= violated == 0
                worst = max(worst, mx / bound)
                rep.rows.append(
                    {"eps": eps, "t": t, "k": k, "max_ratio": mx, "bound": bound, "violations": violated}
                )
    rep.info["max_ratio_over_bound"] = worst
    return rep, ok


def check_assumption_h1(
    P: OperatorPair, samples: int, t_grid: Sequence[float], seed: int = 0, rtol: float = 1e-10
) -> Report:
    """Sample |G^k S_A(t) phi| / |G^k phi| against e^{alpha_k t} for k = 1..m+1.

    Samples with G^k phi = 0 are skipped.
    """
    rep, ok = _bound_check(P, "assumption_h1", [0.0], samples, t_grid, seed, rtol)
    rep.check("G^k S_A(t) bounded by e^{alpha_k t} G^k", ok, "quasi-contraction of S_A on D(G^k)")
    return rep


def check_semigroup_bound_perturbed(
    P: OperatorPair,
    eps: float | Sequence[float],
    samples: int,
    t_grid: Sequence[float],
    seed: int = 0,
    rtol: float = 1e-10,
) -> Report:
    eps_values = [eps] if np.isscalar(eps) else list(eps)
    rep, ok = _bound_check(P, "semigroup_bound_perturbed", eps_values, samples, t_grid, seed, rtol)
    rep.check("G^k S_{A+eps G}(t) bounded by e^{alpha_k t} G^k", ok, "perturbed semigroup estimate")
    return rep


def check_resolvent_convergence(
    P: OperatorPair,
    lam: float,
    eps: float,
    h_list: Sequence[float],
    k: int,
    samples: int = 1000,
    x: np.ndarray | SpectralElement | None = None,
    tol: float = 1e-2,
    seed: int = 0,
) -> Report:
    """Tabulate |R_lam(eps+h)x - R_lam(eps)x| in D(G^k) and check the G-resolvent bound."""
    P._check_lambda(lam, orders=(k, k + 1) if k >= 1 else (1,))
    if x is None:
        x = np.zeros(P.dim)
        x[1 if P.dim > 1 else 0] = 1.0
    x = _x(x)
    base = x @ P.resolvent_matrix(lam, eps).T
    rep = Report("resolvent_convergence")
    diffs = []
    for h in h_list:
        moved = x @ P.resolvent_matrix(lam, eps + h).T
        d = float(graph_norm_array(moved - base, P, k))
        diffs.append(d)
        rep.rows.append({"h": h, "diff": d})
    hs = [abs(h) for h in h_list]
    order = np.argsort(hs)[::-1]
    ordered = [diffs[i] for i in order]
    nonzero = [h for h in hs if h > 0]
    rep.info["slope"] = loglog_slope(hs, diffs) if len(nonzero) >= 2 else math.nan
    rep.check("difference decreases as h shrinks", is_monotone_decreasing(ordered, 1e-12),
              "strong resolvent convergence")
    rep.check("difference below tolerance at smallest h", ordered[-1] <= tol, "strong resolvent convergence")

    rng = np.random.default_rng(seed)
    phis = _random_elements(P, samples, rng)
    R = P.resolvent_matrix(lam, eps)
    lhs = np.linalg.norm(P.apply_G(phis @ R.T), axis=1)
    rhs = np.linalg.norm(P.apply_G(phis), axis=1) / (lam - P.alpha(1))
    worst = float(np.max(lhs / np.maximum(rhs, 1e-300)))
    rep.info["max_G_resolvent_ratio"] = worst
    rep.check("|G R phi| <= |G phi| / (lam - alpha_1)", worst <= 1 + 1e-10, "resolvent bound on D(G)")
    return rep


def check_strong_continuity(
    P: OperatorPair, eps: float, k: int, phi, t_list: Sequence[float], tol: float = 1e-6
) -> Report:
    """graph_norm(S(t)phi - phi, G, k) along a decreasing t_list."""
    x = _x(phi)
    rep = Report("strong_continuity")
    vals = []
    for t in t_list:
        v = float(graph_norm_array(x @ P.semigroup_matrix(eps, t).T - x, P, k))
        vals.append(v)
        rep.rows.append({"t": t, "distance": v})
    tail = vals[-3:] if len(vals) >= 3 else vals
    rep.check("distance decreasing toward t = 0", is_monotone_decreasing(tail, 1e-12),
              "strong continuity on D(G^k)")
    rep.check("distance below tolerance at smallest t", vals[-1] <= tol, "strong continuity on D(G^k)")
    return rep
