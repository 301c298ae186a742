"""eps-derivative hierarchy u^1_eps, ..., u^n_eps of the mild solution.

Level n solves the linear equation

    du^n + (A + eps G) u^n dt + n G u^{n-1} dt
        = [f'(u) u^n + phi_n(u)] dt + [B'(u) u^n + Phi_n(u)] dW,    u^n(0) = 0,

where phi_n and Phi_n collect the higher-order chain-rule terms

    Phi_n(u) = sum over set partitions of {1..n} with >= 2 blocks of
               B^{(j)}(u)(u^{|b_1|}, ..., u^{|b_j|}).

Time stepping: every level is advanced by the eps-derivatives of the base
exponential-Euler step.  Writing the base step as u_{s+1} = E(eps) y_s with
E(eps) = S_{A+eps G}(dt) and y_s = u_s + dt f(u_s) + B(u_s) dW_s, Leibniz gives

    u^n_{s+1} = sum_j C(n, j) E^{(j)}(eps) y^{(n-j)}_s,

and y^{(k)}_s is the chain-rule expansion of y_s.  The j = 1 term is
-n dt G S(dt) y^{(n-1)}, i.e. the n G u^{n-1} forcing; the remaining terms are
O(dt^2).  So the discrete hierarchy is the exact eps-derivative of the discrete
base solution, and each level only reads lower levels.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator, Sequence

import numpy as np

from .coefficients import CoefficientField
from .noise import WienerDriver, map_paths, stack_increments
from .operators import OperatorPair
from .reports import Report, is_monotone_decreasing, loglog_slope
from .solver import (
    SolutionPath,
    SolverError,
    TimeGrid,
    _as_array,
    _guard,
    _noise_term,
    cp_norm,
    cp_norm_array,
    solve_ensemble,
)

__all__ = [
    "PartitionTerm",
    "SensitivitySolution",
    "correction_terms",
    "set_partitions",
    "brute_force_terms",
    "differentiate_terms",
    "check_phi_recursion",
    "solve_hierarchy",
    "solve_hierarchy_batch",
    "hierarchy_ensemble",
    "finite_difference_check",
    "taylor_remainder",
]


@dataclass(frozen=True)
class PartitionTerm:
    """coefficient * D^{j}(u)(u^{n_1}, ..., u^{n_j}) with sizes n_1 >= ... >= n_j."""

    sizes: tuple[int, ...]
    coefficient: int

    @property
    def j(self) -> int:
        return len(self.sizes)

    @property
    def n(self) -> int:
        return sum(self.sizes)


def _integer_partitions(n: int, largest: int | None = None) -> Iterator[tuple[int, ...]]:
    largest = n if largest is None else largest
    if n == 0:
        yield ()
        return
    for first in range(min(n, largest), 0, -1):
        for rest in _integer_partitions(n - first, first):
            yield (first,) + rest


def _set_partition_count(sizes: Sequence[int]) -> int:
    n = sum(sizes)
    denom = 1
    for s in sizes:
        denom *= math.factorial(s)
    for r in Counter(sizes).values():
        denom *= math.factorial(r)
    return math.factorial(n) // denom


@lru_cache(maxsize=None)
def _correction_terms(n: int) -> tuple[PartitionTerm, ...]:
    return tuple(
        PartitionTerm(sizes, _set_partition_count(sizes))
        for sizes in _integer_partitions(n)
        if len(sizes) >= 2
    )


def correction_terms(n: int, m: int | None = None) -> list[PartitionTerm]:
    """Chain-rule terms of (B(g_eps))^{(n)} other than B'(g) g^{(n)}."""
    if n < 1 or (m is not None and n > m):
        raise ValueError(f"order n = {n} out of range 1..{m if m is not None else 'inf'}")
    return list(_correction_terms(n))


def set_partitions(items: Sequence) -> Iterator[list[list]]:
    """All set partitions of ``items`` (brute force, for small sets)."""
    items = list(items)
    if not items:
        yield []
        return
    head, rest = items[0], items[1:]
    for part in set_partitions(rest):
        yield [[head]] + part
        for i in range(len(part)):
            yield part[:i] + [[head] + part[i]] + part[i + 1:]


def brute_force_terms(n: int) -> dict[tuple[int, ...], int]:
    """Block-size multisets of set partitions of {1..n} with >= 2 blocks, with multiplicities."""
    counts: Counter = Counter()
    for part in set_partitions(range(n)):
        if len(part) >= 2:
            counts[tuple(sorted((len(b) for b in part), reverse=True))] += 1
    return dict(counts)


def differentiate_terms(terms: dict[tuple[int, ...], int]) -> Counter:
    """d/deps of sum c * D^{(j)}(u)(u^{n_1}, ..., u^{n_j}).

    Each term yields one D^{(j+1)} term with an extra u^1 argument, plus one
    term per argument with that argument's order raised by one.
    """
    out: Counter = Counter()
    for sizes, coef in terms.items():
        out[tuple(sorted(sizes + (1,), reverse=True))] += coef
        for i in range(len(sizes)):
            bumped = list(sizes)
            bumped[i] += 1
            out[tuple(sorted(bumped, reverse=True))] += coef
    return out


def check_phi_recursion(n: int) -> Report:
    """Check Phi_n = B''(u^{n-1}, u^1) + (Phi_{n-1})' symbolically against correction_terms(n)."""
    if n < 2:
        raise ValueError("recursion starts at n = 2")
    rep = Report("phi_recursion")
    all_ok = True
    for k in range(2, n + 1):
        prev = {t.sizes: t.coefficient for t in _correction_terms(k - 1)}
        derived = differentiate_terms(prev)
        derived[tuple(sorted((k - 1, 1), reverse=True))] += 1
        expected = {t.sizes: t.coefficient for t in _correction_terms(k)}
        brute = brute_force_terms(k) if k <= 8 else expected
        ok = dict(derived) == expected and brute == expected
        all_ok &= ok
        rep.rows.append({
            "n": k,
            "recursion": _fmt_terms(derived),
            "closed_form": _fmt_terms(expected),
            "brute_force": _fmt_terms(brute),
            "match": ok,
        })
    rep.check(f"recursion, closed form and enumeration agree for n <= {n}", all_ok,
              "Phi_{k+1} = B''(u^k, u^1) + (Phi_k)'")
    return rep


def _fmt_terms(terms: dict) -> str:
    return " ".join(f"{'+'.join(map(str, s))}:{c}" for s, c in sorted(terms.items(), reverse=True))


def _corrections(deriv, t: float, u: np.ndarray, levels: Sequence[np.ndarray], n: int):
    total = None
    for term in _correction_terms(n):
        val = term.coefficient * deriv(term.j, t, u, [levels[s] for s in term.sizes])
        total = val if total is None else total + val
    return total


@dataclass(frozen=True, eq=False)
class SensitivitySolution:
    order: int
    eps: float
    path: int
    levels: tuple[SolutionPath, ...]

    def __post_init__(self):
        if len(self.levels) != self.order + 1:
            raise SolverError("need order + 1 levels")

    def level(self, k: int) -> SolutionPath:
        return self.levels[k]


def _propagators(P: OperatorPair, eps: float, dt: float, n: int) -> list[np.ndarray]:
    # fixed block size keeps lower levels bit-identical whatever order is requested
    return P.propagator_derivatives(eps, dt, max(n, P.m))[: n + 1]


def solve_hierarchy_batch(
    P: OperatorPair,
    c: CoefficientField,
    eps: float,
    u0,
    n: int,
    grid: TimeGrid,
    dW: np.ndarray,
) -> np.ndarray:
    """Levels 0..n for a batch of increments (B, steps, M); returns (n + 1, B, steps + 1, N)."""
    if n < 0:
        raise SolverError("order must be non-negative")
    if n > P.m:
        raise SolverError(f"order {n} exceeds m = {P.m}")
    c.require_order(n + 1 if n > 0 else 0)
    nb = dW.shape[0]
    dt = grid.dt
    Es = _propagators(P, eps, dt, n)
    binom = [[math.comb(k, j) for j in range(k + 1)] for k in range(n + 1)]
    out = np.zeros((n + 1, nb, grid.steps + 1, P.dim))
    levels = [np.zeros((nb, P.dim)) for _ in range(n + 1)]
    levels[0] = np.broadcast_to(_as_array(u0, P.dim), (nb, P.dim)).astype(float)
    out[0, :, 0] = levels[0]
    for s in range(grid.steps):
        t = s * dt
        u = levels[0]
        dw = dW[:, s]
        ys = [u + dt * c.f(t, u) + _noise_term(c.B(t, u), dw)]
        for k in range(1, n + 1):
            drift = c.f_deriv(1, t, u, [levels[k]])
            diff = c.B_deriv(1, t, u, [levels[k]])
            if k >= 2:
                drift = drift + _corrections(c.f_deriv, t, u, levels, k)
                diff = diff + _corrections(c.B_deriv, t, u, levels, k)
            ys.append(levels[k] + dt * drift + _noise_term(diff, dw))
        new = []
        for k in range(n + 1):
            acc = ys[k] @ Es[0].T
            for j in range(1, k + 1):
                acc = acc + binom[k][j] * (ys[k - j] @ Es[j].T)
            new.append(acc)
        levels = new
        _guard(levels[0], s + 1)
        for k in range(n + 1):
            out[k, :, s + 1] = levels[k]
    return out


def solve_hierarchy(
    P: OperatorPair,
    c: CoefficientField,
    eps: float,
    u0,
    n: int,
    grid: TimeGrid,
    driver: WienerDriver,
    path: int,
) -> SensitivitySolution:
    grid.check_driver(driver)
    dW = driver.increments(path, grid.steps)[None]
    arr = solve_hierarchy_batch(P, c, eps, u0, n, grid, dW)[:, 0]
    return SensitivitySolution(n, eps, path, tuple(SolutionPath(grid, P.basis, a) for a in arr))


def hierarchy_ensemble(
    P: OperatorPair,
    c: CoefficientField,
    eps: float,
    u0,
    n: int,
    grid: TimeGrid,
    driver: WienerDriver,
    paths: int,
    workers: int = 1,
) -> np.ndarray:
    """Levels for paths 0..paths-1, shape (n + 1, paths, steps + 1, N)."""
    grid.check_driver(driver)
    if c.M != driver.M:
        raise SolverError(f"coefficient noise dimension {c.M} differs from driver M = {driver.M}")

    def run(chunk):
        return solve_hierarchy_batch(P, c, eps, u0, n, grid, stack_increments(driver, chunk, grid.steps))

    return np.concatenate(map_paths(run, paths, workers), axis=1)


def finite_difference_check(
    P: OperatorPair,
    c: CoefficientField,
    eps: float,
    u0,
    k: int,
    h_list: Sequence[float],
    grid: TimeGrid,
    driver: WienerDriver,
    paths: int,
    p: float,
    slope_range: tuple[float, float] = (0.8, 1.2),
    norm_order: int | None = None,
    workers: int = 1,
) -> Report:
    """C^p norm of w^k_{eps,h} = (u^{k-1}_{eps+h} - u^{k-1}_eps)/h - u^k_eps over h_list.

    Norms are taken in D(G^{m-k}) unless ``norm_order`` says otherwise.  The
    p/k moment is reported alongside (clamped to p >= 1).
    """
    if not 1 <= k <= P.m:
        raise SolverError(f"derivative order k = {k} must lie in 1..{P.m}")
    korder = P.m - k if norm_order is None else norm_order
    base = hierarchy_ensemble(P, c, eps, u0, k, grid, driver, paths, workers)
    rep = Report(f"finite_difference_k{k}")
    errs = []
    p_low = max(1.0, p / k)
    for h in h_list:
        if h == 0:
            rep.rows.append({"h": h, "cp_norm": 0.0, "std_error": 0.0, f"cp_norm_p{p_low:g}": 0.0})
            errs.append(0.0)
            continue
        moved = hierarchy_ensemble(P, c, eps + h, u0, k - 1, grid, driver, paths, workers)
        w = (moved[k - 1] - base[k - 1]) / h - base[k]
        est = cp_norm(w, p, korder, P)
        low = cp_norm(w, p_low, korder, P)
        errs.append(est.value)
        rep.rows.append({"h": h, "cp_norm": est.value, "std_error": est.std_error, f"cp_norm_p{p_low:g}": low.value})
    hs = np.abs(np.asarray(h_list, dtype=float))
    slope = loglog_slope(hs, errs)
    order = np.argsort(hs)[::-1]
    rep.info["slope"] = slope
    rep.info["norm_order"] = korder
    rep.check("w^k decreases as h shrinks", is_monotone_decreasing([errs[i] for i in order]),
              f"eps -> u_eps is C^{k}")
    lo, hi = slope_range
    rep.check(f"log-log slope in [{lo:g}, {hi:g}]", lo <= slope <= hi, f"eps -> u_eps is C^{k}")
    return rep


def taylor_remainder(
    P: OperatorPair,
    c: CoefficientField,
    u0,
    K: int,
    eps_list: Sequence[float],
    grid: TimeGrid,
    driver: WienerDriver,
    paths: int,
    p: float,
    k: int = 0,
    min_slope: float | None = None,
    max_slope: float | None = None,
    workers: int = 1,
) -> Report:
    """C^p norm of u_eps - sum_{j <= K} eps^j / j! u^j_0 over eps_list."""
    if K + 1 > P.m:
        raise SolverError(f"expansion order K = {K} needs K + 1 <= m = {P.m}")
    levels = hierarchy_ensemble(P, c, 0.0, u0, K, grid, driver, paths, workers)
    rep = Report(f"taylor_remainder_K{K}")
    rems = []
    for eps in eps_list:
        if eps == 0:
            rems.append(0.0)
            rep.rows.append({"eps": eps, "remainder": 0.0, "std_error": 0.0})
            continue
        u = solve_ensemble(P, c, eps, u0, grid, driver, paths, workers)
        taylor = sum(eps**j / math.factorial(j) * levels[j] for j in range(K + 1))
        est = cp_norm(u - taylor, p, k, P)
        rems.append(est.value)
        rep.rows.append({"eps": eps, "remainder": est.value, "std_error": est.std_error})
    slope = loglog_slope(eps_list, rems)
    rep.info["slope"] = slope
    lo = K + 0.7 if min_slope is None else min_slope
    rep.check(f"remainder slope >= {lo:g}", slope >= lo, "Taylor expansion in eps")
    if max_slope is not None:
        rep.check(f"remainder slope <= {max_slope:g}", slope <= max_slope, "Taylor expansion in eps")
    return rep
