"""Exponential-Euler mild solutions and Monte Carlo C^p norms.

One step of the base scheme is

    u_{s+1} = S_{A+eps G}(dt) [u_s + dt f(t_s, u_s) + B(t_s, u_s) dW_s]

with the semigroup evaluated exactly by the operator backend, so the stiff
part eps G never restricts dt and the scheme is exact when f = B = 0.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .coefficients import CoefficientField
from .noise import WienerDriver, map_paths, stack_increments
from .operators import OperatorPair
from .reports import Report, is_monotone_decreasing, loglog_slope
from .spectral import BasisSpec, SpectralElement, graph_norm_array

__all__ = [
    "SolverError",
    "DivergenceError",
    "TimeGrid",
    "SolutionPath",
    "CpNormEstimate",
    "solve_base",
    "solve_base_batch",
    "solve_ensemble",
    "solve_linear_forced",
    "cp_norm",
    "cp_norm_array",
    "check_continuity_in_eps",
]

DIVERGENCE_THRESHOLD = 1e12


class SolverError(ValueError):
    pass


class DivergenceError(ArithmeticError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    T: float
    steps: int

    def __post_init__(self):
        if self.T <= 0 or self.steps < 1:
            raise SolverError("need T > 0 and steps >= 1")

    @property
    def dt(self) -> float:
        return self.T / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def check_driver(self, driver: WienerDriver):
        if not math.isclose(driver.T, self.T, rel_tol=1e-12):
            raise SolverError(f"grid horizon {self.T} differs from driver horizon {driver.T}")
        if driver.master_steps % self.steps:
            raise SolverError(f"{self.steps} steps do not divide master_steps = {driver.master_steps}")


@dataclass(frozen=True, eq=False)
class SolutionPath:
    grid: TimeGrid
    basis: BasisSpec
    states: np.ndarray  # (steps + 1, N)

    def __post_init__(self):
        if self.states.shape != (self.grid.steps + 1, self.basis.dim):
            raise SolverError("states do not match grid and basis")
        if not np.all(np.isfinite(self.states)):
            raise SolverError("non-finite state in solution path")

    def state(self, i: int) -> SpectralElement:
        return SpectralElement(self.basis, self.states[i])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "time", *(f"c{i}" for i in range(self.basis.dim))])
        for s, (t, row) in enumerate(zip(self.grid.times, self.states)):
            w.writerow([s, repr(float(t)), *(repr(float(x)) for x in row)])
        return buf.getvalue()


@dataclass(frozen=True)
class CpNormEstimate:
    p: float
    k: int
    value: float
    paths: int
    std_error: float


def _guard(u: np.ndarray, step: int):
    n = np.linalg.norm(u, axis=-1)
    if not np.all(np.isfinite(n)) or np.any(n > DIVERGENCE_THRESHOLD):
        raise DivergenceError(f"solution norm exceeded {DIVERGENCE_THRESHOLD:g} at step {step}")


def _noise_term(Bmat: np.ndarray, dw: np.ndarray) -> np.ndarray:
    return np.einsum("...nm,...m->...n", Bmat, dw)


def _as_array(u0, N: int) -> np.ndarray:
    x = u0.coeffs if isinstance(u0, SpectralElement) else np.asarray(u0, dtype=float)
    if x.shape[-1] != N:
        raise SolverError(f"initial datum has {x.shape[-1]} coefficients, basis has {N}")
    return x


def solve_base_batch(
    P: OperatorPair, c: CoefficientField, eps: float, u0: np.ndarray, grid: TimeGrid, dW: np.ndarray
) -> np.ndarray:
    """Run the scheme for a batch of increment arrays ``dW`` of shape (B, steps, M).

    Returns states of shape (B, steps + 1, N).
    """
    nb = dW.shape[0]
    dt = grid.dt
    E = P.semigroup_matrix(eps, dt)
    out = np.empty((nb, grid.steps + 1, P.dim))
    u = np.broadcast_to(_as_array(u0, P.dim), (nb, P.dim)).astype(float)
    out[:, 0] = u
    for s in range(grid.steps):
        t = s * dt
        y = u + dt * c.f(t, u) + _noise_term(c.B(t, u), dW[:, s])
        u = y @ E.T
        _guard(u, s + 1)
        out[:, s + 1] = u
    return out


def solve_base(
    P: OperatorPair,
    c: CoefficientField,
    eps: float,
    u0,
    grid: TimeGrid,
    driver: WienerDriver,
    path: int,
) -> SolutionPath:
    grid.check_driver(driver)
    if c.M != driver.M:
        raise SolverError(f"coefficient noise dimension {c.M} differs from driver M = {driver.M}")
    dW = driver.increments(path, grid.steps)[None]
    return SolutionPath(grid, P.basis, solve_base_batch(P, c, eps, u0, grid, dW)[0])


def solve_ensemble(
    P: OperatorPair,
    c: CoefficientField,
    eps: float,
    u0,
    grid: TimeGrid,
    driver: WienerDriver,
    paths: int,
    workers: int = 1,
) -> np.ndarray:
    """States for paths 0..paths-1, shape (paths, steps + 1, N)."""
    grid.check_driver(driver)
    if c.M != driver.M:
        raise SolverError(f"coefficient noise dimension {c.M} differs from driver M = {driver.M}")

    def run(chunk):
        return solve_base_batch(P, c, eps, u0, grid, stack_increments(driver, chunk, grid.steps))

    return np.concatenate(map_paths(run, paths, workers), axis=0)


def solve_linear_forced(
    P: OperatorPair,
    eps: float,
    V: Callable[[float, np.ndarray], np.ndarray] | None,
    Sigma: Callable[[float, np.ndarray], np.ndarray] | None,
    g: np.ndarray | Callable[[int], np.ndarray] | None,
    grid: TimeGrid,
    driver: WienerDriver,
    path: int,
    v0=None,
) -> SolutionPath:
    """v_{s+1} = S(dt)[v_s + dt (V(t_s) v_s + g_s) + Sigma(t_s) v_s dW_s].

    ``V(t, v)`` returns the drift applied to ``v``; ``Sigma(t, v)`` returns an
    (N, M) operator; ``g`` is an (steps, N) array or a function of the step index.
    """
    grid.check_driver(driver)
    dt = grid.dt
    E = P.semigroup_matrix(eps, dt)
    dW = driver.increments(path, grid.steps)
    v = np.zeros(P.dim) if v0 is None else _as_array(v0, P.dim).astype(float)
    out = np.empty((grid.steps + 1, P.dim))
    out[0] = v
    for s in range(grid.steps):
        t = s * dt
        drift = np.zeros(P.dim)
        if V is not None:
            drift = drift + V(t, v)
        if g is not None:
            drift = drift + (g(s) if callable(g) else g[s])
        y = v + dt * drift
        if Sigma is not None:
            y = y + Sigma(t, v) @ dW[s]
        v = E @ y
        _guard(v, s + 1)
        out[s + 1] = v
    return SolutionPath(grid, P.basis, out)


def _stack_paths(paths) -> np.ndarray:
    if isinstance(paths, np.ndarray):
        arr = paths
    else:
        paths = list(paths)
        if not paths:
            raise SolverError("empty ensemble")
        grids = {(sp.grid.T, sp.grid.steps) for sp in paths}
        if len(grids) != 1:
            raise SolverError("ensemble paths live on different grids")
        arr = np.stack([sp.states for sp in paths])
    if arr.ndim == 2:
        arr = arr[None]
    if arr.shape[0] == 0:
        raise SolverError("empty ensemble")
    return arr


def cp_norm_array(sups: np.ndarray, p: float, k: int = 0) -> CpNormEstimate:
    """C^p estimate from per-path suprema."""
    if p < 1:
        raise SolverError("p must be >= 1")
    n = sups.shape[0]
    if n == 0:
        raise SolverError("empty ensemble")
    powers = sups**p
    mean = float(np.mean(powers))
    value = mean ** (1.0 / p)
    if n > 1 and mean > 0:
        se_mean = float(np.std(powers, ddof=1)) / math.sqrt(n)
        std_error = (1.0 / p) * mean ** (1.0 / p - 1.0) * se_mean
    else:
        std_error = 0.0
    return CpNormEstimate(p, k, value, n, std_error)


def cp_norm(paths, p: float, k: int, G) -> CpNormEstimate:
    """(E sup_t |X(t)|^p_{D(G^k)})^{1/p} over an ensemble of paths.

    ``paths`` is a list of :class:`SolutionPath` or an array (paths, steps + 1, N).
    """
    arr = _stack_paths(paths)
    sups = graph_norm_array(arr, G, k).max(axis=1)
    return cp_norm_array(sups, p, k)


def check_continuity_in_eps(
    P: OperatorPair,
    c: CoefficientField,
    u0,
    eps: float,
    h_list: Sequence[float],
    grid: TimeGrid,
    driver: WienerDriver,
    paths: int,
    p: float,
    k: int,
    tol: float = 1e-2,
    derivative_norm: float | None = None,
    prediction_factor: float = 10.0,
    workers: int = 1,
    relative: bool = False,
) -> Report:
    """cp_norm(u_{eps+h} - u_eps) in D(G^k) over ``h_list`` with common noise.

    With ``relative`` the tolerance applies to the difference divided by the
    C^p norm of u_eps itself.

    If ``derivative_norm`` (the C^p norm of the first eps-derivative) is given,
    the smallest-h difference is also compared with ``prediction_factor * h * derivative_norm``.
    """
    if k > P.m:
        raise SolverError(f"norm order k = {k} exceeds m = {P.m}")
    base = solve_ensemble(P, c, eps, u0, grid, driver, paths, workers)
    rep = Report("continuity_in_eps")
    vals = []
    for h in h_list:
        if h == 0:
            est = cp_norm_array(np.zeros(paths), p, k)
        else:
            moved = solve_ensemble(P, c, eps + h, u0, grid, driver, paths, workers)
            est = cp_norm(moved - base, p, k, P)
        vals.append(est.value)
        rep.rows.append({"h": h, "cp_norm": est.value, "std_error": est.std_error})
    order = np.argsort(np.abs(h_list))[::-1]
    ordered = [vals[i] for i in order]
    h_min = float(np.abs(h_list)[order[-1]])
    rep.info["slope"] = loglog_slope(np.abs(h_list), vals)
    rep.check("difference decreases with h", is_monotone_decreasing(ordered), "continuity of eps -> u_eps in C^p")
    scale = cp_norm(base, p, k, P).value if relative else 1.0
    rep.info["reference_norm"] = scale
    rep.check(f"difference below {'relative ' if relative else ''}tolerance at smallest h",
              ordered[-1] <= tol * scale, "continuity of eps -> u_eps in C^p")
    if derivative_norm is not None:
        pred = prediction_factor * h_min * derivative_norm
        rep.info["linear_prediction"] = h_min * derivative_norm
        rep.check(f"smallest-h difference below {prediction_factor:g}x linear prediction", ordered[-1] <= pred,
                  "continuity of eps -> u_eps in C^p")
    return rep
