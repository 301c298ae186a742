"""Named experiments, each producing a pass/fail :class:`Report`.

Every experiment has a shipped default :class:`ExperimentSpec`; the CLI and
the acceptance tests override parts of it.  Verdicts are computed from the
rows and tolerances only, and nothing time-dependent is recorded, so a report
is reproducible bit for bit from (spec, seed).
"""

from __future__ import annotations

import copy
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import config as cfgmod
from .coefficients import check_Hmp, preset
from .noise import WienerDriver
from .operators import (
    OperatorPair,
    check_assumption_h1,
    check_resolvent_convergence,
    check_semigroup_bound_perturbed,
    check_strong_continuity,
    trotter_matrix,
)
from .reports import Report, is_monotone_decreasing, loglog_slope
from .sensitivity import (
    check_phi_recursion,
    correction_terms,
    finite_difference_check,
    hierarchy_ensemble,
    taylor_remainder,
)
from .solver import (
    TimeGrid,
    check_continuity_in_eps,
    cp_norm,
    solve_base,
    solve_ensemble,
)
from .spectral import BasisSpec, graph_norm_array, mode_element

__all__ = ["ExperimentSpec", "SpecError", "EXPERIMENTS", "FAST", "FULL", "default_spec", "run", "suite",
           "write_reports"]


class SpecError(ValueError):
    pass


@dataclass
class ExperimentSpec:
    name: str
    config: dict[str, Any] = field(default_factory=dict)
    seed: int = 20240611
    workers: int = 1

    def section(self, name: str) -> dict:
        return self.config.get(name, {})

    def sweep(self, key: str, default=None):
        return self.section("sweep").get(key, default)

    def tol(self, key: str, default: float) -> float:
        return float(self.section("tolerances").get(key, default))

    def resolved(self) -> dict:
        cfg = copy.deepcopy(self.config)
        cfg.setdefault("noise", {})["seed"] = self.seed
        return cfg

    def validate(self):
        if self.name not in EXPERIMENTS:
            raise SpecError(f"unknown experiment {self.name!r}; known: {sorted(EXPERIMENTS)}")
        for key, val in self.section("sweep").items():
            if isinstance(val, list) and not val:
                raise SpecError(f"sweep {key!r} is empty")
        for key, val in self.section("tolerances").items():
            if not isinstance(val, (int, float)) or val < 0 or math.isnan(val):
                raise SpecError(f"tolerance {key!r} must be a non-negative number")
        m = self.section("operator").get("m")
        if m is not None:
            for key, shift in (("order", 0), ("k", 0), ("K", 1)):
                val = self.sweep(key)
                if val is not None and int(val) + shift > int(m):
                    raise SpecError(f"sweep {key} = {val} is too large for m = {m}")
        if self.workers < 1:
            raise SpecError("workers must be >= 1")


def _pow2(lo: int, hi: int) -> list[float]:
    return [2.0**-i for i in range(lo, hi + 1)]


def _fourier(spec: ExperimentSpec) -> OperatorPair:
    return cfgmod.build_operator({"operator": spec.section("operator")})


def _driver(spec: ExperimentSpec) -> WienerDriver:
    noise = dict(spec.section("noise"))
    noise["seed"] = spec.seed
    return cfgmod.build_driver({"noise": noise})


def _grid(spec: ExperimentSpec) -> TimeGrid:
    return cfgmod.build_grid({"noise": spec.section("noise"), "grid": spec.section("grid")})


def _initial(spec: ExperimentSpec, basis: BasisSpec):
    return cfgmod.build_initial({"initial": spec.section("initial")}, basis)


def _coefficients(spec: ExperimentSpec, P: OperatorPair):
    sec = dict(spec.section("coefficients"))
    name = sec.pop("preset", "zero")
    return preset(name, P, int(spec.section("noise").get("M", 8)), sec)


def closed_form_zero(basis: BasisSpec, eps: float, t: float, j: int, u0: np.ndarray, g_scale: float = 1.0):
    """j-th eps-derivative of the fourier solution with f = B = 0, built from cos/sin directly.

    Independent of the operator module: rotation by k t of each (cos, sin)
    block times (-g t)^j exp(-eps g t) with g = g_scale k^2.
    """
    out = np.zeros_like(u0, dtype=float)
    out[0] = u0[0] if j == 0 else 0.0
    for k in range(1, basis.size + 1):
        g = g_scale * k * k
        c, s = u0[2 * k - 1], u0[2 * k]
        fac = (-g * t) ** j * math.exp(-eps * g * t)
        out[2 * k - 1] = fac * (c * math.cos(k * t) - s * math.sin(k * t))
        out[2 * k] = fac * (c * math.sin(k * t) + s * math.cos(k * t))
    return out


def _random_decaying(basis: BasisSpec, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(basis.dim) / (1.0 + basis.wavenumbers()) ** 2
    return x / np.linalg.norm(x)


# -- deterministic experiments ------------------------------------------------


def exp_zero_exactness(spec: ExperimentSpec) -> Report:
    P = _fourier(spec)
    c = preset("zero", P, int(spec.section("noise").get("M", 8)))
    driver = _driver(spec)
    u0 = _random_decaying(P.basis, spec.seed)
    tol = spec.tol("abs", 1e-12)
    rep = Report("zero_exactness")
    worst = 0.0
    for eps in spec.sweep("eps_list"):
        for steps in spec.sweep("steps_list"):
            grid = TimeGrid(driver.T, int(steps))
            sol = solve_base(P, c, eps, u0, grid, driver, 0)
            err = max(
                float(np.abs(sol.states[i] - closed_form_zero(P.basis, eps, t, 0, u0)).max())
                for i, t in enumerate(grid.times)
            )
            worst = max(worst, err)
            rep.rows.append({"eps": eps, "steps": steps, "max_abs_error": err})
    rep.info["max_abs_error"] = worst
    rep.check(f"solver equals closed-form multiplier solution within {tol:g}", worst <= tol,
              "mild solution with f = B = 0 is S(t)u0")
    return rep


def exp_h1(spec: ExperimentSpec) -> Report:
    P = _fourier(spec)
    rep = check_assumption_h1(P, int(spec.sweep("samples", 1000)), spec.sweep("t"), spec.seed,
                              spec.tol("rtol", 1e-10))
    rep.name = "h1"
    return rep


def exp_seh(spec: ExperimentSpec) -> Report:
    P = _fourier(spec)
    rng = np.random.default_rng(spec.seed)
    n_eps = int(spec.sweep("n_eps", 10))
    n_t = int(spec.sweep("n_t", 10))
    eps_values = [float(e) for e in rng.uniform(0.0, 1.0, n_eps)]
    t_values = [float(t) for t in rng.uniform(0.0, float(spec.sweep("t_max", 5.0)), n_t)]
    rep = check_semigroup_bound_perturbed(P, eps_values, int(spec.sweep("samples", 10)), t_values,
                                          spec.seed + 1, spec.tol("rtol", 1e-10))
    rep.name = "seh"
    rep.info["triples"] = n_eps * n_t * int(spec.sweep("samples", 10))
    return rep


def exp_trotter(spec: ExperimentSpec) -> Report:
    op = spec.section("operator")
    D = OperatorPair.dense(op["A"], op["G"], int(op.get("m", 1)))
    eps = float(spec.sweep("eps", 1.0))
    t = float(spec.sweep("t", 1.0))
    ns = [int(n) for n in spec.sweep("n")]
    exact = D.semigroup_matrix(eps, t)
    rep = Report("trotter")
    errs = []
    for n in ns:
        e = float(np.linalg.norm(trotter_matrix(D, eps, t, n) - exact, 2))
        errs.append(e)
        rep.rows.append({"backend": "dense", "n": n, "error": e})
    slope = loglog_slope([1.0 / n for n in ns], errs)
    rep.info["dense_slope"] = slope
    lo, hi = spec.tol("slope_low", 0.8), spec.tol("slope_high", 1.2)
    rep.check(f"dense error slope vs 1/n in [{lo:g}, {hi:g}]", lo <= slope <= hi, "Trotter product formula")

    F = OperatorPair.fourier(int(spec.sweep("fourier_K", 16)), 3)
    fexact = F.semigroup_matrix(eps, t)
    ferr = 0.0
    for n in ns:
        e = float(np.abs(trotter_matrix(F, eps, t, n) - fexact).max())
        ferr = max(ferr, e)
        rep.rows.append({"backend": "fourier", "n": n, "error": e})
    rep.info["fourier_max_error"] = ferr
    tol = spec.tol("fourier_abs", 1e-12)
    rep.check(f"fourier Trotter error <= {tol:g} at every n", ferr <= tol, "commuting factors make Trotter exact")
    return rep


def exp_resolvent(spec: ExperimentSpec) -> Report:
    P = _fourier(spec)
    lam = float(spec.sweep("lam", 2.0))
    h_list = spec.sweep("h")
    x = _initial(spec, P.basis)
    lo, hi = spec.tol("slope_low", 0.9), spec.tol("slope_high", 1.1)
    rep = Report("resolvent")
    for eps in spec.sweep("eps_list"):
        for k in spec.sweep("k_list"):
            sub = check_resolvent_convergence(P, lam, eps, h_list, int(k), int(spec.sweep("samples", 1000)), x,
                                              spec.tol("conv_abs", 1e-2), spec.seed)
            for row in sub.rows:
                rep.rows.append({"eps": eps, "k": k, **row})
            slope = sub.info["slope"]
            tag = f"eps={eps:g}, k={k}"
            for name, ok in sub.verdicts.items():
                rep.check(f"{name} ({tag})", ok, sub.anchors.get(name))
            rep.check(f"slope in [{lo:g}, {hi:g}] ({tag})", lo <= slope <= hi, "strong resolvent convergence")
            rep.info[f"slope[{tag}]"] = slope
            rep.info[f"G_bound_ratio[{tag}]"] = sub.info["max_G_resolvent_ratio"]
    return rep


def exp_strong_continuity(spec: ExperimentSpec) -> Report:
    P = _fourier(spec)
    t_list = spec.sweep("t")
    phi = mode_element(P.basis, 1)
    rep = Report("strong_continuity")
    sub = check_strong_continuity(P, 0.0, 0, phi, t_list, spec.tol("abs", 1e-6))
    chord = 0.0
    for row in sub.rows:
        expect = 2 * abs(math.sin(row["t"] / 2))
        chord = max(chord, abs(row["distance"] - expect))
        rep.rows.append({"case": "fourier k=0 eps=0", **row, "chord": expect})
    rep.check("fourier distance equals chord 2|sin(t/2)|", chord <= spec.tol("chord_abs", 1e-12),
              "right-translation semigroup")
    for name, ok in sub.verdicts.items():
        rep.check(f"{name} (fourier, k=0)", ok, sub.anchors[name])
    x = _random_decaying(P.basis, spec.seed)
    x = x / float(graph_norm_array(x, P, P.m + 1))
    sub = check_strong_continuity(P, float(spec.sweep("eps", 0.5)), P.m + 1, x, t_list, spec.tol("abs_graph", 1e-3))
    for row in sub.rows:
        rep.rows.append({"case": f"fourier k={P.m + 1}", **row})
    for name, ok in sub.verdicts.items():
        rep.check(f"{name} (fourier, k={P.m + 1})", ok, sub.anchors[name])
    op = spec.section("dense")
    D = OperatorPair.dense(op["A"], op["G"], 1)
    unit = np.ones(D.dim) / math.sqrt(D.dim)
    sub = check_strong_continuity(D, 1.0, 0, unit, t_list, spec.tol("abs", 1e-6))
    for row in sub.rows:
        rep.rows.append({"case": "dense k=0", **row})
    for name, ok in sub.verdicts.items():
        rep.check(f"{name} (dense)", ok, sub.anchors[name])
    return rep


def exp_faa_di_bruno(spec: ExperimentSpec) -> Report:
    n_max = int(spec.sweep("n_max", 6))
    rep = check_phi_recursion(n_max)
    rep.name = "faa_di_bruno"
    n4 = {t.sizes: t.coefficient for t in correction_terms(4)}
    rep.info["n4_terms"] = " ".join(f"{'+'.join(map(str, s))}:{c}" for s, c in n4.items())
    rep.check("n = 4 coefficients are 1+1+1+1:1, 2+1+1:6, 2+2:3, 3+1:4",
              n4 == {(1, 1, 1, 1): 1, (2, 1, 1): 6, (2, 2): 3, (3, 1): 4}, "Faa di Bruno expansion")
    rep.check("coefficients for n = 5 sum to 51", sum(t.coefficient for t in correction_terms(5)) == 51,
              "set partitions of {1..5} with >= 2 blocks")
    return rep


def exp_degenerate_G(spec: ExperimentSpec) -> Report:
    P = _fourier(spec)
    c = _coefficients(spec, P)
    driver = _driver(spec)
    grid = _grid(spec)
    u0 = _initial(spec, P.basis)
    order = int(spec.sweep("order", P.m))
    lv = hierarchy_ensemble(P, c, float(spec.sweep("eps", 0.3)), u0, order, grid, driver,
                            int(spec.sweep("paths", 4)), spec.workers)
    rep = Report("degenerate_G")
    worst = 0.0
    for k in range(1, order + 1):
        mx = float(np.abs(lv[k]).max())
        worst = max(worst, mx)
        rep.rows.append({"level": k, "max_abs": mx})
    rep.info["level0_max_abs"] = float(np.abs(lv[0]).max())
    tol = spec.tol("abs", 1e-12)
    rep.check(f"|u^k| <= {tol:g} for all k >= 1 and all t when G = 0", worst <= tol,
              "n G u^{n-1} forcing vanishes")
    return rep


def _zero_fd(spec: ExperimentSpec, k: int) -> Report:
    P = _fourier(spec)
    c = preset("zero", P, int(spec.section("noise").get("M", 8)))
    driver = _driver(spec)
    grid = _grid(spec)
    u0 = _initial(spec, P.basis).coeffs
    eps = float(spec.sweep("eps", 0.1))
    h_list = spec.sweep("h")
    korder = P.m - k
    rep = finite_difference_check(P, c, eps, u0, k, h_list, grid, driver, 1, 2.0, (0.0, math.inf))
    rep.name = f"zero_w{k}"
    rep.verdicts.clear()
    worst_rel = 0.0
    closed_vals = []
    for row in rep.rows:
        h = row["h"]
        w = np.stack([
            (closed_form_zero(P.basis, eps + h, t, k - 1, u0) - closed_form_zero(P.basis, eps, t, k - 1, u0)) / h
            - closed_form_zero(P.basis, eps, t, k, u0)
            for t in grid.times
        ])
        closed = float(graph_norm_array(w, P, korder).max())
        closed_vals.append(closed)
        row["closed_form"] = closed
        worst_rel = max(worst_rel, abs(row["cp_norm"] - closed) / closed)
    slope = rep.info["slope"]
    closed_slope = loglog_slope(h_list, closed_vals)
    rep.info["closed_form_slope"] = closed_slope
    rep.info["max_rel_dev_from_closed_form"] = worst_rel
    tol = spec.tol("slope_abs", 1e-3)
    rep.check("solver w matches closed form", worst_rel <= spec.tol("closed_rtol", 1e-5), f"eps -> u_eps is C^{k}")
    rep.check(f"slope equals 1 within {tol:g}", abs(slope - 1.0) <= tol, f"eps -> u_eps is C^{k}")
    rep.check("w decreases with h", is_monotone_decreasing([r["cp_norm"] for r in rep.rows]), f"eps -> u_eps is C^{k}")
    return rep


def exp_zero_w1(spec):
    return _zero_fd(spec, 1)


def exp_zero_w2(spec):
    return _zero_fd(spec, 2)


def exp_zero_taylor(spec: ExperimentSpec) -> Report:
    P = _fourier(spec)
    c = preset("zero", P, int(spec.section("noise").get("M", 8)))
    driver = _driver(spec)
    grid = _grid(spec)
    u0 = _initial(spec, P.basis).coeffs
    eps_list = spec.sweep("eps_list")
    tol = spec.tol("slope_abs", 1e-2)
    rep = Report("zero_taylor")
    for K in spec.sweep("K_list"):
        K = int(K)
        sub = taylor_remainder(P, c, u0, K, eps_list, grid, driver, 1, 2.0, 0, K + 1 - tol, K + 1 + tol)
        closed = []
        for row in sub.rows:
            eps = row["eps"]
            diff = np.stack([
                closed_form_zero(P.basis, eps, t, 0, u0)
                - sum(eps**j / math.factorial(j) * closed_form_zero(P.basis, 0.0, t, j, u0) for j in range(K + 1))
                for t in grid.times
            ])
            cv = float(np.linalg.norm(diff, axis=1).max())
            closed.append(cv)
            rep.rows.append({"K": K, **row, "closed_form": cv})
        rep.info[f"slope[K={K}]"] = sub.info["slope"]
        dev = max(abs(r["remainder"] - cv) for r, cv in zip(sub.rows, closed))
        rep.check(f"remainder slope = {K + 1} within {tol:g} (K={K})", abs(sub.info["slope"] - (K + 1)) <= tol,
                  "Taylor expansion in eps")
        rep.check(f"remainder matches closed form (K={K})", dev <= spec.tol("closed_abs", 1e-12),
                  "exponential Taylor remainder")
    return rep


def exp_hmp(spec: ExperimentSpec) -> Report:
    P = _fourier(spec)
    M = int(spec.section("noise").get("M", 8))
    rep = Report("hmp")
    for name in ("zero", "additive", "scalar_mult", "nemytskii"):
        c = preset(name, P, M)
        sub = check_Hmp(c, P, int(spec.sweep("samples", 200)), spec.seed, spec.tol("rtol", 1e-9))
        rep.rows.append({"preset": name, "max_ratio": sub.info["max_ratio"],
                         "declared": sub.info["declared_constant"], "max_quotient": sub.info["max_quotient"]})
        for a, ok in sub.verdicts.items():
            rep.check(f"{a} ({name})", ok, sub.anchors[a])
    return rep


def exp_dense_alphas(spec: ExperimentSpec) -> Report:
    op = spec.section("operator")
    D = OperatorPair.dense(op["A"], op["G"], int(op.get("m", 2)))
    rep = check_assumption_h1(D, int(spec.sweep("samples", 1000)), spec.sweep("t"), spec.seed,
                              spec.tol("rtol", 1e-10))
    rep.name = "dense_alphas"
    rep.info["alphas"] = [float(a) for a in D.alphas]
    return rep


# -- Monte Carlo experiments --------------------------------------------------


def exp_continuity_eps(spec: ExperimentSpec) -> Report:
    P = _fourier(spec)
    c = _coefficients(spec, P)
    driver = _driver(spec)
    grid = _grid(spec)
    u0 = _initial(spec, P.basis)
    eps = float(spec.sweep("eps", 0.1))
    paths = int(spec.sweep("paths", 64))
    p = float(spec.sweep("p", 2.0))
    k = int(spec.sweep("k", P.m))
    lv = hierarchy_ensemble(P, c, eps, u0, 1, grid, driver, paths, spec.workers)
    dnorm = cp_norm(lv[1], p, k, P).value
    rep = check_continuity_in_eps(P, c, u0, eps, spec.sweep("h"), grid, driver, paths, p, k,
                                  spec.tol("rel", 0.02), dnorm, spec.tol("prediction_factor", 10.0), spec.workers,
                                  relative=True)
    rep.info["derivative_cp_norm"] = dnorm
    return rep


def _fd(spec: ExperimentSpec, k: int) -> Report:
    P = _fourier(spec)
    c = _coefficients(spec, P)
    rep = finite_difference_check(
        P, c, float(spec.sweep("eps", 0.1)), _initial(spec, P.basis), k, spec.sweep("h"), _grid(spec),
        _driver(spec), int(spec.sweep("paths", 64)), float(spec.sweep("p", 2.0)),
        (spec.tol("slope_low", 0.8), spec.tol("slope_high", 1.2)), workers=spec.workers,
    )
    rep.name = f"fd_k{k}"
    return rep


def exp_fd_k1(spec):
    return _fd(spec, 1)


def exp_fd_k2(spec):
    return _fd(spec, 2)


def exp_taylor_scalar_mult(spec: ExperimentSpec) -> Report:
    P = _fourier(spec)
    c = _coefficients(spec, P)
    K = int(spec.sweep("K", 2))
    rep = taylor_remainder(P, c, _initial(spec, P.basis), K, spec.sweep("eps_list"), _grid(spec), _driver(spec),
                           int(spec.sweep("paths", 64)), float(spec.sweep("p", 2.0)), 0,
                           spec.tol("min_slope", 2.7), workers=spec.workers)
    rep.name = "taylor_scalar_mult"
    return rep


def exp_additive_mean(spec: ExperimentSpec) -> Report:
    P = _fourier(spec)
    c = _coefficients(spec, P)
    driver = _driver(spec)
    grid = _grid(spec)
    u0 = _initial(spec, P.basis)
    eps = float(spec.sweep("eps", 0.3))
    paths = int(spec.sweep("paths", 10_000))
    states = solve_ensemble(P, c, eps, u0, grid, driver, paths, spec.workers)[:, -1]
    mean = states.mean(axis=0)
    se = states.std(axis=0, ddof=1) / math.sqrt(paths)
    target = closed_form_zero(P.basis, eps, grid.T, 0, u0.coeffs)
    z = np.abs(mean - target) / np.maximum(se, 1e-300)
    rep = Report("additive_mean")
    rep.rows = [{"slot": i, "mean": float(mean[i]), "target": float(target[i]), "std_error": float(se[i]),
                 "z": float(z[i])} for i in range(P.dim)]
    zmax = spec.tol("z", 3.0)
    ok = bool(np.all((z <= zmax) | (se == 0) & (np.abs(mean - target) <= 1e-12)))
    rep.info["max_z"] = float(np.max(np.where(se > 0, z, 0.0)))
    rep.check(f"ensemble mean of u(T) within {zmax:g} std errors of S(T)u0", ok, "stochastic convolution has mean zero")
    return rep


def exp_scalar_mult_strong(spec: ExperimentSpec) -> Report:
    P = _fourier(spec)
    c = _coefficients(spec, P)
    beta = float(spec.section("coefficients").get("beta", 0.3))
    driver = _driver(spec)
    u0 = _initial(spec, P.basis)
    eps = float(spec.sweep("eps", 0.1))
    paths = int(spec.sweep("paths", 64))
    T = driver.T
    order = int(spec.sweep("order", 1))
    rep = Report("scalar_mult_strong")
    errs = []
    steps_list = [int(s) for s in spec.sweep("steps_list")]
    for steps in steps_list:
        grid = TimeGrid(T, steps)
        lv = hierarchy_ensemble(P, c, eps, u0, order, grid, driver, paths, spec.workers)
        WT = np.array([driver.increments(p, steps)[:, 0].sum() for p in range(paths)])
        factor = np.exp(beta * WT - 0.5 * beta**2 * T)
        row = {"steps": steps}
        total = 0.0
        for j in range(order + 1):
            exact = factor[:, None] * closed_form_zero(P.basis, eps, T, j, u0.coeffs)[None]
            e = float(np.sqrt(np.mean(np.sum((lv[j][:, -1] - exact) ** 2, axis=1))))
            row[f"rms_error_level{j}"] = e
            total += e
        errs.append(total)
        rep.rows.append(row)
    rate = loglog_slope([T / s for s in steps_list], errs)
    rep.info["rate"] = rate
    lo = spec.tol("min_rate", 0.4)
    rep.check(f"strong error rate in dt >= {lo:g}", rate >= lo, "geometric closed form")
    return rep


def exp_grid_refinement(spec: ExperimentSpec) -> Report:
    P = _fourier(spec)
    c = _coefficients(spec, P)
    driver = _driver(spec)
    u0 = _initial(spec, P.basis)
    eps = float(spec.sweep("eps", 0.1))
    paths = int(spec.sweep("paths", 16))
    steps_list = sorted(int(s) for s in spec.sweep("steps_list"))
    sols = {s: solve_ensemble(P, c, eps, u0, TimeGrid(driver.T, s), driver, paths, spec.workers) for s in steps_list}
    rep = Report("grid_refinement")
    diffs, dts = [], []
    for coarse, fine in zip(steps_list, steps_list[1:]):
        stride = fine // coarse
        d = np.abs(sols[fine][:, ::stride] - sols[coarse])
        val = float(np.sqrt(np.mean(np.max(np.sum(d**2, axis=-1), axis=1))))
        diffs.append(val)
        dts.append(driver.T / coarse)
        rep.rows.append({"coarse_steps": coarse, "fine_steps": fine, "rms_sup_diff": val})
    rate = loglog_slope(dts, diffs)
    rep.info["rate"] = rate
    rep.check("successive refinements decrease", is_monotone_decreasing(diffs), "Cauchy behavior under refinement")
    lo = spec.tol("min_rate", 0.4)
    rep.check(f"observed rate >= {lo:g}", rate >= lo, "Cauchy behavior under refinement")
    return rep


# -- registry -----------------------------------------------------------------

_SKEW = [[0.0, -1.0], [1.0, 0.0]]
_DIAG10 = [[1.0, 0.0], [0.0, 0.0]]
_FOURIER16 = {"backend": "fourier", "K": 16, "m": 3}
_FOURIER4 = {"backend": "fourier", "K": 4, "m": 3}
_NOISE = {"M": 8, "master_steps": 256, "T": 0.5}
_NEMYTSKII_U0 = {"modes": [[1, "cos", 1.0], [2, "sin", 0.5]]}

_DEFAULTS: dict[str, dict] = {
    "zero_exactness": {
        "operator": _FOURIER16, "noise": {"M": 1, "master_steps": 512, "T": 1.0},
        "sweep": {"eps_list": [0.0, 0.1, 1.0], "steps_list": [1, 8, 64, 512]},
        "tolerances": {"abs": 1e-12},
    },
    "h1": {"operator": _FOURIER16, "sweep": {"samples": 1000, "t": [0.0, 0.1, 0.5, 1.0, 2.0, 5.0]},
           "tolerances": {"rtol": 1e-10}},
    "seh": {"operator": _FOURIER16, "sweep": {"n_eps": 10, "n_t": 10, "samples": 10, "t_max": 5.0},
            "tolerances": {"rtol": 1e-10}},
    "trotter": {
        "operator": {"A": _SKEW, "G": _DIAG10, "m": 1},
        "sweep": {"eps": 1.0, "t": 1.0, "n": [2**i for i in range(9)], "fourier_K": 16},
        "tolerances": {"slope_low": 0.8, "slope_high": 1.2, "fourier_abs": 1e-12},
    },
    "resolvent": {
        "operator": _FOURIER16, "initial": {"modes": [[1, "cos", 1.0], [2, "sin", 0.5]]},
        "sweep": {"lam": 2.0, "eps_list": [0.0, 0.5], "k_list": [0, 1], "h": [0.25 * 2.0**-i for i in range(8)],
                  "samples": 1000},
        "tolerances": {"slope_low": 0.9, "slope_high": 1.1, "conv_abs": 1e-2},
    },
    "strong_continuity": {
        "operator": _FOURIER16,
        "dense": {"A": [[0.5, -1.0, 0.0], [1.0, 0.2, 0.3], [0.0, -0.3, 1.0]], "G": [[2.0, 0.0, 0.0], [0.0, 1.0, 0.5],
                                                                                      [0.0, 0.5, 1.0]]},
        "sweep": {"eps": 0.5, "t": [10.0**-i for i in range(0, 8)]},
        "tolerances": {"abs": 1e-6, "abs_graph": 1e-3, "chord_abs": 1e-12},
    },
    "faa_di_bruno": {"sweep": {"n_max": 6}},
    "degenerate_G": {
        "operator": {"backend": "fourier", "K": 4, "m": 3, "g_scale": 0.0},
        "coefficients": {"preset": "nemytskii"}, "noise": _NOISE, "grid": {"steps": 64},
        "initial": _NEMYTSKII_U0, "sweep": {"eps": 0.3, "order": 3, "paths": 4}, "tolerances": {"abs": 1e-12},
    },
    "zero_w1": {
        "operator": _FOURIER4, "noise": {"M": 1, "master_steps": 64, "T": 0.5}, "grid": {"steps": 64},
        "initial": {"modes": [[2, "cos", 1.0]]}, "sweep": {"eps": 0.1, "h": _pow2(10, 15)},
        "tolerances": {"slope_abs": 1e-3, "closed_rtol": 1e-5},
    },
    "zero_w2": {
        "operator": _FOURIER4, "noise": {"M": 1, "master_steps": 64, "T": 0.5}, "grid": {"steps": 64},
        "initial": {"modes": [[2, "cos", 1.0]]}, "sweep": {"eps": 0.1, "h": _pow2(10, 15)},
        "tolerances": {"slope_abs": 1e-3, "closed_rtol": 1e-5},
    },
    "zero_taylor": {
        "operator": _FOURIER4, "noise": {"M": 1, "master_steps": 64, "T": 0.5}, "grid": {"steps": 64},
        "initial": {"modes": [[2, "cos", 1.0]]}, "sweep": {"K_list": [1, 2], "eps_list": _pow2(5, 10)},
        "tolerances": {"slope_abs": 1e-2, "closed_abs": 1e-12},
    },
    "hmp": {"operator": _FOURIER4, "noise": {"M": 8}, "sweep": {"samples": 200}, "tolerances": {"rtol": 1e-9}},
    "dense_alphas": {
        "operator": {"A": [[1.0, -2.0, 0.0, 0.5], [2.0, 0.5, -1.0, 0.0], [0.0, 1.0, 0.0, -1.5], [-0.5, 0.0, 1.5, 0.3]],
                     "G": [[3.0, 1.0, 0.0, 0.0], [1.0, 2.0, 0.5, 0.0], [0.0, 0.5, 2.0, 0.2], [0.0, 0.0, 0.2, 1.0]],
                     "m": 2},
        "sweep": {"samples": 1000, "t": [0.0, 0.05, 0.2, 0.5, 1.0, 2.0]}, "tolerances": {"rtol": 1e-10},
    },
    "continuity_eps": {
        "operator": _FOURIER4, "coefficients": {"preset": "nemytskii"}, "noise": _NOISE, "grid": {"steps": 64},
        "initial": _NEMYTSKII_U0, "sweep": {"eps": 0.1, "h": _pow2(2, 7), "paths": 64, "p": 2.0, "k": 3},
        "tolerances": {"rel": 0.02, "prediction_factor": 10.0},
    },
    "fd_k1": {
        "operator": _FOURIER4, "coefficients": {"preset": "nemytskii"}, "noise": _NOISE, "grid": {"steps": 64},
        "initial": _NEMYTSKII_U0, "sweep": {"eps": 0.1, "h": _pow2(3, 8), "paths": 64, "p": 2.0},
        "tolerances": {"slope_low": 0.8, "slope_high": 1.2},
    },
    "fd_k2": {
        "operator": _FOURIER4, "coefficients": {"preset": "nemytskii"}, "noise": _NOISE, "grid": {"steps": 64},
        "initial": _NEMYTSKII_U0, "sweep": {"eps": 0.1, "h": _pow2(3, 8), "paths": 64, "p": 2.0},
        "tolerances": {"slope_low": 0.7, "slope_high": 1.3},
    },
    "taylor_scalar_mult": {
        "operator": _FOURIER4, "coefficients": {"preset": "scalar_mult", "beta": 0.3},
        "noise": {"M": 1, "master_steps": 256, "T": 0.5}, "grid": {"steps": 64},
        "initial": {"modes": [[2, "cos", 1.0]]}, "sweep": {"K": 2, "eps_list": _pow2(2, 6), "paths": 64, "p": 2.0},
        "tolerances": {"min_slope": 2.7},
    },
    "additive_mean": {
        "operator": _FOURIER4, "coefficients": {"preset": "additive", "sigma": 0.2}, "noise": _NOISE,
        "grid": {"steps": 16}, "initial": _NEMYTSKII_U0, "sweep": {"eps": 0.3, "paths": 10_000},
        "tolerances": {"z": 3.0},
    },
    "scalar_mult_strong": {
        "operator": _FOURIER4, "coefficients": {"preset": "scalar_mult", "beta": 0.3},
        "noise": {"M": 1, "master_steps": 1024, "T": 0.5}, "initial": {"modes": [[2, "cos", 1.0]]},
        "sweep": {"eps": 0.1, "paths": 256, "order": 1, "steps_list": [8, 16, 32, 64, 128, 256]},
        "tolerances": {"min_rate": 0.4},
    },
    "grid_refinement": {
        "operator": _FOURIER4, "coefficients": {"preset": "nemytskii"},
        "noise": {"M": 8, "master_steps": 1024, "T": 0.5}, "initial": _NEMYTSKII_U0,
        "sweep": {"eps": 0.1, "paths": 16, "steps_list": [8, 16, 32, 64, 128, 256]},
        "tolerances": {"min_rate": 0.4},
    },
}

EXPERIMENTS: dict[str, Callable[[ExperimentSpec], Report]] = {
    "zero_exactness": exp_zero_exactness,
    "h1": exp_h1,
    "seh": exp_seh,
    "trotter": exp_trotter,
    "resolvent": exp_resolvent,
    "strong_continuity": exp_strong_continuity,
    "faa_di_bruno": exp_faa_di_bruno,
    "degenerate_G": exp_degenerate_G,
    "zero_w1": exp_zero_w1,
    "zero_w2": exp_zero_w2,
    "zero_taylor": exp_zero_taylor,
    "hmp": exp_hmp,
    "dense_alphas": exp_dense_alphas,
    "continuity_eps": exp_continuity_eps,
    "fd_k1": exp_fd_k1,
    "fd_k2": exp_fd_k2,
    "taylor_scalar_mult": exp_taylor_scalar_mult,
    "additive_mean": exp_additive_mean,
    "scalar_mult_strong": exp_scalar_mult_strong,
    "grid_refinement": exp_grid_refinement,
}

FAST = [
    "zero_exactness", "h1", "seh", "trotter", "resolvent", "strong_continuity", "faa_di_bruno",
    "degenerate_G", "zero_w1", "zero_w2", "zero_taylor", "hmp", "dense_alphas",
]
FULL = FAST + [
    "continuity_eps", "fd_k1", "fd_k2", "taylor_scalar_mult", "additive_mean", "scalar_mult_strong",
    "grid_refinement",
]

DEFAULT_SEED = 20240611


def default_spec(name: str, seed: int = DEFAULT_SEED, workers: int = 1) -> ExperimentSpec:
    if name not in EXPERIMENTS:
        raise SpecError(f"unknown experiment {name!r}; known: {sorted(EXPERIMENTS)}")
    return ExperimentSpec(name, copy.deepcopy(_DEFAULTS[name]), seed, workers)


def run(spec: ExperimentSpec, out_dir: str | Path | None = None) -> Report:
    """Run one experiment; with ``out_dir`` also write ``<name>.csv`` and ``<name>.txt``."""
    spec.validate()
    rep = EXPERIMENTS[spec.name](spec)
    rep.name = spec.name
    rep.provenance = {"seed": spec.seed, "config_hash": cfgmod.config_hash(spec.resolved())}
    if out_dir is not None:
        write_reports([rep], out_dir)
    return rep


def suite(level: str = "fast", seed: int = DEFAULT_SEED, workers: int = 1,
          out_dir: str | Path | None = None) -> list[Report]:
    if level not in ("fast", "full"):
        raise SpecError(f"unknown suite level {level!r}")
    names = FAST if level == "fast" else FULL
    specs = [default_spec(n, seed, workers) for n in names]
    if workers <= 1:
        reports = [run(s) for s in specs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(run, specs))
    if out_dir is not None:
        write_reports(reports, out_dir)
    return reports


def write_reports(reports: list[Report], out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for rep in reports:
        (out / f"{rep.name}.csv").write_text(rep.to_csv())
    lines = []
    for rep in reports:
        lines.append(rep.summary())
        if rep.provenance:
            lines.append(f"    provenance: seed={rep.provenance.get('seed')} "
                         f"config_hash={rep.provenance.get('config_hash')}")
    n_pass = sum(r.passed for r in reports)
    lines.append(f"{n_pass}/{len(reports)} experiments passed")
    path = out / "report.txt"
    path.write_text("\n".join(lines) + "\n")
    return path
