"""Command-line entry point.

    pertflow simulate    [--config FILE] [--set sec.key=val ...] [--out DIR] [--paths N]
    pertflow sensitivity [--config FILE] [--order N] [--preset NAME] [--eps X] [--out DIR]
    pertflow verify      --name EXPERIMENT [--config FILE] [--out DIR]
    pertflow suite       [--level fast|full] [--seed N] [--workers N] [--out DIR]
    pertflow describe    [--config FILE] [--set ...]

Exit status: 0 success / all verdicts pass, 1 a verdict failed, 2 usage or config error.
The environment variable PERTFLOW_SEED overrides the configured seed.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import harness
from .reports import Report, _fmt
from .sensitivity import finite_difference_check, hierarchy_ensemble, taylor_remainder
from .solver import SolverError, cp_norm, solve_ensemble
from .spectral import graph_norm_array

log = logging.getLogger("pertflow")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="TOML configuration file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SEC.KEY=VAL",
                   help="override a configuration value (repeatable)")
    p.add_argument("--out", default="pertflow-out", help="output directory (default: %(default)s)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pertflow", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("simulate", help="solve the base equation for an ensemble of paths")
    _common(p)
    p.add_argument("--paths", type=int)
    p.add_argument("--eps", type=float)

    p = sub.add_parser("sensitivity", help="solve the eps-derivative hierarchy and check it")
    _common(p)
    p.add_argument("--order", type=int)
    p.add_argument("--preset")
    p.add_argument("--eps", type=float)
    p.add_argument("--paths", type=int)

    p = sub.add_parser("verify", help="run one named experiment")
    _common(p)
    p.add_argument("--name", required=True, choices=sorted(harness.EXPERIMENTS))
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("suite", help="run the experiment suite")
    p.add_argument("--level", choices=("fast", "full"), default="fast")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="pertflow-out")

    p = sub.add_parser("describe", help="print the resolved configuration as TOML")
    p.add_argument("--config")
    p.add_argument("--set", dest="overrides", action="append", default=[])
    return parser


def _env_seed() -> int | None:
    raw = os.environ.get("PERTFLOW_SEED")
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError as exc:
        raise cfgmod.ConfigError(f"PERTFLOW_SEED must be an integer, got {raw!r}") from exc


def resolve_config(path: str | None, overrides: list[str], base: dict | None = None) -> dict:
    cfg = cfgmod.apply_overrides(cfgmod.load(path, base), overrides)
    seed = _env_seed()
    if seed is not None:
        cfg["noise"]["seed"] = seed
    return cfg


def _finish(reports: list[Report], out: Path) -> int:
    harness.write_reports(reports, out)
    print((out / "report.txt").read_text(), end="")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


def cmd_simulate(args) -> int:
    cfg = resolve_config(args.config, args.overrides)
    if args.paths is not None:
        cfg["sweep"]["paths"] = args.paths
    if args.eps is not None:
        cfg["sweep"]["eps"] = args.eps
    P = cfgmod.build_operator(cfg)
    c = cfgmod.build_coefficients(cfg, P)
    u0 = cfgmod.build_initial(cfg, P.basis)
    driver, grid = cfgmod.build_driver(cfg), cfgmod.build_grid(cfg)
    eps = float(cfg["sweep"]["eps"])
    paths = int(cfg["sweep"]["paths"])
    p = float(cfg["sweep"].get("p", 2.0))
    states = solve_ensemble(P, c, eps, u0, grid, driver, paths)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_path_csv(out / "simulate_path0.csv", grid.times, states[0])
    rep = Report("simulate")
    for k in range(P.m + 1):
        est = cp_norm(states, p, k, P)
        rep.rows.append({"k": k, "p": p, "cp_norm": est.value, "std_error": est.std_error, "paths": est.paths})
    mean_T = states[:, -1].mean(axis=0)
    rep.info["mean_final_norm"] = float(np.linalg.norm(mean_T))
    rep.check("all paths finite", bool(np.all(np.isfinite(states))))
    rep.provenance = {"seed": driver.seed, "config_hash": cfgmod.config_hash(cfg)}
    (out / "config.toml").write_text(cfgmod.dumps(cfg))
    return _finish([rep], out)


def _write_path_csv(path: Path, times, states):
    header = "step,time," + ",".join(f"c{i}" for i in range(states.shape[1]))
    lines = [header] + [
        f"{s},{_fmt(float(t))}," + ",".join(_fmt(float(x)) for x in row)
        for s, (t, row) in enumerate(zip(times, states))
    ]
    path.write_text("\n".join(lines) + "\n")


def cmd_sensitivity(args) -> int:
    cfg = resolve_config(args.config, args.overrides)
    if args.preset is not None:
        cfg["coefficients"] = {"preset": args.preset}
    if args.order is not None:
        cfg["sweep"]["order"] = args.order
    if args.eps is not None:
        cfg["sweep"]["eps"] = args.eps
    if args.paths is not None:
        cfg["sweep"]["paths"] = args.paths
    P = cfgmod.build_operator(cfg)
    c = cfgmod.build_coefficients(cfg, P)
    u0 = cfgmod.build_initial(cfg, P.basis)
    driver, grid = cfgmod.build_driver(cfg), cfgmod.build_grid(cfg)
    sw = cfg["sweep"]
    eps = float(sw["eps"])
    order = int(sw.get("order", 1))
    paths = int(sw.get("paths", 16))
    p = float(sw.get("p", 2.0))
    if not 1 <= order <= P.m:
        raise cfgmod.ConfigError(f"order must lie in 1..m = {P.m}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    levels = hierarchy_ensemble(P, c, eps, u0, order, grid, driver, paths)
    for k in range(order + 1):
        _write_path_csv(out / f"sensitivity_level{k}.csv", grid.times, levels[k][0])
    reports = []
    mags = Report("sensitivity_levels")
    for k in range(order + 1):
        for s, t in enumerate(grid.times):
            row = {"level": k, "step": s, "time": float(t)}
            if P.basis.kind == "fourier":
                for mode in range(P.basis.size + 1):
                    sl = slice(0, 1) if mode == 0 else slice(2 * mode - 1, 2 * mode + 1)
                    row[f"mode{mode}"] = float(np.linalg.norm(levels[k][0, s, sl]))
            row["norm"] = float(graph_norm_array(levels[k][0, s], P, 0))
            mags.rows.append(row)
    mags.check("u^k(0) = 0 for k >= 1", all(float(np.abs(levels[k][:, 0]).max()) == 0.0 for k in range(1, order + 1)),
               "zero initial data of the derivative equations")
    reports.append(mags)
    h_list = sw.get("h", cfgmod.DEFAULT_CONFIG["sweep"]["h"])
    h_list = [h for h in h_list if eps + h <= 1.0]
    lo = float(cfg["tolerances"].get("slope_low", 0.8))
    hi = float(cfg["tolerances"].get("slope_high", 1.2))
    reports.append(finite_difference_check(P, c, eps, u0, order, h_list, grid, driver, paths, p, (lo, hi)))
    if order + 1 <= P.m:
        eps_list = sw.get("eps_list", cfgmod.DEFAULT_CONFIG["sweep"]["eps_list"])
        reports.append(taylor_remainder(P, c, u0, order, eps_list, grid, driver, paths, p))
    for r in reports:
        r.provenance = {"seed": driver.seed, "config_hash": cfgmod.config_hash(cfg)}
    (out / "config.toml").write_text(cfgmod.dumps(cfg))
    return _finish(reports, out)


def cmd_verify(args) -> int:
    spec = harness.default_spec(args.name, workers=args.workers)
    if args.config is not None or args.overrides:
        base = {sec: {} for sec in cfgmod.SECTIONS}
        base = cfgmod.merge(base, spec.config)
        base.setdefault("noise", {})["seed"] = spec.seed
        cfg = resolve_config(args.config, args.overrides, base)
    else:
        cfg = {"noise": {"seed": spec.seed}}
        seed = _env_seed()
        if seed is not None:
            cfg["noise"]["seed"] = seed
    spec.seed = int(cfg["noise"].pop("seed", spec.seed))
    if args.config is not None or args.overrides:
        spec.config = {k: v for k, v in cfg.items() if v}
    rep = harness.run(spec)
    return _finish([rep], Path(args.out))


def cmd_suite(args) -> int:
    seed = args.seed if args.seed is not None else _env_seed()
    reports = harness.suite(args.level, harness.DEFAULT_SEED if seed is None else seed, args.workers)
    return _finish(reports, Path(args.out))


def cmd_describe(args) -> int:
    cfg = resolve_config(args.config, args.overrides)
    sys.stdout.write(cfgmod.dumps(cfg))
    sys.stdout.write(f"# config_hash = {cfgmod.config_hash(cfg)}\n")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "sensitivity": cmd_sensitivity,
    "verify": cmd_verify,
    "suite": cmd_suite,
    "describe": cmd_describe,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (cfgmod.ConfigError, harness.SpecError) as exc:
        print(f"pertflow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, ValueError, ArithmeticError) as exc:
        print(f"pertflow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
