"""Command-line front end.

Every subcommand reads the same flat config file (flags override), writes its
artifacts plus a run manifest into the output directory, and exits 0 on
success, 2 on input/validation problems, 3 on numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, expand_fixtures, load_config
from .errors import InputError, NumericalError
from .network import ModelParams, load_tntp
from .power import (coupled_fixed_point, impact_report, load_power_file,
                    report_csv, solve_opf, charging_load)
from .pricing import GDGSAConfig, gdgsa
from .problem import PricingProblem, build_problem
from .sensitivity import charge_flow_gradient
from .verify import GridSpec, certify_ue, fd_gradient, grid_enumerate


def _gdgsa_config(cfg: RunConfig) -> GDGSAConfig:
    return GDGSAConfig(gamma=cfg.gamma, alpha0=cfg.alpha0, k_max=cfg.k_max,
                       epsilon=cfg.epsilon, max_outer=cfg.max_outer,
                       ue_tol=cfg.ue_tol, cost_eps=cfg.cost_eps,
                       rank_tol=cfg.rank_tol, reg_eps=cfg.reg_eps,
                       flow_eps=cfg.flow_eps)


def _build_problem(cfg: RunConfig) -> PricingProblem:
    for name in ("net", "trips", "fcs"):
        if not getattr(cfg, name):
            raise InputError(f"config is missing the {name} file path")
    net, demand = load_tntp(cfg.net, cfg.trips, cfg.fcs)
    params = ModelParams(charge_energy=cfg.charge_energy,
                         time_value=cfg.time_value,
                         price_lower=cfg.price_lower,
                         price_upper=cfg.price_upper)
    return build_problem(net, demand, params, k_paths=cfg.k_paths,
                         latency_kind=cfg.latency)


class _Run:
    """Output directory plus manifest bookkeeping for one invocation."""

    def __init__(self, cfg: RunConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.out = Path(cfg.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.started = time.perf_counter()
        self.outputs: list[str] = []

    def write_text(self, name: str, text: str) -> Path:
        path = self.out / name
        path.write_text(text)
        self.outputs.append(name)
        return path

    def write_json(self, name: str, payload) -> Path:
        return self.write_text(name, json.dumps(payload, sort_keys=True, indent=2) + "\n")

    def finish(self) -> None:
        manifest = {
            "command": self.command,
            "version": __version__,
            "config": {k: getattr(self.cfg, k) for k in vars(self.cfg)},
            "started_utc": datetime.now(timezone.utc).isoformat(),
            "wall_time_s": time.perf_counter() - self.started,
            "outputs": self.outputs,
        }
        (self.out / "manifest.json").write_text(
            json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def cmd_ue_solve(cfg: RunConfig) -> None:
    run = _Run(cfg, "ue-solve")
    problem = _build_problem(cfg)
    prices = cfg.initial_price_vector(problem.n_owned, *problem.bounds)
    sol = problem.solve(prices, tol=cfg.ue_tol)
    run.write_text("ue_solution.json", sol.to_json() + "\n")
    model = problem.ue_model(problem.full_prices(prices))
    run.write_text("certificate.json", certify_ue(sol, model).to_json() + "\n")
    run.finish()


def cmd_sensitivity(cfg: RunConfig) -> None:
    run = _Run(cfg, "sensitivity")
    problem = _build_problem(cfg)
    prices = cfg.initial_price_vector(problem.n_owned, *problem.bounds)
    sol = problem.solve(prices, tol=cfg.ue_tol)
    sens = charge_flow_gradient(problem, sol, cost_eps=cfg.cost_eps,
                                flow_eps=cfg.flow_eps, rank_tol=cfg.rank_tol,
                                reg_eps=cfg.reg_eps)
    run.write_text("sensitivity.json", sens.to_json() + "\n")
    run.finish()


def cmd_price_optimize(cfg: RunConfig) -> None:
    run = _Run(cfg, "price-optimize")
    problem = _build_problem(cfg)
    prices = cfg.initial_price_vector(problem.n_owned, *problem.bounds)
    stream = (run.out / "trajectory.jsonl").open("w")
    run.outputs.append("trajectory.jsonl")
    try:
        traj = gdgsa(problem, initial_prices=prices, config=_gdgsa_config(cfg),
                     on_iterate=lambda it: print(it.to_json(), file=stream, flush=True))
    finally:
        stream.close()
    run.write_json("price_opt.json", {
        "termination": traj.termination,
        "final_prices": traj.final.prices.tolist(),
        "final_profit": traj.final.profit,
        "iterations": len(traj.iterates),
    })
    run.finish()


def cmd_coupled_run(cfg: RunConfig) -> None:
    run = _Run(cfg, "coupled-run")
    problem = _build_problem(cfg)
    if not cfg.power:
        raise InputError("coupled-run needs a power file")
    pnet = load_power_file(cfg.power)
    prices = cfg.initial_price_vector(problem.n_owned, *problem.bounds)
    res = coupled_fixed_point(problem, pnet, config=_gdgsa_config(cfg),
                              initial_prices=prices,
                              epsilon=cfg.coupled_epsilon,
                              max_cycles=cfg.coupled_max_cycles)
    run.write_json("coupled.json", {
        "prices": res.prices.tolist(),
        "lmp": res.lmp,
        "profit": res.cycles[-1].profit,
        "cycles": [{"cycle": c.cycle, "prices": c.prices.tolist(),
                    "lmp_owned": c.lmp_owned.tolist(), "profit": c.profit}
                   for c in res.cycles],
        "converged": res.converged,
    })
    run.write_text("ue_solution.json", res.ue.to_json() + "\n")
    run.write_text("opf_solution.json", res.opf.to_json() + "\n")
    run.finish()


def cmd_oracle_grid(cfg: RunConfig) -> None:
    run = _Run(cfg, "oracle-grid")
    problem = _build_problem(cfg)
    lo, hi = cfg.grid_bounds(*problem.bounds)
    grid = GridSpec(lower=lo, upper=hi, step=np.full(problem.n_owned, cfg.grid_step),
                    cap=cfg.grid_cap)
    res = grid_enumerate(problem, grid, ue_tol=cfg.ue_tol, threads=cfg.threads)
    run.write_text("landscape.csv", res.to_csv())
    run.write_json("grid_best.json", {
        "best_prices": res.best_prices.tolist(),
        "best_profit": res.best_profit,
        "n_points": res.n_points,
    })
    run.finish()


def cmd_fd_check(cfg: RunConfig) -> None:
    run = _Run(cfg, "fd-check")
    problem = _build_problem(cfg)
    prices = cfg.initial_price_vector(problem.n_owned, *problem.bounds)
    sol = problem.solve(prices, tol=max(cfg.ue_tol, 1e-10))
    sens = charge_flow_gradient(problem, sol, cost_eps=cfg.cost_eps,
                                flow_eps=cfg.flow_eps, rank_tol=cfg.rank_tol,
                                reg_eps=cfg.reg_eps)
    fd = fd_gradient(problem, prices, delta=cfg.fd_delta, ue_tol=1e-10)
    diff = np.abs(sens.grad - fd)
    scale = np.maximum(np.abs(fd), 1e-12)
    ok = bool(np.all((diff <= 2e-3) | (diff / scale <= 0.01)))
    run.write_json("fd_check.json", {
        "analytic": sens.grad.tolist(),
        "finite_difference": fd.tolist(),
        "max_abs_diff": float(np.max(diff)),
        "within_tolerance": ok,
        "delta": cfg.fd_delta,
    })
    run.finish()
    if not ok:
        raise NumericalError(
            f"fd-check failed: max abs diff {float(np.max(diff)):.3e}")


def cmd_impact_report(cfg: RunConfig) -> None:
    run = _Run(cfg, "impact-report")
    problem = _build_problem(cfg)
    if not cfg.power:
        raise InputError("impact-report needs a power file")
    pnet = load_power_file(cfg.power)
    lo, hi = problem.bounds
    strategies = {
        "optimal": "optimal",
        "lower_bound": lo,
        "mean": (lo + hi) / 2.0,
        "upper_bound": hi,
    }
    rows = impact_report(problem, pnet, strategies, config=_gdgsa_config(cfg),
                         epsilon=cfg.coupled_epsilon,
                         max_cycles=cfg.coupled_max_cycles)
    run.write_text("impact.csv", report_csv(rows))
    run.finish()


_COMMANDS = {
    "ue-solve": cmd_ue_solve,
    "sensitivity": cmd_sensitivity,
    "price-optimize": cmd_price_optimize,
    "coupled-run": cmd_coupled_run,
    "oracle-grid": cmd_oracle_grid,
    "fd-check": cmd_fd_check,
    "impact-report": cmd_impact_report,
}

_OVERRIDES: list[tuple[str, type, str]] = [
    ("net", str, "network file"),
    ("trips", str, "trips file"),
    ("fcs", str, "charging-station sidecar file"),
    ("power", str, "power network file"),
    ("out-dir", str, "output directory"),
    ("initial-prices", str, "'midpoint' or comma-separated prices"),
    ("latency", str, "latency family: bpr or linear"),
    ("k-paths", int, "road paths enumerated per OD pair"),
    ("charge-energy", float, "energy per charging stop"),
    ("time-value", float, "money per hour of travel time"),
    ("price-lower", float, "price box lower bound"),
    ("price-upper", float, "price box upper bound"),
    ("ue-tol", float, "equilibrium relative-gap tolerance"),
    ("alpha0", float, "basic stepsize"),
    ("k-max", int, "largest stepsize multiplier"),
    ("epsilon", float, "outer-loop profit tolerance"),
    ("max-outer", int, "outer iteration cap"),
    ("gamma", float, "direction-QP curvature weight"),
    ("grid-lower", str, "grid lower bounds, comma separated"),
    ("grid-upper", str, "grid upper bounds, comma separated"),
    ("grid-step", float, "grid step per price dimension"),
    ("grid-cap", int, "maximum grid points"),
    ("fd-delta", float, "finite-difference half step"),
    ("coupled-epsilon", float, "coupled-loop profit tolerance"),
    ("coupled-max-cycles", int, "coupled-loop cycle cap"),
    ("threads", int, "parallel workers (0 = all cores)"),
    ("seed", int, "random seed for multi-start work"),
]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evpricer",
        description="Charging-price optimization on coupled road and power networks")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--fixture", choices=["toy", "nguyen"],
                       help="use a packaged fixture instead of explicit files")
        for flag, kind, help_text in _OVERRIDES:
            p.add_argument(f"--{flag}", type=kind, help=help_text, default=None)
    return parser


def _fixture_config(name: str, cfg: RunConfig) -> None:
    from .fixtures import fixtures_dir, nguyen_params, toy_params
    d = fixtures_dir()
    if name == "toy":
        params = toy_params()
        cfg.net, cfg.trips, cfg.fcs = (str(d / "toy_net.txt"),
                                       str(d / "toy_trips.txt"),
                                       str(d / "toy_fcs.txt"))
        cfg.latency = "linear"
        cfg.k_paths = 2
    else:
        params = nguyen_params()
        cfg.net, cfg.trips, cfg.fcs = (str(d / "nguyen_net.txt"),
                                       str(d / "nguyen_trips.txt"),
                                       str(d / "nguyen_fcs.txt"))
        cfg.latency = "bpr"
        cfg.k_paths = 4
        cfg.power = str(d / "power4_net.txt")
    cfg.charge_energy = params.charge_energy
    cfg.time_value = params.time_value
    cfg.price_lower = params.price_lower
    cfg.price_upper = params.price_upper


def _assemble_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.fixture:
        _fixture_config(args.fixture, cfg)
    for flag, _, _ in _OVERRIDES:
        attr = flag.replace("-", "_")
        value = getattr(args, attr)
        if value is not None:
            if isinstance(value, str):
                value = expand_fixtures(value)
            setattr(cfg, attr, value)
    cfg.validate()
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _assemble_config(args)
        _COMMANDS[args.command](cfg)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
