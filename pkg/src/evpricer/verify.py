"""Brute-force oracles: price-grid enumeration, finite-difference gradients,
and the equilibrium optimality certificate.

These deliberately avoid the analytic machinery they check. Grid enumeration
re-solves the equilibrium at every price combination; the finite-difference
oracle re-solves at perturbed prices; the certificate only inspects a given
solution against the first-order optimality conditions.
"""
from __future__ import annotations

import itertools
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .pricing import profit
from .problem import PricingProblem
from .ue import UEModel, UESolution


@dataclass(frozen=True)
class GridSpec:
    lower: np.ndarray
    upper: np.ndarray
    step: np.ndarray    # one step per owned station
    cap: int = 1_000_000

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        step = np.atleast_1d(np.asarray(self.step, dtype=float))
        if len(step) == 1 and len(lower) > 1:
            step = np.full(len(lower), step[0])
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "step", step)
        if np.any(step <= 0):
            raise InputError("grid step must be positive")
        if np.any(upper < lower):
            raise InputError("grid upper bound below lower bound")

    def axes(self) -> list[np.ndarray]:
        out = []
        for lo, hi, st in zip(self.lower, self.upper, self.step):
            n = int(round((hi - lo) / st)) + 1
            axis = lo + st * np.arange(n)
            out.append(axis[axis <= hi + 1e-12])
        return out

    @property
    def n_points(self) -> int:
        return int(np.prod([len(a) for a in self.axes()]))


@dataclass
class GridResult:
    best_prices: np.ndarray
    best_profit: float
    table: np.ndarray        # rows: lambda_1..lambda_n, profit
    n_points: int

    def to_csv(self) -> str:
        n = self.table.shape[1] - 1
        header = ",".join(f"lambda_{i + 1}" for i in range(n)) + ",profit"
        lines = [header]
        for row in self.table:
            lines.append(",".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"


def _profit_at(args) -> float:
    problem, prices, elec_cost, tol = args
    sol = problem.solve(np.asarray(prices), tol=tol)
    return profit(np.asarray(prices), sol.charge_flows[problem.owned],
                  problem.params.charge_energy, elec_cost)


def grid_enumerate(problem: PricingProblem, grid: GridSpec,
                   elec_cost: np.ndarray | None = None,
                   ue_tol: float = 1e-8,
                   threads: int = 0) -> GridResult:
    """Solve the equilibrium at every grid point and return the profit argmax.

    Ties break toward the lexicographically smallest price vector. Points are
    independent solves over read-only data, so they fan out over processes;
    the output table is ordered by grid index either way.
    """
    if len(grid.lower) != problem.n_owned:
        raise InputError("grid dimensions must match the owned stations")
    axes = grid.axes()
    n_points = int(np.prod([len(a) for a in axes]))
    if n_points > grid.cap:
        raise InputError(f"grid too large: {n_points} points exceed cap {grid.cap}")
    lo, hi = problem.bounds
    if np.any(grid.lower < lo - 1e-12) or np.any(grid.upper > hi + 1e-12):
        raise InputError("grid exceeds the price bounds")
    points = list(itertools.product(*axes))
    jobs = [(problem, p, elec_cost, ue_tol) for p in points]
    if threads == 0:
        threads = os.cpu_count() or 1
    if threads > 1 and n_points > 16:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(_profit_at, jobs, chunksize=max(1, n_points // (8 * threads))))
    else:
        values = [_profit_at(j) for j in jobs]
    table = np.column_stack([np.array(points), np.array(values)])
    best = int(np.argmax(values))   # first maximum = lexicographically smallest
    return GridResult(np.array(points[best]), float(values[best]), table, n_points)


def fd_gradient(problem: PricingProblem, prices: np.ndarray,
                delta: float = 1e-3, ue_tol: float = 1e-10) -> np.ndarray:
    """Central differences of all station charging flows w.r.t. owned prices.

    Two equilibrium solves per owned price; requires prices +/- delta inside
    the bounds.
    """
    prices = np.asarray(prices, dtype=float)
    lo, hi = problem.bounds
    if np.any(prices - delta < lo) or np.any(prices + delta > hi):
        raise InputError("prices +/- delta leave the price box")
    grad = np.zeros((problem.n_stations, problem.n_owned))
    for k in range(problem.n_owned):
        up = prices.copy()
        up[k] += delta
        dn = prices.copy()
        dn[k] -= delta
        x_up = problem.solve(up, tol=ue_tol).charge_flows
        x_dn = problem.solve(dn, tol=ue_tol).charge_flows
        grad[:, k] = (x_up - x_dn) / (2.0 * delta)
    return grad


@dataclass
class Certificate:
    stationarity: float
    dual_feasibility: float      # most negative reduced cost (>= -1e-6 passes)
    complementarity: float
    demand_residual: float
    flow_negativity: float
    checks: dict[str, bool] = field(default_factory=dict)

    @property
    def all_pass(self) -> bool:
        return all(self.checks.values())

    def to_json(self) -> str:
        payload = {k: getattr(self, k) for k in
                   ("stationarity", "dual_feasibility", "complementarity",
                    "demand_residual", "flow_negativity")}
        payload["checks"] = {k: ("PASS" if v else "FAIL")
                             for k, v in self.checks.items()}
        payload["all_pass"] = self.all_pass
        return json.dumps(payload, sort_keys=True)


def certify_ue(sol: UESolution, model: UEModel,
               stat_tol: float = 1e-6, comp_tol: float = 1e-6,
               feas_tol: float = 1e-8) -> Certificate:
    """First-order optimality certificate for an equilibrium solution.

    Reduced costs pi = c - Lam' mu must be nonnegative, orthogonal to the
    flows, and consistent with the recomputed generalized-arc costs; demands
    must be met and flows nonnegative.
    """
    f = sol.path_flows
    x = model.garc_flows(f)
    c_re = model.delta.T @ model.garc_costs(x)
    mu = sol.od_min_costs[model.od_of_path]
    pi = sol.path_costs - mu
    stationarity = float(np.max(np.abs(c_re - pi - mu)))
    dual = float(np.min(pi, initial=0.0))
    comp_scale = max(np.linalg.norm(sol.path_costs) * np.linalg.norm(f), 1e-300)
    comp = float(abs(pi @ f)) / comp_scale
    lam = model.od_matrix()
    demand_residual = float(np.max(np.abs(lam @ f - model.demands)))
    flow_neg = float(np.min(f, initial=0.0))
    checks = {
        "stationarity": stationarity <= stat_tol,
        "dual_feasibility": dual >= -1e-6,
        "complementarity": comp <= comp_tol,
        "demand_feasibility": demand_residual <= feas_tol,
        "flow_nonnegativity": flow_neg >= -1e-12,
    }
    return Certificate(stationarity, dual, comp, demand_residual, flow_neg, checks)
