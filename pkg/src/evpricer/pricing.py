"""Gradient-driven price optimization for the charging provider.

Outer loop per iteration: solve the equilibrium, differentiate charging flows
with respect to owned prices, form the profit gradient, find a bounded ascent
direction through a norm-relaxed quadratic program, then grow the stepsize
multiplicatively while profit keeps strictly improving and prices stay inside
the box. Accepted iterates therefore have strictly increasing profit and
always respect the bounds.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InputError, NumericalError
from .problem import PricingProblem
from .qp import kkt_residual, solve_qp
from .sensitivity import charge_flow_gradient
from .ue import UESolution


@dataclass(frozen=True)
class GDGSAConfig:
    gamma: float = 2.0               # direction-QP curvature weight
    q_matrix: np.ndarray | None = None  # positive definite; identity when None
    alpha0: float = 1.0              # basic stepsize
    k_max: int = 50                  # largest stepsize multiplier tried
    epsilon: float = 1e-3            # stop when profit improvement <= epsilon
    max_outer: int = 200
    ue_tol: float = 1e-8
    cost_eps: float = 1e-4
    rank_tol: float = 1e-8
    reg_eps: float = 1e-6
    flow_eps: float = 1e-6

    def __post_init__(self):
        if self.gamma <= 0:
            raise InputError("gamma must be positive")
        if self.k_max < 1:
            raise InputError("k_max must be at least 1")
        if self.q_matrix is not None:
            q = np.asarray(self.q_matrix)
            if not np.allclose(q, q.T) or np.any(np.linalg.eigvalsh(q) <= 0):
                raise InputError("q_matrix must be symmetric positive definite")


@dataclass
class PriceIterate:
    iteration: int
    prices: np.ndarray
    profit: float
    direction: np.ndarray
    stepsize: float
    charge_flows_owned: np.ndarray
    direction_norm: float = 0.0
    set_sizes: dict[str, int] = field(default_factory=dict)
    wall_time: float = 0.0

    def to_json(self) -> str:
        return json.dumps({
            "iteration": self.iteration,
            "prices": self.prices.tolist(),
            "profit": self.profit,
            "direction": self.direction.tolist(),
            "stepsize": self.stepsize,
            "charge_flows_owned": self.charge_flows_owned.tolist(),
            "direction_norm": self.direction_norm,
            "set_sizes": self.set_sizes,
            "wall_time": self.wall_time,
        }, sort_keys=True)


@dataclass
class Trajectory:
    iterates: list[PriceIterate]
    termination: str   # converged | stationary | no_improving_step | iteration_cap
    final_solution: UESolution | None = None

    @property
    def final(self) -> PriceIterate:
        return self.iterates[-1]


def profit(prices: np.ndarray, charge_flows_owned: np.ndarray,
           charge_energy: float, elec_cost: np.ndarray | None = None) -> float:
    """Provider profit E * (prices - elec_cost) . flows over owned stations."""
    prices = np.asarray(prices, dtype=float)
    charge_flows_owned = np.asarray(charge_flows_owned, dtype=float)
    if prices.shape != charge_flows_owned.shape:
        raise InputError("price and flow vectors disagree in length")
    margin = prices if elec_cost is None else prices - np.asarray(elec_cost)
    return charge_energy * float(margin @ charge_flows_owned)


def profit_gradient(prices: np.ndarray, charge_flows_owned: np.ndarray,
                    flow_grad_owned: np.ndarray, charge_energy: float,
                    elec_cost: np.ndarray | None = None) -> np.ndarray:
    """d profit / d prices = E * (grad' margin + flows)."""
    margin = prices if elec_cost is None else prices - np.asarray(elec_cost)
    return charge_energy * (flow_grad_owned.T @ margin + charge_flows_owned)


def feasible_direction(prices: np.ndarray, grad: np.ndarray,
                       lower: np.ndarray, upper: np.ndarray,
                       gamma: float = 2.0,
                       q_matrix: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """Norm-relaxed ascent direction inside the price box.

    Maximizes z - (gamma/2) h'Qh subject to grad'h >= z and the box rows
    prices - upper + h + z <= 0, lower - prices - h + z <= 0. The zero
    direction with z = 0 is always feasible, so the program never fails;
    at an interior stationary point it returns exactly (0, 0).
    """
    n = len(prices)
    grad = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(grad)):
        raise InputError("profit gradient is not finite")
    q = np.eye(n) if q_matrix is None else np.asarray(q_matrix, dtype=float)
    # Variables u = [h, z]; minimize 0.5 u'Pu + c'u.
    P = np.zeros((n + 1, n + 1))
    P[:n, :n] = gamma * q
    c = np.zeros(n + 1)
    c[n] = -1.0
    rows = [np.concatenate([-grad, [1.0]])]
    rhs = [0.0]
    eye = np.eye(n)
    for i in range(n):
        rows.append(np.concatenate([eye[i], [1.0]]))
        rhs.append(float(upper[i] - prices[i]))
        rows.append(np.concatenate([-eye[i], [1.0]]))
        rhs.append(float(prices[i] - lower[i]))
    G = np.array(rows)
    d = np.array(rhs)
    u0 = np.zeros(n + 1)
    u, lam = solve_qp(P, c, G, d, u0)
    resid = kkt_residual(P, c, G, d, u, lam)
    if resid > 1e-8:
        raise NumericalError(f"direction QP residual {resid:.3e} above 1e-8")
    return u[:n], float(u[n])


@dataclass
class StepResult:
    alpha: float | None          # accepted stepsize, None when k=1 already fails
    profit: float | None
    solution: UESolution | None
    trials: int


def stepsize_search(prices: np.ndarray, direction: np.ndarray,
                    current_profit: float,
                    evaluate: Callable[[np.ndarray], tuple[float, UESolution]],
                    lower: np.ndarray, upper: np.ndarray,
                    alpha0: float, k_max: int) -> StepResult:
    """Trial-and-error stepsize: grow alpha = k*alpha0 while the trial point
    stays inside the box and strictly improves profit; return the last
    accepting alpha. Each trial re-solves the equilibrium via ``evaluate``.
    """
    if np.allclose(direction, 0.0):
        raise InputError("stepsize search needs a nonzero direction")
    best: StepResult = StepResult(None, None, None, 0)
    for k in range(1, k_max + 1):
        alpha = k * alpha0
        trial = prices + alpha * direction
        if np.any(trial < lower - 1e-12) or np.any(trial > upper + 1e-12):
            break
        value, sol = evaluate(np.clip(trial, lower, upper))
        best = StepResult(best.alpha, best.profit, best.solution, k)
        if value > current_profit:
            best = StepResult(alpha, value, sol, k)
        else:
            break
    return best


def gdgsa(problem: PricingProblem, initial_prices: np.ndarray | None = None,
          config: GDGSAConfig | None = None,
          elec_cost: np.ndarray | None = None,
          on_iterate: Callable[[PriceIterate], None] | None = None) -> Trajectory:
    """Run the full outer loop from the given start (box midpoint by default).

    Stops when the profit improvement drops to config.epsilon, the direction
    vanishes, no improving step exists even after halving the basic stepsize
    once, or the iteration cap is hit. The returned trajectory has strictly
    increasing profit across iterates.
    """
    cfg = config or GDGSAConfig()
    lower, upper = problem.bounds
    prices = problem.midpoint_prices() if initial_prices is None \
        else np.asarray(initial_prices, dtype=float).copy()
    if np.any(prices < lower) or np.any(prices > upper):
        raise InputError("initial prices violate the bounds")

    def evaluate(p: np.ndarray) -> tuple[float, UESolution]:
        sol = problem.solve(p, tol=cfg.ue_tol)
        owned_flows = sol.charge_flows[problem.owned]
        return profit(p, owned_flows, problem.params.charge_energy, elec_cost), sol

    t0 = time.perf_counter()
    value, sol = evaluate(prices)
    iterates: list[PriceIterate] = []
    termination = "iteration_cap"
    for it in range(1, cfg.max_outer + 1):
        try:
            sens = charge_flow_gradient(
                problem, sol, cost_eps=cfg.cost_eps, flow_eps=cfg.flow_eps,
                rank_tol=cfg.rank_tol, reg_eps=cfg.reg_eps)
        except NumericalError as exc:
            raise NumericalError(f"iteration {it}: {exc}") from exc
        owned_flows = sol.charge_flows[problem.owned]
        grad = profit_gradient(prices, owned_flows,
                               sens.grad[problem.owned],
                               problem.params.charge_energy, elec_cost)
        h, _ = feasible_direction(prices, grad, lower, upper,
                                  cfg.gamma, cfg.q_matrix)
        rec = PriceIterate(
            iteration=it, prices=prices.copy(), profit=value,
            direction=h.copy(), stepsize=0.0,
            charge_flows_owned=owned_flows.copy(),
            direction_norm=float(np.linalg.norm(h)),
            set_sizes=sens.set_sizes,
            wall_time=time.perf_counter() - t0,
        )
        if np.linalg.norm(h) <= 1e-10:
            iterates.append(rec)
            if on_iterate:
                on_iterate(rec)
            termination = "stationary"
            break
        step = stepsize_search(prices, h, value, evaluate, lower, upper,
                               cfg.alpha0, cfg.k_max)
        if step.alpha is None:
            # The basic stepsize may simply overshoot: halve once and retry.
            step = stepsize_search(prices, h, value, evaluate, lower, upper,
                                   cfg.alpha0 / 2.0, cfg.k_max)
        if step.alpha is None:
            iterates.append(rec)
            if on_iterate:
                on_iterate(rec)
            termination = "no_improving_step"
            break
        rec.stepsize = step.alpha
        iterates.append(rec)
        if on_iterate:
            on_iterate(rec)
        improvement = step.profit - value
        prices = np.clip(prices + step.alpha * h, lower, upper)
        value, sol = step.profit, step.solution
        if improvement <= cfg.epsilon:
            termination = "converged"
            break
    final = PriceIterate(
        iteration=len(iterates) + 1, prices=prices.copy(), profit=value,
        direction=np.zeros_like(prices), stepsize=0.0,
        charge_flows_owned=sol.charge_flows[problem.owned].copy(),
        wall_time=time.perf_counter() - t0,
    )
    iterates.append(final)
    if on_iterate:
        on_iterate(final)
    return Trajectory(iterates, termination, final_solution=sol)


@dataclass
class ProviderResult:
    owned_nodes: list[str]
    prices: np.ndarray
    profit: float
    trajectories: list[Trajectory]


def gauss_seidel_competition(problem: PricingProblem,
                             providers: list[list[str]],
                             config: GDGSAConfig | None = None,
                             max_cycles: int = 20,
                             price_tol: float = 1e-3) -> list[ProviderResult]:
    """Cyclic best-response between providers with disjoint station sets.

    Each provider optimizes its own prices holding everybody else fixed.
    Stops when the largest per-cycle price change drops to price_tol.
    Convergence is not guaranteed; hitting the cycle cap raises with the last
    iterate attached to the message.
    """
    cfg = config or GDGSAConfig()
    all_nodes = [n for p in providers for n in p]
    if len(set(all_nodes)) != len(all_nodes):
        raise InputError("providers must own disjoint station sets")
    node_index = {s.node: i for i, s in enumerate(problem.net.stations)}
    for nodes in providers:
        for n in nodes:
            if n not in node_index:
                raise InputError(f"{n!r} is not a charging station")

    current = problem.rival_prices.copy()
    results = [ProviderResult(nodes, current[[node_index[n] for n in nodes]].copy(),
                              0.0, []) for nodes in providers]
    for cycle in range(1, max_cycles + 1):
        previous = current.copy()
        for res in results:
            sub = problem.with_ownership(res.owned_nodes, fixed_prices=current)
            start = current[[node_index[n] for n in res.owned_nodes]]
            traj = gdgsa(sub, initial_prices=np.clip(start, *sub.bounds),
                         config=cfg)
            res.trajectories.append(traj)
            res.prices = traj.final.prices.copy()
            res.profit = traj.final.profit
            for n, p in zip(res.owned_nodes, res.prices):
                current[node_index[n]] = p
        if float(np.max(np.abs(current - previous))) <= price_tol:
            return results
    raise NumericalError(
        f"cycle cap reached after {max_cycles} cycles; last prices "
        f"{np.round(current, 6).tolist()}")
