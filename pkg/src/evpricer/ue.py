"""Path-based user-equilibrium assignment.

Solves the convex equilibrium program over a fixed path set: minimize the sum
of latency antiderivatives (in money, via the time-value coefficient) plus the
linear charging-money term, subject to per-OD demand conservation and
non-negative path flows. The minimizer's aggregated arc and charging flows are
the Wardrop equilibrium.

The solver is a two-phase method chosen so that downstream sensitivity and
finite-difference work gets near machine-precision equilibria:

1. projected gradient on the per-OD scaled simplices with a Barzilai-Borwein
   step and a monotone Armijo backtracking line search;
2. an active-set Newton polish that repeatedly solves the equality-constrained
   KKT system on the currently used paths, dropping paths that hit zero and
   pricing in strictly cheaper unused paths.

Both phases only ever accept steps that decrease the objective, so the
objective trace is non-increasing by construction. All tie-breaking is by
lowest index, making solves deterministic for identical inputs.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, UEConvergenceError
from .latency import LatencyVector


@dataclass(frozen=True)
class UEModel:
    """Everything a single equilibrium solve needs, prices already folded in.

    ``money`` is the per-generalized-arc additive money cost: zero on road
    arcs, charge_energy * price on station hyper-arcs.
    """

    delta: np.ndarray        # (n_garc, n_path) generalized incidence
    od_of_path: np.ndarray   # (n_path,) OD index of each path
    demands: np.ndarray      # (n_od,)
    latency: LatencyVector   # per generalized arc
    omega: float             # money per hour
    money: np.ndarray        # (n_garc,)
    n_arcs: int              # leading rows of delta that are road arcs

    @property
    def n_paths(self) -> int:
        return self.delta.shape[1]

    @property
    def n_od(self) -> int:
        return len(self.demands)

    def garc_flows(self, f: np.ndarray) -> np.ndarray:
        return self.delta @ f

    def garc_costs(self, x: np.ndarray) -> np.ndarray:
        return self.omega * self.latency.time(x) + self.money

    def garc_cost_slopes(self, x: np.ndarray) -> np.ndarray:
        return self.omega * self.latency.derivative(x)

    def path_costs(self, f: np.ndarray) -> np.ndarray:
        return self.delta.T @ self.garc_costs(self.garc_flows(f))

    def objective(self, f: np.ndarray) -> float:
        x = self.garc_flows(f)
        return float(np.sum(self.omega * self.latency.integral(x) + self.money * x))

    def od_matrix(self) -> np.ndarray:
        lam = np.zeros((self.n_od, self.n_paths))
        lam[self.od_of_path, np.arange(self.n_paths)] = 1.0
        return lam


@dataclass
class UESolution:
    path_flows: np.ndarray
    arc_flows: np.ndarray
    charge_flows: np.ndarray
    path_costs: np.ndarray
    od_min_costs: np.ndarray
    beckmann_value: float
    rel_gap: float
    iterations: int
    converged: bool
    objective_trace: list[float] = field(default_factory=list, repr=False)

    def to_json(self) -> str:
        payload = {
            "path_flows": self.path_flows.tolist(),
            "arc_flows": self.arc_flows.tolist(),
            "charge_flows": self.charge_flows.tolist(),
            "path_costs": self.path_costs.tolist(),
            "od_min_costs": self.od_min_costs.tolist(),
            "beckmann_value": self.beckmann_value,
            "rel_gap": self.rel_gap,
            "iterations": self.iterations,
            "converged": self.converged,
        }
        return json.dumps(payload, sort_keys=True)


def beckmann_objective(model: UEModel, f: np.ndarray) -> float:
    """Equilibrium potential at path flows f (closed-form antiderivatives)."""
    return model.objective(np.asarray(f, dtype=float))


def od_min_costs(model: UEModel, c: np.ndarray) -> np.ndarray:
    mu = np.full(model.n_od, np.inf)
    np.minimum.at(mu, model.od_of_path, c)
    return mu


def relative_gap(model: UEModel, f: np.ndarray, c: np.ndarray) -> float:
    """Normalized duality gap (c.f - D.mu) / (c.f); zero exactly at equilibrium."""
    total = float(c @ f)
    mu = od_min_costs(model, c)
    gap = total - float(model.demands @ mu)
    return gap / max(abs(total), 1e-300)


def project_simplex(y: np.ndarray, total: float) -> np.ndarray:
    """Euclidean projection onto {f >= 0, sum f = total}."""
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - total
    idx = np.arange(1, len(y) + 1)
    cond = u - css / idx > 0
    rho = np.nonzero(cond)[0][-1]
    tau = css[rho] / (rho + 1.0)
    return np.maximum(y - tau, 0.0)


def _project_per_od(model: UEModel, y: np.ndarray, od_groups: list[np.ndarray]) -> np.ndarray:
    out = np.empty_like(y)
    for w, idx in enumerate(od_groups):
        out[idx] = project_simplex(y[idx], model.demands[w])
    return out


def initial_flows(model: UEModel, init: str | np.ndarray = "min_cost",
                  rng: np.random.Generator | None = None) -> np.ndarray:
    """Deterministic all-on-cheapest-path start, or a random feasible point."""
    if isinstance(init, np.ndarray):
        f = np.asarray(init, dtype=float).copy()
        if f.shape != (model.n_paths,):
            raise InputError("initial flow vector has wrong length")
        return f
    f = np.zeros(model.n_paths)
    if init == "min_cost":
        c0 = model.path_costs(f)
        for w in range(model.n_od):
            idx = np.nonzero(model.od_of_path == w)[0]
            f[idx[np.argmin(c0[idx])]] = model.demands[w]
        return f
    if init == "random":
        if rng is None:
            rng = np.random.default_rng(0)
        for w in range(model.n_od):
            idx = np.nonzero(model.od_of_path == w)[0]
            f[idx] = rng.dirichlet(np.ones(len(idx))) * model.demands[w]
        return f
    raise InputError(f"unknown init {init!r}")


def _pg_phase(model: UEModel, f: np.ndarray, od_groups: list[np.ndarray],
              gap_target: float, max_iters: int,
              trace: list[float]) -> tuple[np.ndarray, float, int]:
    sigma = 1e-4
    step = 1.0
    F = model.objective(f)
    c = model.path_costs(f)
    gap = relative_gap(model, f, c)
    it = 0
    while gap > gap_target and it < max_iters:
        it += 1
        d = _project_per_od(model, f - step * c, od_groups) - f
        slope = float(c @ d)
        if slope > -1e-16:
            # Step too long to generate descent at this scale; shrink and retry.
            step *= 0.5
            if step < 1e-14:
                break
            continue
        tau = 1.0
        for _ in range(60):
            f_try = f + tau * d
            F_try = model.objective(f_try)
            if F_try <= F + sigma * tau * slope:
                break
            tau *= 0.5
        else:
            break
        c_new = model.path_costs(f_try)
        df = f_try - f
        dg = c_new - c
        denom = float(df @ dg)
        if denom > 1e-300:
            step = min(max(float(df @ df) / denom, 1e-10), 1e10)
        f, F, c = f_try, F_try, c_new
        trace.append(F)
        gap = relative_gap(model, f, c)
    return f, gap, it


def _newton_phase(model: UEModel, f: np.ndarray, od_groups: list[np.ndarray],
                  gap_target: float, max_iters: int,
                  trace: list[float]) -> tuple[np.ndarray, float, int, bool]:
    """Active-set Newton polish; returns (f, gap, iters, stalled)."""
    sigma = 1e-4
    ridge = 1e-12
    n = model.n_paths
    active = f > 0.0
    F = model.objective(f)
    it = 0
    stalled = False
    while it < max_iters:
        it += 1
        c = model.path_costs(f)
        gap = relative_gap(model, f, c)
        if gap <= gap_target:
            return f, gap, it, False
        mu = od_min_costs(model, c)
        # Price in strictly cheaper unused paths so the working set can only
        # improve; lowest index first for determinism.
        for w, idx in enumerate(od_groups):
            inactive = idx[~active[idx]]
            if len(inactive) and np.min(c[inactive]) < mu[w] - 1e-14:
                active[inactive[np.argmin(c[inactive])]] = True
            if not np.any(active[idx]):
                active[idx[np.argmin(c[idx])]] = True
        ia = np.nonzero(active)[0]
        x = model.garc_flows(f)
        slopes = model.garc_cost_slopes(x)
        da = model.delta[:, ia]
        H = da.T @ (slopes[:, None] * da) + ridge * np.eye(len(ia))
        lam = np.zeros((model.n_od, len(ia)))
        lam[model.od_of_path[ia], np.arange(len(ia))] = 1.0
        kkt = np.block([[H, lam.T], [lam, np.zeros((model.n_od, model.n_od))]])
        rhs = np.concatenate([-c[ia], model.demands - lam @ f[ia]])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            kkt[:len(ia), :len(ia)] += 1e-8 * np.eye(len(ia))
            sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        delta_f = sol[:len(ia)]
        slope = float(c[ia] @ delta_f)
        neg = delta_f < -1e-300
        tau_max = float(np.min(f[ia][neg] / -delta_f[neg])) if np.any(neg) else np.inf
        if tau_max <= 1e-14:
            # A zero-flow active path is pushed negative: retire it and retry.
            blocked = ia[neg & (f[ia] <= 1e-14)]
            if len(blocked) == 0:
                stalled = True
                break
            active[blocked] = False
            continue
        if slope > -1e-18:
            stalled = True
            break
        tau = min(1.0, tau_max)
        accepted = False
        for _ in range(60):
            f_try = f.copy()
            f_try[ia] = np.maximum(f[ia] + tau * delta_f, 0.0)
            F_try = model.objective(f_try)
            if F_try <= F + sigma * tau * slope:
                accepted = True
                break
            tau *= 0.5
        if not accepted:
            stalled = True
            break
        f, F = f_try, F_try
        trace.append(F)
        hit_zero = ia[f[ia] <= 1e-15]
        if len(hit_zero):
            f[hit_zero] = 0.0
            active[hit_zero] = False
    c = model.path_costs(f)
    return f, relative_gap(model, f, c), it, stalled


def solve_ue(model: UEModel, tol: float = 1e-8, max_iter: int = 5000,
             init: str | np.ndarray = "min_cost",
             rng: np.random.Generator | None = None) -> UESolution:
    """Solve the equilibrium program to the requested relative duality gap.

    Raises UEConvergenceError (carrying the best iterate) only if the
    alternating projected-gradient / Newton schedule exhausts max_iter without
    reaching tol.
    """
    if tol <= 0:
        raise InputError("tol must be positive")
    od_groups = [np.nonzero(model.od_of_path == w)[0] for w in range(model.n_od)]
    for w, idx in enumerate(od_groups):
        if len(idx) == 0:
            raise InputError(f"OD pair {w} has no candidate path")
    f = initial_flows(model, init, rng)
    trace = [model.objective(f)]
    total_it = 0
    gap = np.inf
    for _ in range(8):
        f, gap, it = _pg_phase(model, f, od_groups, max(tol, 1e-5),
                               min(400, max_iter - total_it), trace)
        total_it += it
        if gap <= tol:
            break
        f, gap, it, stalled = _newton_phase(model, f, od_groups, tol,
                                            min(200, max_iter - total_it), trace)
        total_it += it
        if gap <= tol or total_it >= max_iter:
            break
        if stalled:
            # Shake loose with more first-order progress before re-polishing.
            f, gap, it = _pg_phase(model, f, od_groups, max(tol, gap / 10),
                                   min(400, max_iter - total_it), trace)
            total_it += it
            if gap <= tol:
                break
    sol = _finalize(model, f, gap, total_it, gap <= tol, trace)
    if not sol.converged:
        raise UEConvergenceError(
            f"max iterations exceeded: gap {gap:.3e} above tol {tol:.3e}", sol)
    return sol


def _finalize(model: UEModel, f: np.ndarray, gap: float, iters: int,
              converged: bool, trace: list[float]) -> UESolution:
    f = np.maximum(f, 0.0)
    x = model.garc_flows(f)
    c = model.delta.T @ model.garc_costs(x)
    return UESolution(
        path_flows=f,
        arc_flows=x[:model.n_arcs],
        charge_flows=x[model.n_arcs:],
        path_costs=c,
        od_min_costs=od_min_costs(model, c),
        beckmann_value=model.objective(f),
        rel_gap=gap,
        iterations=iters,
        converged=converged,
        objective_trace=trace,
    )


def wardrop_residual(sol: UESolution, model: UEModel,
                     flow_eps: float = 1e-6) -> tuple[float, float]:
    """Diagnostics: (max over-cost among used paths, max demand violation)."""
    c = sol.path_costs
    mu = sol.od_min_costs[model.od_of_path]
    used = sol.path_flows > flow_eps
    over = float(np.max(c[used] - mu[used])) if np.any(used) else 0.0
    lam = model.od_matrix()
    dem_violation = float(np.max(np.abs(lam @ sol.path_flows - model.demands)))
    return over, dem_violation
