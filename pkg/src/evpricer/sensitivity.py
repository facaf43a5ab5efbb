"""Implicit-function sensitivity of equilibrium charging flows to prices.

Given a converged equilibrium, the response of the charging flows to the
provider's prices follows from differentiating the reduced KKT system of the
assignment program. The pipeline is:

1. classify paths: paths strictly costlier than their OD minimum carry no
   flow and are removed (the non-equilibrated set, NEP); the equilibrated
   remainder (EP) is kept;
2. restore invertibility: pick a maximal linearly independent subset of the
   EP columns of the stacked incidence-plus-OD matrix (the ELI set, leaving
   the dependent ELD set out); when the stack already has full column rank
   the selection is the identity and this step degenerates away;
3. assemble the bordered Jacobian [[D_path, -Lam^T], [Lam, 0]] with
   D_path = Delta1^T diag(dc/dx) Delta1 and the price Jacobian whose rows are
   the charging-stop indicators of owned stations scaled by charge energy;
4. solve the linear system and map path-flow derivatives back to station
   flows through the charge-path incidence.

Zero-flow generalized arcs make the latency derivative vanish, which would
break positive definiteness; the diagonal is floored at reg_eps to restore it
with negligible bias.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, NumericalError, SingularJacobianError
from .problem import PricingProblem
from .ue import UESolution

RCOND_FLOOR = 1e-14


@dataclass
class EquilibratedSets:
    """Path classification bookkeeping plus the restricted matrices."""

    ep: np.ndarray                 # equilibrated path indices
    nep: np.ndarray                # removed (strictly costlier) path indices
    eli: np.ndarray | None = None  # maximal independent subset of ep
    eld: np.ndarray | None = None  # ep minus eli
    delta_eli: np.ndarray | None = None    # generalized incidence, eli columns
    lam_eli: np.ndarray | None = None      # OD incidence, eli columns
    charge_eli: np.ndarray | None = None   # charge incidence, eli columns


@dataclass
class SensitivityResult:
    grad: np.ndarray        # (n_stations, n_owned) d charge_flow / d price
    path_grad: np.ndarray   # (n_eli, n_owned)
    mu_grad: np.ndarray     # (n_od, n_owned)
    eli_paths: np.ndarray
    rcond: float
    set_sizes: dict[str, int] = field(default_factory=dict)
    low_flow_paths: np.ndarray | None = None  # ELI paths with near-zero flow

    def to_json(self) -> str:
        payload = {
            "grad": self.grad.tolist(),
            "mu_grad": self.mu_grad.tolist(),
            "eli_paths": self.eli_paths.tolist(),
            "rcond": self.rcond,
            "set_sizes": self.set_sizes,
        }
        return json.dumps(payload, sort_keys=True)


def cost_jacobian_diag(sol: UESolution, problem: PricingProblem,
                       reg_eps: float = 1e-6) -> np.ndarray:
    """Diagonal of the generalized-arc cost Jacobian at the solution flows.

    Off-diagonal terms are identically zero because each latency depends only
    on its own flow. Entries are floored at reg_eps.
    """
    x = np.concatenate([sol.arc_flows, sol.charge_flows])
    diag = problem.params.time_value * problem.latency.derivative(x)
    return np.maximum(diag, reg_eps)


def classify_paths(sol: UESolution, od_of_path: np.ndarray,
                   cost_eps: float = 1e-4, flow_eps: float = 1e-6,
                   relative: bool = True) -> EquilibratedSets:
    """Split paths into equilibrated (EP) and non-equilibrated (NEP) sets.

    NEP paths cost strictly more than their OD minimum plus the tolerance
    (relative to the minimum by default). A NEP path carrying flow above
    flow_eps signals an unconverged equilibrium and raises.
    """
    mu = sol.od_min_costs[od_of_path]
    slack = cost_eps * mu if relative else np.full_like(mu, cost_eps)
    with np.errstate(invalid="ignore"):
        is_nep = sol.path_costs > mu + slack
    nep = np.nonzero(is_nep)[0]
    if np.any(sol.path_flows[nep] > flow_eps):
        bad = nep[sol.path_flows[nep] > flow_eps]
        raise NumericalError(
            f"NEP carries flow: paths {bad.tolist()} exceed flow_eps; "
            "the equilibrium is not converged tightly enough")
    return EquilibratedSets(ep=np.nonzero(~is_nep)[0], nep=nep)


def _greedy_independent(matrix: np.ndarray, rank_tol: float,
                        scan_order: np.ndarray) -> list[int]:
    # Incremental Gram-Schmidt with re-orthogonalization; the tolerance is
    # relative to the largest column norm (the largest possible pivot).
    scale = float(np.max(np.linalg.norm(matrix, axis=0))) if matrix.size else 0.0
    threshold = rank_tol * max(scale, 1.0)
    basis: list[np.ndarray] = []
    chosen: list[int] = []
    for pos in scan_order:
        v = matrix[:, pos].astype(float)
        r = v.copy()
        for q in basis:
            r -= q * (q @ r)
        for q in basis:
            r -= q * (q @ r)
        nrm = float(np.linalg.norm(r))
        if nrm > threshold:
            basis.append(r / nrm)
            chosen.append(int(pos))
    return chosen


def select_eli(es: EquilibratedSets, generalized: np.ndarray, od_path: np.ndarray,
               rank_tol: float = 1e-8,
               scan_order: np.ndarray | None = None) -> EquilibratedSets:
    """Fill the ELI/ELD split and the restricted matrices.

    Scans the EP columns of the stacked [incidence; OD] matrix in path-index
    order (or the given permutation of EP positions) and keeps a maximal
    linearly independent subset. Any maximal subset yields the same gradient.
    """
    stacked = np.vstack([generalized[:, es.ep], od_path[:, es.ep]])
    if scan_order is None:
        scan_order = np.arange(len(es.ep))
    else:
        scan_order = np.asarray(scan_order, dtype=int)
        if sorted(scan_order.tolist()) != list(range(len(es.ep))):
            raise InputError("scan_order must be a permutation of EP positions")
    chosen = _greedy_independent(stacked, rank_tol, scan_order)
    eli_mask = np.zeros(len(es.ep), dtype=bool)
    eli_mask[chosen] = True
    es.eli = es.ep[eli_mask]
    es.eld = es.ep[~eli_mask]
    es.delta_eli = generalized[:, es.eli]
    es.lam_eli = od_path[:, es.eli]
    missing = np.nonzero(es.lam_eli.sum(axis=1) == 0)[0]
    if len(missing):
        raise NumericalError(f"OD pairs {missing.tolist()} retain no ELI path")
    return es


def assemble_jacobians(es: EquilibratedSets, diag: np.ndarray,
                       owned: np.ndarray, n_stations: int,
                       charge_energy: float,
                       charge_path: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bordered KKT Jacobian and the price-disturbance Jacobian.

    The price derivative of station costs is charge_energy on (station, price)
    pairs of the owned selector and zero elsewhere: rival prices are constants.
    """
    if es.eli is None:
        raise InputError("select_eli must run before assembling Jacobians")
    es.charge_eli = charge_path[:, es.eli]
    d1 = es.delta_eli
    lam1 = es.lam_eli
    n_od = lam1.shape[0]
    top_left = d1.T @ (diag[:, None] * d1)
    jac = np.block([
        [top_left, -lam1.T],
        [lam1, np.zeros((n_od, n_od))],
    ])
    dc_dprice = np.zeros((n_stations, len(owned)))
    for k, m in enumerate(owned):
        dc_dprice[m, k] = charge_energy
    j_price = np.vstack([
        es.charge_eli.T @ dc_dprice,
        np.zeros((n_od, len(owned))),
    ])
    return jac, j_price


def gradient(es: EquilibratedSets, jac: np.ndarray,
             j_price: np.ndarray) -> SensitivityResult:
    """Solve the implicit-function system and map to station-flow space."""
    n_eli = len(es.eli)
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(jac)
    rcond = 1.0 / cond if np.isfinite(cond) and cond > 0 else 0.0
    if not np.isfinite(cond) or rcond < RCOND_FLOOR:
        raise SingularJacobianError(
            f"singular KKT Jacobian (reciprocal condition {rcond:.3e}); "
            "check rank_tol or degenerate path structure", rcond=rcond)
    sol = np.linalg.solve(jac, -j_price)
    path_grad = sol[:n_eli]
    mu_grad = sol[n_eli:]
    grad = es.charge_eli @ path_grad
    return SensitivityResult(
        grad=grad,
        path_grad=path_grad,
        mu_grad=mu_grad,
        eli_paths=es.eli.copy(),
        rcond=float(rcond),
        set_sizes={
            "ep": int(len(es.ep)), "nep": int(len(es.nep)),
            "eli": int(len(es.eli)), "eld": int(len(es.eld)),
        },
    )


def charge_flow_gradient(problem: PricingProblem, sol: UESolution,
                         cost_eps: float = 1e-4, flow_eps: float = 1e-6,
                         rank_tol: float = 1e-8, reg_eps: float = 1e-6,
                         scan_order: np.ndarray | None = None) -> SensitivityResult:
    """Full pipeline: classify, select, assemble, solve.

    Returns the gradient for all stations (owned and rival rows); callers
    slice the owned rows for profit work. Handles mixed EV/GV path sets
    uniformly: GV paths simply have all-zero charging rows.
    """
    ps = problem.ps
    es = classify_paths(sol, ps.od_of_path, cost_eps=cost_eps, flow_eps=flow_eps)
    select_eli(es, ps.generalized, ps.od_path, rank_tol=rank_tol,
               scan_order=scan_order)
    diag = cost_jacobian_diag(sol, problem, reg_eps=reg_eps)
    jac, j_price = assemble_jacobians(es, diag, problem.owned,
                                      problem.n_stations,
                                      problem.params.charge_energy,
                                      ps.charge_path)
    result = gradient(es, jac, j_price)
    low = es.eli[sol.path_flows[es.eli] < flow_eps]
    result.low_flow_paths = low
    return result


def gradient_mixed(es_ev: EquilibratedSets, es_gv: EquilibratedSets,
                   diag: np.ndarray, owned: np.ndarray, n_stations: int,
                   charge_energy: float, charge_path: np.ndarray,
                   n_od_ev: int, n_od_gv: int) -> SensitivityResult:
    """Two-class bordered system with explicit EV/GV blocks.

    Cross blocks couple the classes through shared road arcs only (GV columns
    carry no hyper-arc rows). With an empty GV class this reduces exactly to
    the single-class gradient. Per-class ELI selections can still be jointly
    dependent through shared arcs, so the combined stack is re-checked and
    thinned before solving.
    """
    for es, name in ((es_ev, "EV"), (es_gv, "GV")):
        if es.eli is None and len(es.ep):
            raise InputError(f"select_eli must run on the {name} sets first")
    d_ev = es_ev.delta_eli if es_ev.delta_eli is not None else np.zeros((len(diag), 0))
    d_gv = es_gv.delta_eli if es_gv.delta_eli is not None else np.zeros((len(diag), 0))
    lam_ev = es_ev.lam_eli if es_ev.lam_eli is not None else np.zeros((n_od_ev, 0))
    lam_gv = es_gv.lam_eli if es_gv.lam_eli is not None else np.zeros((n_od_gv, 0))
    n_ev, n_gv = d_ev.shape[1], d_gv.shape[1]

    combined = np.vstack([
        np.hstack([d_ev, d_gv]),
        np.hstack([lam_ev, np.zeros((n_od_ev, n_gv))]),
        np.hstack([np.zeros((n_od_gv, n_ev)), lam_gv]),
    ])
    keep = _greedy_independent(combined, 1e-8, np.arange(n_ev + n_gv))
    if len(keep) < n_ev + n_gv:
        keep_ev = [i for i in keep if i < n_ev]
        keep_gv = [i - n_ev for i in keep if i >= n_ev]
        d_ev, lam_ev = d_ev[:, keep_ev], lam_ev[:, keep_ev]
        d_gv, lam_gv = d_gv[:, keep_gv], lam_gv[:, keep_gv]
        es_ev.eli = es_ev.eli[keep_ev]
        es_gv.eli = es_gv.eli[keep_gv] if es_gv.eli is not None else es_gv.eli
        n_ev, n_gv = len(keep_ev), len(keep_gv)

    w = diag[:, None]
    a_ee = d_ev.T @ (w * d_ev)
    a_eg = d_ev.T @ (w * d_gv)
    a_ge = d_gv.T @ (w * d_ev)
    a_gg = d_gv.T @ (w * d_gv)
    z = np.zeros
    jac = np.block([
        [a_ee, a_eg, -lam_ev.T, z((n_ev, n_od_gv))],
        [a_ge, a_gg, z((n_gv, n_od_ev)), -lam_gv.T],
        [lam_ev, z((n_od_ev, n_gv + n_od_ev + n_od_gv))],
        [z((n_od_gv, n_ev)), lam_gv, z((n_od_gv, n_od_ev + n_od_gv))],
    ])
    charge_ev = charge_path[:, es_ev.eli] if n_ev else np.zeros((n_stations, 0))
    dc_dprice = np.zeros((n_stations, len(owned)))
    for k, m in enumerate(owned):
        dc_dprice[m, k] = charge_energy
    j_price = np.vstack([
        charge_ev.T @ dc_dprice,
        np.zeros((n_gv + n_od_ev + n_od_gv, len(owned))),
    ])
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(jac)
    rcond = 1.0 / cond if np.isfinite(cond) and cond > 0 else 0.0
    if not np.isfinite(cond) or rcond < RCOND_FLOOR:
        raise SingularJacobianError(
            f"singular mixed KKT Jacobian (reciprocal condition {rcond:.3e})",
            rcond=rcond)
    sol = np.linalg.solve(jac, -j_price)
    path_grad_ev = sol[:n_ev]
    mu_grad = sol[n_ev + n_gv:n_ev + n_gv + n_od_ev]
    grad = charge_ev @ path_grad_ev
    return SensitivityResult(
        grad=grad,
        path_grad=path_grad_ev,
        mu_grad=mu_grad,
        eli_paths=es_ev.eli.copy() if es_ev.eli is not None else np.array([], dtype=int),
        rcond=float(rcond),
        set_sizes={
            "eli_ev": int(n_ev), "eli_gv": int(n_gv),
            "ep_ev": int(len(es_ev.ep)), "ep_gv": int(len(es_gv.ep)),
        },
    )


def charge_flow_gradient_mixed(problem: PricingProblem, sol: UESolution,
                               cost_eps: float = 1e-4, flow_eps: float = 1e-6,
                               rank_tol: float = 1e-8,
                               reg_eps: float = 1e-6) -> SensitivityResult:
    """Class-blocked variant of charge_flow_gradient (same answer, explicit
    EV/GV block assembly)."""
    ps = problem.ps
    classes = np.array([p.vehicle_class for p in problem.demand.pairs])
    od_ev = np.nonzero(classes == "EV")[0]
    od_gv = np.nonzero(classes == "GV")[0]
    path_is_ev = np.isin(ps.od_of_path, od_ev)

    es_all = classify_paths(sol, ps.od_of_path, cost_eps=cost_eps,
                            flow_eps=flow_eps)

    def class_sets(mask_ep: np.ndarray, od_ids: np.ndarray) -> EquilibratedSets:
        ep = es_all.ep[mask_ep]
        es = EquilibratedSets(ep=ep, nep=np.array([], dtype=int))
        if len(ep) == 0:
            es.eli = np.array([], dtype=int)
            es.eld = np.array([], dtype=int)
            es.delta_eli = np.zeros((ps.generalized.shape[0], 0))
            es.lam_eli = np.zeros((len(od_ids), 0))
            return es
        # Class-local OD rows so the per-class stack is well-posed.
        local_od = ps.od_path[np.ix_(od_ids, np.arange(ps.n_paths))]
        select_eli(es, ps.generalized, local_od, rank_tol=rank_tol)
        return es

    es_ev = class_sets(path_is_ev[es_all.ep], od_ev)
    es_gv = class_sets(~path_is_ev[es_all.ep], od_gv)
    diag = cost_jacobian_diag(sol, problem, reg_eps=reg_eps)
    return gradient_mixed(es_ev, es_gv, diag, problem.owned,
                          problem.n_stations, problem.params.charge_energy,
                          ps.charge_path, len(od_ev), len(od_gv))
