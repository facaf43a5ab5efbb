"""Dense primal active-set solver for small convex quadratic programs.

Solves  minimize 0.5 x'Px + q'x  subject to  G x <= d  from a strictly
feasible-or-boundary start. P may be singular as long as every equality
working-set subproblem has a positive definite reduced Hessian, which holds
for the direction-finding program this module exists for (every constraint
row touches the linear variable). Problems here have a handful of variables,
so everything is dense and direct.
"""
from __future__ import annotations

import numpy as np

from .errors import NumericalError


def solve_qp(P: np.ndarray, q: np.ndarray, G: np.ndarray, d: np.ndarray,
             x0: np.ndarray, max_iter: int = 200,
             tol: float = 1e-11) -> tuple[np.ndarray, np.ndarray]:
    """Returns (x, multipliers) with multipliers >= 0 aligned to rows of G.

    x0 must satisfy G x0 <= d (+tiny slack). Raises NumericalError on the
    iteration cap.
    """
    n = len(q)
    m = len(d)
    x = np.asarray(x0, dtype=float).copy()
    resid = G @ x - d
    if np.any(resid > 1e-9):
        raise NumericalError("QP start point infeasible")
    working = resid > -1e-12
    for _ in range(max_iter):
        w_idx = np.nonzero(working)[0]
        gw = G[w_idx]
        grad = P @ x + q
        kkt = np.block([
            [P, gw.T],
            [gw, np.zeros((len(w_idx), len(w_idx)))],
        ])
        rhs = np.concatenate([-grad, np.zeros(len(w_idx))])
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        p_step = sol[:n]
        mults = sol[n:]
        if np.linalg.norm(p_step) <= tol * max(1.0, np.linalg.norm(x)):
            if len(w_idx) == 0 or np.all(mults >= -1e-9):
                lam = np.zeros(m)
                lam[w_idx] = np.maximum(mults, 0.0)
                return x, lam
            # Release the most negative multiplier and continue.
            working[w_idx[int(np.argmin(mults))]] = False
            continue
        # Step to the nearest blocking constraint outside the working set.
        gp = G @ p_step
        slack = d - G @ x
        blocking = (~working) & (gp > 1e-14)
        alpha = 1.0
        block_row = -1
        if np.any(blocking):
            ratios = slack[blocking] / gp[blocking]
            rows = np.nonzero(blocking)[0]
            k = int(np.argmin(ratios))
            if ratios[k] < alpha:
                alpha = max(float(ratios[k]), 0.0)
                block_row = int(rows[k])
        x = x + alpha * p_step
        if block_row >= 0:
            working[block_row] = True
    raise NumericalError("max QP iterations")


def kkt_residual(P: np.ndarray, q: np.ndarray, G: np.ndarray, d: np.ndarray,
                 x: np.ndarray, lam: np.ndarray) -> float:
    """Infinity-norm KKT residual (stationarity, feasibility, complementarity)."""
    stat = np.max(np.abs(P @ x + q + G.T @ lam)) if len(q) else 0.0
    feas = float(np.max(np.maximum(G @ x - d, 0.0))) if len(d) else 0.0
    comp = float(np.max(np.abs(lam * (G @ x - d)))) if len(d) else 0.0
    dual = float(np.max(np.maximum(-lam, 0.0))) if len(d) else 0.0
    return max(float(stat), feas, comp, dual)
