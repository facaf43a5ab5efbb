"""Radial distribution OPF with marginal-price extraction, plus the coupling
loop between the charging provider and the grid.

The branch-flow model on a tree: per-line active/reactive flows, squared
voltages and squared currents, quadratic generation costs on generator buses,
a linear-cost slack injection at the root. The quadratic power-current
relation is relaxed to the rotated-cone inequality p^2 + q^2 <= U_i * I; loss
minimization keeps it tight on the fixtures this package ships.

The solver is a log-barrier interior-point method with infeasible-start
Newton centering, specialized to this structure. Duals come out of the
centering multipliers: the locational marginal price at a bus is the
(negated) scaled multiplier of its active-power balance row, i.e. the cost of
serving one more unit of load there.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError, NumericalError, ParseError
from .network import TransportNetwork
from .pricing import GDGSAConfig, Trajectory, gdgsa, profit
from .problem import PricingProblem
from .ue import UESolution


@dataclass(frozen=True)
class Bus:
    id: str
    pd: float
    qd: float
    u_min: float
    u_max: float


@dataclass(frozen=True)
class PowerLine:
    tail: str   # parent (closer to slack) after orientation
    head: str
    r: float
    x: float
    i_min: float
    i_max: float

    @property
    def z2(self) -> float:
        return self.r**2 + self.x**2


@dataclass(frozen=True)
class Generator:
    bus: str
    c2: float
    c1: float


@dataclass
class PowerNetwork:
    buses: list[Bus]
    lines: list[PowerLine]
    generators: list[Generator]
    slack_bus: str
    slack_cost: float
    fcs_bus: dict[str, str]   # station node id -> bus id

    def __post_init__(self) -> None:
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise InputError("duplicate bus ids")
        if self.slack_bus not in ids:
            raise InputError(f"slack bus {self.slack_bus!r} not declared")
        for ln in self.lines:
            if ln.tail not in ids or ln.head not in ids:
                raise InputError(f"unknown bus on line {ln.tail}-{ln.head}")
            if ln.r <= 0 or ln.x <= 0:
                raise InputError(f"non-positive impedance on line {ln.tail}-{ln.head}")
        for g in self.generators:
            if g.bus not in ids:
                raise InputError(f"unknown generator bus {g.bus!r}")
            if g.bus == self.slack_bus:
                raise InputError("slack bus cannot also carry a quadratic generator")
        for b in self.buses:
            if not b.u_min < b.u_max:
                raise InputError(f"bad voltage bounds on bus {b.id}")
        for fcs, bus in self.fcs_bus.items():
            if bus not in ids:
                raise InputError(f"fcsmap sends {fcs!r} to unknown bus {bus!r}")
        self.lines = _orient_tree(self.buses, self.lines, self.slack_bus)

    def bus_index(self) -> dict[str, int]:
        return {b.id: i for i, b in enumerate(self.buses)}


def _orient_tree(buses: list[Bus], lines: list[PowerLine],
                 slack: str) -> list[PowerLine]:
    """BFS from the slack; flip lines stored child->parent; reject non-trees."""
    if len(lines) != len(buses) - 1:
        raise InputError("line count must be bus count minus one (radial network)")
    adj: dict[str, list[int]] = {b.id: [] for b in buses}
    for k, ln in enumerate(lines):
        adj[ln.tail].append(k)
        adj[ln.head].append(k)
    oriented: dict[int, PowerLine] = {}
    seen = {slack}
    frontier = [slack]
    while frontier:
        node = frontier.pop(0)
        for k in adj[node]:
            if k in oriented:
                continue
            ln = lines[k]
            other = ln.head if ln.tail == node else ln.tail
            if other in seen:
                raise InputError("power network contains a cycle")
            oriented[k] = ln if ln.tail == node else \
                PowerLine(node, other, ln.r, ln.x, ln.i_min, ln.i_max)
            seen.add(other)
            frontier.append(other)
    if len(seen) != len(buses):
        missing = sorted(set(b.id for b in buses) - seen)
        raise InputError(f"buses not reachable from slack: {missing}")
    return [oriented[k] for k in range(len(lines))]


def load_power_file(power_file: str | Path) -> PowerNetwork:
    """Parse tagged records: bus, line, gen, slack, fcsmap (see README)."""
    path = Path(power_file)
    if not path.exists():
        raise InputError(f"power file not found: {path}")
    buses: list[Bus] = []
    lines: list[PowerLine] = []
    gens: list[Generator] = []
    slack: tuple[str, float] | None = None
    fcs_bus: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        stripped = raw.split("#", 1)[0].strip()
        if not stripped:
            continue
        toks = stripped.split()
        tag = toks[0].lower()
        try:
            if tag == "bus" and len(toks) == 6:
                buses.append(Bus(toks[1], float(toks[2]), float(toks[3]),
                                 float(toks[4]), float(toks[5])))
            elif tag == "line" and len(toks) == 7:
                lines.append(PowerLine(toks[1], toks[2], float(toks[3]),
                                       float(toks[4]), float(toks[5]),
                                       float(toks[6])))
            elif tag == "gen" and len(toks) == 4:
                gens.append(Generator(toks[1], float(toks[2]), float(toks[3])))
            elif tag == "slack" and len(toks) == 3:
                slack = (toks[1], float(toks[2]))
            elif tag == "fcsmap" and len(toks) == 3:
                fcs_bus[toks[1]] = toks[2]
            else:
                raise ParseError(path, lineno, f"unrecognized record {stripped!r}")
        except ValueError:
            raise ParseError(path, lineno, f"bad numeric field in {stripped!r}") from None
    if slack is None:
        raise InputError(f"no slack record in {path}")
    return PowerNetwork(buses, lines, gens, slack[0], slack[1], fcs_bus)


def charging_load(charge_flows: np.ndarray, charge_energy: float,
                  net: TransportNetwork, pnet: PowerNetwork) -> np.ndarray:
    """Per-bus charging power E * x / t0, stations aggregated by bus."""
    idx = pnet.bus_index()
    load = np.zeros(len(pnet.buses))
    for m, station in enumerate(net.stations):
        if station.node not in pnet.fcs_bus:
            raise InputError(f"unmapped FCS {station.node!r}: no fcsmap record")
        b = idx[pnet.fcs_bus[station.node]]
        load[b] += charge_energy * float(charge_flows[m]) / station.free_charge_time
    return load


@dataclass
class OPFSolution:
    pg: dict[str, float]
    qg: dict[str, float]
    p_flow: np.ndarray
    q_flow: np.ndarray
    current: np.ndarray
    u: np.ndarray
    objective: float
    lmp: dict[str, float]
    cone_slack: np.ndarray
    balance_residual: float
    duality_gap: float
    tight: bool
    loss: float = 0.0   # total ohmic loss, sum of r * current over lines
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "pg": self.pg, "qg": self.qg,
            "p_flow": self.p_flow.tolist(), "q_flow": self.q_flow.tolist(),
            "current": self.current.tolist(), "u": self.u.tolist(),
            "objective": self.objective, "lmp": self.lmp,
            "cone_slack_max": float(np.max(self.cone_slack)),
            "balance_residual": self.balance_residual,
            "duality_gap": self.duality_gap, "tight": self.tight,
            "loss": self.loss, "warnings": self.warnings,
        }, sort_keys=True)


class _OPFLayout:
    """Variable bookkeeping: [pg | qg | pL | qL | U | I]."""

    def __init__(self, pnet: PowerNetwork):
        self.pnet = pnet
        self.bus_of = pnet.bus_index()
        self.gen_buses = [pnet.slack_bus] + [g.bus for g in pnet.generators]
        self.c2 = np.array([0.0] + [g.c2 for g in pnet.generators])
        self.c1 = np.array([pnet.slack_cost] + [g.c1 for g in pnet.generators])
        ng, nl, nb = len(self.gen_buses), len(pnet.lines), len(pnet.buses)
        self.ng, self.nl, self.nb = ng, nl, nb
        self.pg = np.arange(ng)
        self.qg = ng + np.arange(ng)
        self.pl = 2 * ng + np.arange(nl)
        self.ql = 2 * ng + nl + np.arange(nl)
        self.u = 2 * ng + 2 * nl + np.arange(nb)
        self.i = 2 * ng + 2 * nl + nb + np.arange(nl)
        self.size = 2 * ng + 3 * nl + nb
        self.parent = np.array([self.bus_of[ln.tail] for ln in pnet.lines])
        self.child = np.array([self.bus_of[ln.head] for ln in pnet.lines])


def _build_equalities(lay: _OPFLayout, p_fcs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pnet = lay.pnet
    nb, nl = lay.nb, lay.nl
    rows = 2 * nb + nl
    A = np.zeros((rows, lay.size))
    b = np.zeros(rows)
    gen_at = {lay.bus_of[bus]: k for k, bus in enumerate(lay.gen_buses)}
    for j, bus in enumerate(pnet.buses):
        if j in gen_at:
            A[j, lay.pg[gen_at[j]]] = 1.0
            A[nb + j, lay.qg[gen_at[j]]] = 1.0
        b[j] = bus.pd + p_fcs[j]
        b[nb + j] = bus.qd
    for l, ln in enumerate(pnet.lines):
        i, j = lay.parent[l], lay.child[l]
        # receiving end of line l feeds bus j, net of the ohmic loss
        A[j, lay.pl[l]] += 1.0
        A[j, lay.i[l]] -= ln.r
        A[i, lay.pl[l]] -= 1.0
        A[nb + j, lay.ql[l]] += 1.0
        A[nb + j, lay.i[l]] -= ln.x
        A[nb + i, lay.ql[l]] -= 1.0
        row = 2 * nb + l
        A[row, lay.u[j]] = 1.0
        A[row, lay.u[i]] = -1.0
        A[row, lay.pl[l]] = 2.0 * ln.r
        A[row, lay.ql[l]] = 2.0 * ln.x
        A[row, lay.i[l]] = -ln.z2
    return A, b


class _Inequalities:
    """Slack functions of every inequality, their Jacobian and curvature."""

    def __init__(self, lay: _OPFLayout):
        self.lay = lay
        pnet = lay.pnet
        self.u_lo = np.array([b.u_min for b in pnet.buses])
        self.u_hi = np.array([b.u_max for b in pnet.buses])
        self.i_lo = np.array([ln.i_min for ln in pnet.lines])
        self.i_hi = np.array([ln.i_max for ln in pnet.lines])
        # inequality count: 2 nb + 2 nl boxes + nl cones + (ng-1) dispatch signs
        self.count = 2 * lay.nb + 2 * lay.nl + lay.nl + (lay.ng - 1)

    def slacks(self, z: np.ndarray) -> np.ndarray:
        lay = self.lay
        u = z[lay.u]
        i = z[lay.i]
        p = z[lay.pl]
        q = z[lay.ql]
        cone = u[lay.parent] * i - p**2 - q**2
        return np.concatenate([
            u - self.u_lo, self.u_hi - u,
            i - self.i_lo, self.i_hi - i,
            cone,
            z[lay.pg[1:]],
        ])

    def slack_jacobian(self, z: np.ndarray) -> np.ndarray:
        """Rows are gradients of the slack functions at z."""
        lay = self.lay
        J = np.zeros((self.count, lay.size))
        r = 0
        for j in range(lay.nb):
            J[r + j, lay.u[j]] = 1.0
            J[r + lay.nb + j, lay.u[j]] = -1.0
        r += 2 * lay.nb
        for l in range(lay.nl):
            J[r + l, lay.i[l]] = 1.0
            J[r + lay.nl + l, lay.i[l]] = -1.0
        r += 2 * lay.nl
        u = z[lay.u]
        for l in range(lay.nl):
            J[r + l, lay.u[lay.parent[l]]] = z[lay.i[l]]
            J[r + l, lay.i[l]] = u[lay.parent[l]]
            J[r + l, lay.pl[l]] = -2.0 * z[lay.pl[l]]
            J[r + l, lay.ql[l]] = -2.0 * z[lay.ql[l]]
        r += lay.nl
        for k in range(lay.ng - 1):
            J[r + k, lay.pg[1 + k]] = 1.0
        return J

    def lagrangian_curvature(self, lam: np.ndarray) -> np.ndarray:
        """-sum lam_i * Hess(s_i); only the cone slacks are nonlinear."""
        lay = self.lay
        n = lay.size
        H = np.zeros((n, n))
        base = 2 * lay.nb + 2 * lay.nl
        for l in range(lay.nl):
            lam_l = lam[base + l]
            iu = lay.u[lay.parent[l]]
            ii = lay.i[l]
            H[lay.pl[l], lay.pl[l]] += 2.0 * lam_l
            H[lay.ql[l], lay.ql[l]] += 2.0 * lam_l
            H[iu, ii] -= lam_l
            H[ii, iu] -= lam_l
        return H


def _objective_terms(lay: _OPFLayout, z: np.ndarray):
    pg = z[lay.pg]
    f0 = float(lay.c2 @ pg**2 + lay.c1 @ pg)
    g = np.zeros(lay.size)
    g[lay.pg] = 2.0 * lay.c2 * pg + lay.c1
    hdiag = np.zeros(lay.size)
    hdiag[lay.pg] = 2.0 * lay.c2
    return f0, g, hdiag


def _kkt_solve(M: np.ndarray, A: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    n = M.shape[0]
    kkt = np.block([[M, A.T], [A, np.zeros((A.shape[0], A.shape[0]))]])
    # symmetric equilibration: curvatures span many orders of magnitude
    s = 1.0 / np.sqrt(np.maximum(np.linalg.norm(kkt, axis=1), 1e-12))
    kkt_s = kkt * s[:, None] * s[None, :]
    try:
        return s * np.linalg.solve(kkt_s, s * rhs)
    except np.linalg.LinAlgError:
        kkt_s[np.arange(n), np.arange(n)] += 1e-10
        return s * np.linalg.lstsq(kkt_s, s * rhs, rcond=None)[0]


def _barrier_terms(cons: _Inequalities, z: np.ndarray):
    """Gradient and Hessian of -sum log s_i(z), via the slack Jacobian."""
    s = cons.slacks(z)
    J = cons.slack_jacobian(z)
    grad = -J.T @ (1.0 / s)
    hess = J.T @ ((1.0 / s**2)[:, None] * J) + cons.lagrangian_curvature(1.0 / s)
    return s, grad, hess


def _center(lay: _OPFLayout, cons: _Inequalities, A: np.ndarray, b: np.ndarray,
            z: np.ndarray, w: np.ndarray, t: float,
            max_newton: int = 120) -> tuple[np.ndarray, np.ndarray]:
    """Infeasible-start Newton centering for the barrier subproblem at t.

    The residual scales with t, so after dividing by t the targets below keep
    the original KKT residual far inside the 1e-6 accuracy contract. A stall
    at the float64 noise floor is accepted while still within that contract.
    """
    target = 1e-9 * max(1.0, t)
    stall_ok = 1e-7 * max(1.0, t)
    n = lay.size
    last_norm = math.inf
    stalls = 0
    for _ in range(max_newton):
        _, g0, h0 = _objective_terms(lay, z)
        _, gb, Hb = _barrier_terms(cons, z)
        r_dual = t * g0 + gb + A.T @ w
        r_pri = A @ z - b
        norm = math.sqrt(float(r_dual @ r_dual + r_pri @ r_pri))
        if norm <= target:
            return z, w
        if norm > 0.99 * last_norm:
            stalls += 1
            if stalls >= 5:
                if norm <= stall_ok:
                    return z, w
                raise NumericalError("centering stalled above tolerance")
        else:
            stalls = 0
        last_norm = norm
        M = Hb
        M[np.arange(n), np.arange(n)] += t * h0
        step = _kkt_solve(M, A, -np.concatenate([r_dual, r_pri]))
        dz = step[:n]
        dw = step[n:]
        tau = 1.0
        for _ in range(70):
            z_try = z + tau * dz
            if np.all(cons.slacks(z_try) > 0.0):
                w_try = w + tau * dw
                _, g0t, _ = _objective_terms(lay, z_try)
                _, gbt, _ = _barrier_terms(cons, z_try)
                rd = t * g0t + gbt + A.T @ w_try
                rp = A @ z_try - b
                if math.sqrt(float(rd @ rd + rp @ rp)) <= (1.0 - 0.01 * tau) * norm:
                    break
            tau *= 0.5
        else:
            raise NumericalError("centering line search failed")
        z = z + tau * dz
        w = w + tau * dw
    raise NumericalError("centering iteration cap reached")


def _solve_barrier(lay: _OPFLayout, cons: _Inequalities, A: np.ndarray,
                   b: np.ndarray, z: np.ndarray, gap_tol: float = 1e-9,
                   cone_target: float = 3e-7,
                   t_cap: float = 3e9) -> tuple[np.ndarray, np.ndarray, float]:
    """Barrier path following; stops once the scaled duality gap meets gap_tol
    and every cone slack is below cone_target (or conditioning ends the climb
    with the 1e-6 contract already certified)."""
    m = cons.count
    cone_rows = slice(2 * lay.nb + 2 * lay.nl, 2 * lay.nb + 2 * lay.nl + lay.nl)
    w = np.zeros(A.shape[0])
    t = 1.0
    best: tuple[np.ndarray, np.ndarray, float] | None = None
    while True:
        try:
            z, w = _center(lay, cons, A, b, z, w, t)
        except NumericalError as exc:
            if best is not None:
                scale = max(1.0, abs(_objective_terms(lay, best[0])[0]))
                if m / best[2] <= 1e-6 * scale:
                    return best
            raise NumericalError(str(exc)) from exc
        best = (z.copy(), w.copy(), t)
        scale = max(1.0, abs(_objective_terms(lay, z)[0]))
        cone_max = float(np.max(cons.slacks(z)[cone_rows], initial=0.0))
        if m / t <= gap_tol * scale and cone_max <= cone_target:
            return z, w, t
        if t >= t_cap:
            return z, w, t
        t *= 10.0


def _warm_start(lay: _OPFLayout, cons: _Inequalities,
                p_fcs: np.ndarray) -> np.ndarray:
    """Interior start from a lossless tree flow: per-line flows are downstream
    load sums, currents sit strictly above the cone surface."""
    pnet = lay.pnet
    z = np.zeros(lay.size)
    z[lay.u] = 0.5 * (cons.u_lo + cons.u_hi)
    p_load = np.array([b.pd for b in pnet.buses]) + p_fcs
    q_load = np.array([b.qd for b in pnet.buses])
    children: dict[int, list[int]] = {j: [] for j in range(lay.nb)}
    for l in range(lay.nl):
        children[lay.parent[l]].append(l)
    # accumulate subtree loads from the leaves upward
    order = sorted(range(lay.nl), key=lambda l: -_depth(lay, l))
    p_sub = p_load.copy()
    q_sub = q_load.copy()
    for l in order:
        p_sub[lay.parent[l]] += p_sub[lay.child[l]]
        q_sub[lay.parent[l]] += q_sub[lay.child[l]]
    for l in range(lay.nl):
        z[lay.pl[l]] = p_sub[lay.child[l]]
        z[lay.ql[l]] = q_sub[lay.child[l]]
        need = (z[lay.pl[l]]**2 + z[lay.ql[l]]**2) / z[lay.u[lay.parent[l]]]
        z[lay.i[l]] = min(max(1.2 * need + 1.0,
                              cons.i_lo[l] + 0.05 * (cons.i_hi[l] - cons.i_lo[l])),
                          cons.i_lo[l] + 0.95 * (cons.i_hi[l] - cons.i_lo[l]))
    z[lay.pg[0]] = float(np.sum(p_load))
    z[lay.pg[1:]] = 1e-2
    return z


def _depth(lay: _OPFLayout, l: int) -> int:
    d = 0
    node = lay.parent[l]
    parents = {lay.child[k]: lay.parent[k] for k in range(lay.nl)}
    while node in parents:
        node = parents[node]
        d += 1
    return d


def solve_opf(pnet: PowerNetwork, p_fcs: np.ndarray | None = None,
              gap_tol: float = 1e-9, cone_target: float = 3e-7) -> OPFSolution:
    """Minimize generation plus slack-injection cost under branch-flow physics.

    p_fcs is the per-bus charging load (zeros when omitted). Raises
    NumericalError when the interior-point method cannot make progress, which
    on a sane radial instance means infeasible loading.
    """
    lay = _OPFLayout(pnet)
    if p_fcs is None:
        p_fcs = np.zeros(lay.nb)
    p_fcs = np.asarray(p_fcs, dtype=float)
    if p_fcs.shape != (lay.nb,):
        raise InputError(f"p_fcs must have one entry per bus ({lay.nb})")
    cons = _Inequalities(lay)
    A, b = _build_equalities(lay, p_fcs)

    z = _warm_start(lay, cons, p_fcs)
    if np.any(cons.slacks(z) <= 0.0):
        raise NumericalError("infeasible OPF: no strictly interior start")
    try:
        z, w, t = _solve_barrier(lay, cons, A, b, z, gap_tol=gap_tol,
                                 cone_target=cone_target)
    except NumericalError as exc:
        raise NumericalError(f"infeasible OPF: {exc}") from exc

    f0, _, _ = _objective_terms(lay, z)
    scale = max(1.0, abs(f0))
    nu = w / t
    lmp = {bus.id: float(-nu[j]) for j, bus in enumerate(pnet.buses)}
    slacks = cons.slacks(z)
    cone = slacks[2 * lay.nb + 2 * lay.nl:2 * lay.nb + 2 * lay.nl + lay.nl]
    warnings = []
    tight = bool(np.max(cone, initial=0.0) <= 1e-4)
    if not tight:
        warnings.append(
            f"relaxation not tight: max cone slack {float(np.max(cone)):.3e}")
    return OPFSolution(
        pg={bus: float(z[lay.pg[k]]) for k, bus in enumerate(lay.gen_buses)},
        qg={bus: float(z[lay.qg[k]]) for k, bus in enumerate(lay.gen_buses)},
        p_flow=z[lay.pl].copy(),
        q_flow=z[lay.ql].copy(),
        current=z[lay.i].copy(),
        u=z[lay.u].copy(),
        objective=f0,
        lmp=lmp,
        cone_slack=cone.copy(),
        balance_residual=float(np.max(np.abs(A @ z - b))),
        duality_gap=mu_hat * cons.count / scale,
        tight=tight,
        loss=float(sum(ln.r * z[lay.i[l]] for l, ln in enumerate(pnet.lines))),
        warnings=warnings,
    )


@dataclass
class CoupledCycle:
    cycle: int
    prices: np.ndarray
    lmp_owned: np.ndarray
    profit: float


@dataclass
class CoupledResult:
    prices: np.ndarray
    lmp: dict[str, float]
    ue: UESolution
    opf: OPFSolution
    cycles: list[CoupledCycle]
    converged: bool
    trajectory: Trajectory | None = None


def coupled_fixed_point(problem: PricingProblem, pnet: PowerNetwork,
                        config: GDGSAConfig | None = None,
                        initial_prices: np.ndarray | None = None,
                        epsilon: float = 1e-3,
                        max_cycles: int = 20) -> CoupledResult:
    """Alternate grid pricing and provider pricing until profit settles.

    Each cycle: solve the OPF at the current charging loads, read marginal
    prices at the owned stations as the provider's electricity cost, rerun the
    price optimization, convert the new charging flows back into bus loads.
    Stops when the provider profit changes by at most epsilon between cycles.
    """
    cfg = config or GDGSAConfig()
    prices = problem.midpoint_prices() if initial_prices is None \
        else np.asarray(initial_prices, dtype=float).copy()
    sol = problem.solve(prices, tol=cfg.ue_tol)
    loads = charging_load(sol.charge_flows, problem.params.charge_energy,
                          problem.net, pnet)
    owned_buses = [pnet.fcs_bus[problem.net.stations[m].node]
                   for m in problem.owned]
    cycles: list[CoupledCycle] = []
    prev_profit: float | None = None
    traj = None
    opf = None
    for cycle in range(1, max_cycles + 1):
        opf = solve_opf(pnet, loads)
        nu_owned = np.array([opf.lmp[b] for b in owned_buses])
        traj = gdgsa(problem, initial_prices=prices, config=cfg,
                     elec_cost=nu_owned)
        prices = traj.final.prices
        sol = traj.final_solution
        loads = charging_load(sol.charge_flows, problem.params.charge_energy,
                              problem.net, pnet)
        cycles.append(CoupledCycle(cycle, prices.copy(), nu_owned,
                                   traj.final.profit))
        if prev_profit is not None and abs(traj.final.profit - prev_profit) <= epsilon:
            final_opf = solve_opf(pnet, loads)
            return CoupledResult(prices, final_opf.lmp, sol, final_opf,
                                 cycles, True, traj)
        prev_profit = traj.final.profit
    tail = cycles[-2:]
    detail = "; ".join(
        f"cycle {c.cycle}: prices {np.round(c.prices, 6).tolist()} "
        f"lmp {np.round(c.lmp_owned, 6).tolist()}" for c in tail)
    raise NumericalError(f"coupled loop cycle cap ({max_cycles}) reached; {detail}")


@dataclass
class StrategyRow:
    name: str
    prices: np.ndarray
    profit: float
    pn_loss_mw: float
    tn_cost: float


def transport_cost(problem: PricingProblem, sol: UESolution) -> float:
    """System travel plus queueing time, monetized by the time-value factor."""
    x = np.concatenate([sol.arc_flows, sol.charge_flows])
    return problem.params.time_value * float(x @ problem.latency.time(x))


def impact_report(problem: PricingProblem, pnet: PowerNetwork,
                  strategies: dict[str, np.ndarray | str],
                  config: GDGSAConfig | None = None,
                  epsilon: float = 1e-3,
                  max_cycles: int = 20) -> list[StrategyRow]:
    """Profit / grid-loss / transport-cost table, one row per price strategy.

    A strategy is either a fixed owned-price vector or the string "optimal",
    which runs the coupled fixed point. Fixed strategies still price their
    electricity at the marginal prices induced by their own loads.
    """
    cfg = config or GDGSAConfig()
    rows: list[StrategyRow] = []
    owned_buses = [pnet.fcs_bus[problem.net.stations[m].node]
                   for m in problem.owned]
    for name, strat in strategies.items():
        if isinstance(strat, str):
            if strat != "optimal":
                raise InputError(f"unknown strategy {strat!r}")
            res = coupled_fixed_point(problem, pnet, cfg, epsilon=epsilon,
                                      max_cycles=max_cycles)
            rows.append(StrategyRow(name, res.prices, res.cycles[-1].profit,
                                    res.opf.loss,
                                    transport_cost(problem, res.ue)))
            continue
        lam = np.asarray(strat, dtype=float)
        sol = problem.solve(lam, tol=cfg.ue_tol)
        loads = charging_load(sol.charge_flows, problem.params.charge_energy,
                              problem.net, pnet)
        opf = solve_opf(pnet, loads)
        nu_owned = np.array([opf.lmp[b] for b in owned_buses])
        value = profit(lam, sol.charge_flows[problem.owned],
                       problem.params.charge_energy, elec_cost=nu_owned)
        rows.append(StrategyRow(name, lam, value, opf.loss,
                                transport_cost(problem, sol)))
    return rows


def report_csv(rows: list[StrategyRow]) -> str:
    lines = ["strategy,profit,pn_loss_mw,tn_cost"]
    for r in rows:
        lines.append(f"{r.name},{r.profit!r},{r.pn_loss_mw!r},{r.tn_cost!r}")
    return "\n".join(lines) + "\n"
