"""Path enumeration and incidence-matrix construction.

Candidate paths are the k shortest loopless road paths per OD pair under
free-flow travel time (Yen's algorithm over arc sequences, so parallel arcs
are distinct paths). EV paths additionally pick one charging station lying on
the walk: each road path is emitted once per on-path station, and road paths
touching no station are dropped for EV demand.

Everything downstream works on the incidence matrices built here: arc-path,
charge-path, OD-path, and their vertical generalized stack in which charging
stops behave like travel on synthetic hyper-arcs.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .network import EV, GV, ODDemand, TransportNetwork


@dataclass(frozen=True)
class PathRecord:
    od_index: int
    arcs: tuple[int, ...]          # arc indices, in walk order
    station: int | None            # station index, None for GV paths
    free_time: float               # free-flow travel time of the road walk


@dataclass
class PathStructure:
    """Enumerated path set plus its incidence matrices.

    arc_path has one row per arc, charge_path one row per station, od_path one
    row per OD pair; columns are paths. ``generalized`` is arc_path stacked on
    charge_path, indexed first by arcs then by station hyper-arcs.
    """

    net: TransportNetwork
    demand: ODDemand
    paths: list[PathRecord]
    arc_path: np.ndarray = field(init=False)
    charge_path: np.ndarray = field(init=False)
    od_path: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        n_arcs = len(self.net.arcs)
        n_fcs = len(self.net.stations)
        n_od = len(self.demand.pairs)
        n_paths = len(self.paths)
        self.arc_path = np.zeros((n_arcs, n_paths))
        self.charge_path = np.zeros((n_fcs, n_paths))
        self.od_path = np.zeros((n_od, n_paths))
        for j, p in enumerate(self.paths):
            for a in p.arcs:
                self.arc_path[a, j] = 1.0
            if p.station is not None:
                self.charge_path[p.station, j] = 1.0
            self.od_path[p.od_index, j] = 1.0
        self._validate()

    def _validate(self) -> None:
        for j, p in enumerate(self.paths):
            od = self.demand.pairs[p.od_index]
            node = od.origin
            visited = [node]
            for a in p.arcs:
                arc = self.net.arcs[a]
                if arc.tail != node:
                    raise InputError(f"path {j} is not a connected walk")
                node = arc.head
                visited.append(node)
            if node != od.destination:
                raise InputError(f"path {j} does not end at its OD destination")
            if p.station is not None:
                if od.vehicle_class != EV:
                    raise InputError(f"path {j} of a GV pair carries a charging stop")
                if self.net.stations[p.station].node not in visited:
                    raise InputError(f"path {j} charges off its walk")
            elif od.vehicle_class == EV:
                raise InputError(f"EV path {j} has no charging stop")
        col = self.od_path.sum(axis=0)
        assert np.all(col == 1.0), "each path must belong to exactly one OD pair"

    @property
    def n_paths(self) -> int:
        return len(self.paths)

    @property
    def generalized(self) -> np.ndarray:
        return np.vstack([self.arc_path, self.charge_path])

    @property
    def od_of_path(self) -> np.ndarray:
        return np.array([p.od_index for p in self.paths], dtype=int)

    @property
    def demands(self) -> np.ndarray:
        return np.array([p.demand for p in self.demand.pairs])


@dataclass(frozen=True)
class GeneralizedIncidence:
    """Generalized incidence stack and the row bookkeeping that produced it."""

    matrix: np.ndarray
    is_hyper: np.ndarray     # True on station hyper-arc rows
    labels: tuple[str, ...]  # "arc:<tail>-><head>" or "fcs:<node>"


def hyper_arc_transform(ps: PathStructure) -> GeneralizedIncidence:
    """Stack charging rows under the arc rows so a stop reads as arc travel."""
    n_arcs = len(ps.net.arcs)
    n_fcs = len(ps.net.stations)
    labels = tuple(
        [f"arc:{a.tail}->{a.head}" for a in ps.net.arcs]
        + [f"fcs:{s.node}" for s in ps.net.stations]
    )
    is_hyper = np.zeros(n_arcs + n_fcs, dtype=bool)
    is_hyper[n_arcs:] = True
    return GeneralizedIncidence(ps.generalized, is_hyper, labels)


def _adjacency(net: TransportNetwork) -> dict[str, list[tuple[int, str, float]]]:
    adj: dict[str, list[tuple[int, str, float]]] = {n: [] for n in net.nodes}
    for i, a in enumerate(net.arcs):
        adj[a.tail].append((i, a.head, a.free_time))
    return adj


def _dijkstra(adj, source: str, target: str, banned_arcs: set[int],
              banned_nodes: set[str]) -> tuple[float, tuple[int, ...]] | None:
    # Heap entries carry the arc sequence so equal-cost ties pop in
    # lexicographic arc order, which keeps enumeration deterministic.
    heap: list[tuple[float, tuple[int, ...], str]] = [(0.0, (), source)]
    settled: set[str] = set()
    while heap:
        cost, arcs, node = heapq.heappop(heap)
        if node in settled:
            continue
        settled.add(node)
        if node == target:
            return cost, arcs
        for arc_idx, head, w in adj[node]:
            if arc_idx in banned_arcs or head in banned_nodes or head in settled:
                continue
            heapq.heappush(heap, (cost + w, arcs + (arc_idx,), head))
    return None


def k_shortest_paths(net: TransportNetwork, source: str, target: str,
                     k: int) -> list[tuple[float, tuple[int, ...]]]:
    """Yen's k shortest loopless paths by free travel time, as arc sequences.

    Deterministic: cost ties are broken by lexicographic arc sequence.
    """
    if k < 1:
        raise InputError("k must be at least 1")
    adj = _adjacency(net)
    first = _dijkstra(adj, source, target, set(), set())
    if first is None:
        return []
    accepted = [first]
    candidates: list[tuple[float, tuple[int, ...]]] = []
    seen = {first[1]}
    while len(accepted) < k:
        _, prev_arcs = accepted[-1]
        prev_nodes = [source] + [net.arcs[a].head for a in prev_arcs]
        for i in range(len(prev_arcs)):
            spur_node = prev_nodes[i]
            root = prev_arcs[:i]
            root_cost = sum(net.arcs[a].free_time for a in root)
            banned_arcs = {arcs[i] for _, arcs in accepted
                           if len(arcs) > i and arcs[:i] == root}
            banned_nodes = set(prev_nodes[:i])
            spur = _dijkstra(adj, spur_node, target, banned_arcs, banned_nodes)
            if spur is None:
                continue
            total = root + spur[1]
            if total not in seen:
                seen.add(total)
                heapq.heappush(candidates, (root_cost + spur[0], total))
        if not candidates:
            break
        accepted.append(heapq.heappop(candidates))
    return accepted


def generate_paths(net: TransportNetwork, demand: ODDemand, k: int) -> PathStructure:
    """Enumerate candidate paths for every OD pair and build the matrices.

    Ordering is deterministic: OD index, then free travel time, then
    lexicographic arc sequence, then charging-station index for the EV copies
    of one road path.
    """
    records: list[PathRecord] = []
    station_of_node = {s.node: i for i, s in enumerate(net.stations)}
    for od_index, od in enumerate(demand.pairs):
        road = k_shortest_paths(net, od.origin, od.destination, k)
        if not road:
            raise InputError(f"disconnected OD pair {od.origin}->{od.destination}")
        road.sort(key=lambda it: (it[0], it[1]))
        if od.vehicle_class == GV:
            for cost, arcs in road:
                records.append(PathRecord(od_index, arcs, None, cost))
            continue
        found = False
        for cost, arcs in road:
            walk_nodes = [od.origin] + [net.arcs[a].head for a in arcs]
            stops = sorted({station_of_node[n] for n in walk_nodes
                            if n in station_of_node})
            for st in stops:
                records.append(PathRecord(od_index, arcs, st, cost))
                found = True
        if not found:
            raise InputError(
                f"no feasible EV path for OD pair {od.origin}->{od.destination}: "
                "no enumerated road path touches a charging station")
    return PathStructure(net, demand, records)
