"""Transportation-side domain model: road graph, charging stations, OD demand.

File ingestion uses three whitespace-delimited text files (see README):
a network file (arcs), a trips file (OD demand) and a charging-station
sidecar. All parsing is locale-independent with ``.`` as decimal separator.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import InputError, ParseError

EV = "EV"
GV = "GV"


@dataclass(frozen=True)
class Arc:
    tail: str
    head: str
    free_time: float    # hours at zero flow
    capacity: float     # vehicles per period


@dataclass(frozen=True)
class ChargingStation:
    node: str
    free_charge_time: float   # hours, service time at zero queue
    wait_coeff: float         # hours, cubic congestion coefficient
    capacity: float           # vehicles per period
    owned: bool               # belongs to the optimized provider
    rival_price: float        # fixed price when not owned (also the default price)


@dataclass(frozen=True)
class ODPair:
    origin: str
    destination: str
    demand: float
    vehicle_class: str = EV


@dataclass
class TransportNetwork:
    """Directed road graph with charging stations on a subset of nodes."""

    nodes: list[str]
    arcs: list[Arc]
    stations: list[ChargingStation]

    def __post_init__(self) -> None:
        node_set = set(self.nodes)
        if len(node_set) != len(self.nodes):
            raise InputError("duplicate node ids in network")
        for a in self.arcs:
            if a.tail not in node_set or a.head not in node_set:
                raise InputError(f"unknown node in arc {a.tail}->{a.head}")
            if a.free_time <= 0 or a.capacity <= 0:
                raise InputError(f"non-positive arc parameters on {a.tail}->{a.head}")
        seen = set()
        for s in self.stations:
            if s.node not in node_set:
                raise InputError(f"unknown node {s.node!r} in station list")
            if s.node in seen:
                raise InputError(f"duplicate station on node {s.node!r}")
            seen.add(s.node)
            if s.free_charge_time <= 0 or s.capacity <= 0 or s.wait_coeff <= 0:
                raise InputError(f"non-positive station parameters on node {s.node!r}")

    @property
    def fcs_nodes(self) -> list[str]:
        return [s.node for s in self.stations]

    @property
    def owned_indices(self) -> list[int]:
        return [i for i, s in enumerate(self.stations) if s.owned]

    def station_index(self, node: str) -> int:
        for i, s in enumerate(self.stations):
            if s.node == node:
                return i
        raise KeyError(node)


@dataclass
class ODDemand:
    pairs: list[ODPair]

    def __post_init__(self) -> None:
        if not self.pairs:
            raise InputError("no OD pairs")
        for p in self.pairs:
            if p.demand <= 0:
                raise InputError(f"non-positive demand for OD {p.origin}->{p.destination}")
            if p.origin == p.destination:
                raise InputError(f"origin equals destination for OD {p.origin}")
            if p.vehicle_class not in (EV, GV):
                raise InputError(f"unknown vehicle class {p.vehicle_class!r}")

    def validate_against(self, net: TransportNetwork) -> None:
        node_set = set(net.nodes)
        for p in self.pairs:
            if p.origin not in node_set:
                raise InputError(f"unknown node {p.origin!r} in trips")
            if p.destination not in node_set:
                raise InputError(f"unknown node {p.destination!r} in trips")


@dataclass(frozen=True)
class ModelParams:
    """Scalar model parameters shared by every operation.

    Prices are treated as money per kWh-equivalent; the default bounds keep
    the conventional benchmark values as opaque configuration numbers.
    """

    charge_energy: float = 50.0    # E, kWh per charging stop
    time_value: float = 2.0        # omega, money per hour
    price_lower: float = 200.0
    price_upper: float = 230.0

    def __post_init__(self) -> None:
        if self.charge_energy <= 0 or self.time_value <= 0:
            raise InputError("charge_energy and time_value must be positive")
        if not self.price_lower < self.price_upper:
            raise InputError("price_lower must be below price_upper")


def _tokenize(path: Path) -> list[tuple[int, list[str]]]:
    rows = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line or line.startswith("~"):
            continue
        rows.append((lineno, line.split()))
    return rows


def _float(tok: str, path: Path, lineno: int, what: str) -> float:
    try:
        return float(tok)
    except ValueError:
        raise ParseError(path, lineno, f"bad {what} value {tok!r}") from None


def load_network_file(net_file: str | Path) -> tuple[list[str], list[Arc]]:
    """Parse a network file: header ``<NUM ARCS> n`` then ``tail head free_time capacity``."""
    path = Path(net_file)
    if not path.exists():
        raise InputError(f"network file not found: {path}")
    rows = _tokenize(path)
    if not rows:
        raise ParseError(path, 1, "empty network file")
    lineno, header = rows[0]
    if len(header) < 3 or header[0] != "<NUM" or not header[1].startswith("ARCS>"):
        raise ParseError(path, lineno, "expected header '<NUM ARCS> n'")
    try:
        declared = int(header[2])
    except ValueError:
        raise ParseError(path, lineno, f"bad arc count {header[2]!r}") from None

    arcs: list[Arc] = []
    nodes: list[str] = []
    seen_nodes: set[str] = set()
    for lineno, toks in rows[1:]:
        if len(toks) != 4:
            raise ParseError(path, lineno, f"expected 4 fields, got {len(toks)}")
        tail, head = toks[0], toks[1]
        ft = _float(toks[2], path, lineno, "free_time")
        cap = _float(toks[3], path, lineno, "capacity")
        if ft <= 0 or cap <= 0:
            raise ParseError(path, lineno, "free_time and capacity must be positive")
        for n in (tail, head):
            if n not in seen_nodes:
                seen_nodes.add(n)
                nodes.append(n)
        arcs.append(Arc(tail, head, ft, cap))
    if len(arcs) != declared:
        raise ParseError(path, rows[0][0], f"header declares {declared} arcs, file has {len(arcs)}")
    return nodes, arcs


def load_trips_file(trips_file: str | Path) -> ODDemand:
    """Parse a trips file: records ``origin dest demand class`` with class EV or GV."""
    path = Path(trips_file)
    if not path.exists():
        raise InputError(f"trips file not found: {path}")
    pairs: list[ODPair] = []
    for lineno, toks in _tokenize(path):
        if len(toks) != 4:
            raise ParseError(path, lineno, f"expected 4 fields, got {len(toks)}")
        demand = _float(toks[2], path, lineno, "demand")
        vclass = toks[3].upper()
        if vclass not in (EV, GV):
            raise ParseError(path, lineno, f"vehicle class must be EV or GV, got {toks[3]!r}")
        pairs.append(ODPair(toks[0], toks[1], demand, vclass))
    if not pairs:
        raise InputError(f"no OD pairs in {path}")
    return ODDemand(pairs)


def load_fcs_file(fcs_file: str | Path) -> list[ChargingStation]:
    """Parse a station sidecar: ``node t_fcs0 t_bar capacity owned(0|1) rival_price``."""
    path = Path(fcs_file)
    if not path.exists():
        raise InputError(f"fcs file not found: {path}")
    stations: list[ChargingStation] = []
    for lineno, toks in _tokenize(path):
        if len(toks) != 6:
            raise ParseError(path, lineno, f"expected 6 fields, got {len(toks)}")
        t0 = _float(toks[1], path, lineno, "t_fcs0")
        tbar = _float(toks[2], path, lineno, "t_bar")
        cap = _float(toks[3], path, lineno, "capacity")
        if toks[4] not in ("0", "1"):
            raise ParseError(path, lineno, f"owned flag must be 0 or 1, got {toks[4]!r}")
        price = _float(toks[5], path, lineno, "rival_price")
        stations.append(ChargingStation(toks[0], t0, tbar, cap, toks[4] == "1", price))
    return stations


def load_tntp(net_file: str | Path, trips_file: str | Path,
              fcs_file: str | Path) -> tuple[TransportNetwork, ODDemand]:
    """Load network, demand and stations from the three-file format.

    Raises ParseError with a line number for malformed records and InputError
    for dangling node references or an empty trips file.
    """
    nodes, arcs = load_network_file(net_file)
    stations = load_fcs_file(fcs_file)
    node_set = set(nodes)
    for s in stations:
        if s.node not in node_set:
            raise InputError(f"unknown node {s.node!r} in fcs file {fcs_file}")
    net = TransportNetwork(nodes, arcs, stations)
    demand = load_trips_file(trips_file)
    demand.validate_against(net)
    return net, demand
