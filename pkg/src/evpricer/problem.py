"""Bundles network, demand, path set and parameters into one priceable object.

A PricingProblem owns the fixed data; each equilibrium solve takes a full
per-station price vector. The optimized provider controls the owned slice,
rival stations keep their fixed sidecar prices.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import latency as lat
from .errors import InputError
from .network import ModelParams, ODDemand, TransportNetwork
from .paths import PathStructure, generate_paths
from .ue import UEModel, UESolution, solve_ue


def build_latency(net: TransportNetwork, kind: str = "bpr") -> lat.LatencyVector:
    """Latency for the generalized arcs: road rows first, then station rows.

    kind='linear' maps the same file parameters onto affine curves
    (t0 + t0/u * x on roads, t0 + tbar/u * x at stations) for closed-form test
    instances.
    """
    a_t0 = np.array([a.free_time for a in net.arcs])
    a_cap = np.array([a.capacity for a in net.arcs])
    s_t0 = np.array([s.free_charge_time for s in net.stations])
    s_tbar = np.array([s.wait_coeff for s in net.stations])
    s_cap = np.array([s.capacity for s in net.stations])
    if kind == "bpr":
        return lat.concat(lat.bpr_vector(a_t0, a_cap),
                          lat.fcs_vector(s_t0, s_tbar, s_cap))
    if kind == "linear":
        return lat.concat(lat.linear_vector(a_t0, a_t0 / a_cap),
                          lat.linear_vector(s_t0, s_tbar / s_cap))
    raise InputError(f"unknown latency kind {kind!r}")


@dataclass
class PricingProblem:
    net: TransportNetwork
    demand: ODDemand
    ps: PathStructure
    params: ModelParams
    latency_kind: str = "bpr"
    latency: lat.LatencyVector = field(init=False)
    owned: np.ndarray = field(init=False)          # station indices of the provider
    rival_prices: np.ndarray = field(init=False)   # full station vector of fixed prices

    def __post_init__(self) -> None:
        self.latency = build_latency(self.net, self.latency_kind)
        self.owned = np.array(self.net.owned_indices, dtype=int)
        self.rival_prices = np.array([s.rival_price for s in self.net.stations])

    @property
    def n_stations(self) -> int:
        return len(self.net.stations)

    @property
    def n_owned(self) -> int:
        return len(self.owned)

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.full(self.n_owned, self.params.price_lower)
        hi = np.full(self.n_owned, self.params.price_upper)
        return lo, hi

    def midpoint_prices(self) -> np.ndarray:
        lo, hi = self.bounds
        return (lo + hi) / 2.0

    def full_prices(self, owned_prices: np.ndarray) -> np.ndarray:
        """Expand the owned price vector to all stations (rivals stay fixed)."""
        owned_prices = np.asarray(owned_prices, dtype=float)
        if owned_prices.shape != (self.n_owned,):
            raise InputError(
                f"expected {self.n_owned} owned prices, got {owned_prices.shape}")
        prices = self.rival_prices.copy()
        prices[self.owned] = owned_prices
        return prices

    def ue_model(self, prices_full: np.ndarray) -> UEModel:
        prices_full = np.asarray(prices_full, dtype=float)
        if prices_full.shape != (self.n_stations,):
            raise InputError(
                f"expected {self.n_stations} station prices, got {prices_full.shape}")
        n_arcs = len(self.net.arcs)
        money = np.zeros(n_arcs + self.n_stations)
        money[n_arcs:] = self.params.charge_energy * prices_full
        return UEModel(
            delta=self.ps.generalized,
            od_of_path=self.ps.od_of_path,
            demands=self.ps.demands,
            latency=self.latency,
            omega=self.params.time_value,
            money=money,
            n_arcs=n_arcs,
        )

    def solve(self, owned_prices: np.ndarray, tol: float = 1e-8,
              init: str | np.ndarray = "min_cost",
              rng: np.random.Generator | None = None) -> UESolution:
        """Equilibrium at the given owned prices (rivals fixed)."""
        return solve_ue(self.ue_model(self.full_prices(owned_prices)),
                        tol=tol, init=init, rng=rng)

    def with_ownership(self, owned_nodes: list[str],
                       fixed_prices: np.ndarray | None = None) -> "PricingProblem":
        """Variant of this problem where a different station subset is optimized.

        Used by the multi-provider wrapper: stations outside owned_nodes keep
        fixed_prices (defaults to the current rival prices).
        """
        from .network import ChargingStation

        owned_set = set(owned_nodes)
        unknown = owned_set - set(self.net.fcs_nodes)
        if unknown:
            raise InputError(f"not charging stations: {sorted(unknown)}")
        if fixed_prices is None:
            fixed_prices = self.rival_prices
        stations = [
            ChargingStation(s.node, s.free_charge_time, s.wait_coeff, s.capacity,
                            s.node in owned_set, float(fixed_prices[i]))
            for i, s in enumerate(self.net.stations)
        ]
        net = TransportNetwork(list(self.net.nodes), list(self.net.arcs), stations)
        ps = PathStructure(net, self.demand, list(self.ps.paths))
        return PricingProblem(net, self.demand, ps, self.params, self.latency_kind)


def build_problem(net: TransportNetwork, demand: ODDemand, params: ModelParams,
                  k_paths: int = 4, latency_kind: str = "bpr") -> PricingProblem:
    ps = generate_paths(net, demand, k_paths)
    return PricingProblem(net, demand, ps, params, latency_kind)
