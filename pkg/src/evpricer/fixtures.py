"""Packaged benchmark instances.

``toy_problem`` is the five-node network with affine unit-slope costs whose
equilibrium and sensitivities are known in closed form; it is small enough to
check every quantity by hand. ``nguyen_problem`` is the classic 13-node
benchmark topology with four stations (two owned), and ``power4`` the radial
feeder it couples to.
"""
from __future__ import annotations

from importlib import resources
from pathlib import Path

from .network import ModelParams
from .power import PowerNetwork, load_power_file
from .problem import PricingProblem, build_problem
from .network import load_tntp


def fixtures_dir() -> Path:
    return Path(resources.files("evpricer") / "fixtures")


def toy_params() -> ModelParams:
    return ModelParams(charge_energy=1.0, time_value=1.0,
                       price_lower=0.5, price_upper=8.0)


def toy_problem() -> PricingProblem:
    d = fixtures_dir()
    net, demand = load_tntp(d / "toy_net.txt", d / "toy_trips.txt",
                            d / "toy_fcs.txt")
    return build_problem(net, demand, toy_params(), k_paths=2,
                         latency_kind="linear")


def nguyen_params() -> ModelParams:
    return ModelParams(charge_energy=1.0, time_value=2.0,
                       price_lower=5.0, price_upper=15.0)


def nguyen_problem(k_paths: int = 4) -> PricingProblem:
    d = fixtures_dir()
    net, demand = load_tntp(d / "nguyen_net.txt", d / "nguyen_trips.txt",
                            d / "nguyen_fcs.txt")
    return build_problem(net, demand, nguyen_params(), k_paths=k_paths,
                         latency_kind="bpr")


def power4() -> PowerNetwork:
    return load_power_file(fixtures_dir() / "power4_net.txt")
