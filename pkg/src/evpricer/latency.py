"""Vectorized latency families for generalized arcs.

Road arcs use the quartic volume-delay curve t0*(1 + 0.15*(x/u)^4); stations
use the cubic queueing curve t0 + tbar*(x/u)^3. A linear family a + b*x is
kept for analytically tractable test networks. Each family exposes the time,
its antiderivative (for the equilibrium potential) and its flow derivative
(for Hessians), all exact closed forms.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BPR = 0
FCS_CUBIC = 1
LINEAR = 2


def bpr_time(x, t0, cap):
    x = np.asarray(x, dtype=float)
    return t0 * (1.0 + 0.15 * (x / cap) ** 4)


def bpr_integral(x, t0, cap):
    x = np.asarray(x, dtype=float)
    return t0 * (x + 0.03 * x**5 / cap**4)


def bpr_derivative(x, t0, cap):
    x = np.asarray(x, dtype=float)
    return t0 * 0.6 * x**3 / cap**4


def fcs_time(x, t0, tbar, cap):
    x = np.asarray(x, dtype=float)
    return t0 + tbar * (x / cap) ** 3


def fcs_integral(x, t0, tbar, cap):
    x = np.asarray(x, dtype=float)
    return t0 * x + tbar * x**4 / (4.0 * cap**3)


def fcs_derivative(x, t0, tbar, cap):
    x = np.asarray(x, dtype=float)
    return 3.0 * tbar * x**2 / cap**3


@dataclass(frozen=True)
class LatencyVector:
    """Per-generalized-arc latency, stored as family code plus up to three
    coefficients (meaning depends on the family)."""

    kind: np.ndarray  # int codes
    p1: np.ndarray    # BPR: t0 | FCS: t0   | LINEAR: intercept
    p2: np.ndarray    # BPR: u  | FCS: tbar | LINEAR: slope
    p3: np.ndarray    # FCS: u, unused otherwise

    def __post_init__(self):
        n = len(self.kind)
        assert len(self.p1) == len(self.p2) == len(self.p3) == n

    def __len__(self) -> int:
        return len(self.kind)

    def time(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        m = self.kind == BPR
        out[m] = bpr_time(x[m], self.p1[m], self.p2[m])
        m = self.kind == FCS_CUBIC
        out[m] = fcs_time(x[m], self.p1[m], self.p2[m], self.p3[m])
        m = self.kind == LINEAR
        out[m] = self.p1[m] + self.p2[m] * x[m]
        return out

    def integral(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        m = self.kind == BPR
        out[m] = bpr_integral(x[m], self.p1[m], self.p2[m])
        m = self.kind == FCS_CUBIC
        out[m] = fcs_integral(x[m], self.p1[m], self.p2[m], self.p3[m])
        m = self.kind == LINEAR
        out[m] = self.p1[m] * x[m] + 0.5 * self.p2[m] * x[m] ** 2
        return out

    def derivative(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        m = self.kind == BPR
        out[m] = bpr_derivative(x[m], self.p1[m], self.p2[m])
        m = self.kind == FCS_CUBIC
        out[m] = fcs_derivative(x[m], self.p1[m], self.p2[m], self.p3[m])
        m = self.kind == LINEAR
        out[m] = self.p2[m]
        return out


def concat(a: LatencyVector, b: LatencyVector) -> LatencyVector:
    return LatencyVector(
        np.concatenate([a.kind, b.kind]),
        np.concatenate([a.p1, b.p1]),
        np.concatenate([a.p2, b.p2]),
        np.concatenate([a.p3, b.p3]),
    )


def bpr_vector(t0: np.ndarray, cap: np.ndarray) -> LatencyVector:
    t0 = np.asarray(t0, dtype=float)
    cap = np.asarray(cap, dtype=float)
    n = len(t0)
    return LatencyVector(np.full(n, BPR), t0, cap, np.zeros(n))


def fcs_vector(t0: np.ndarray, tbar: np.ndarray, cap: np.ndarray) -> LatencyVector:
    t0 = np.asarray(t0, dtype=float)
    n = len(t0)
    return LatencyVector(np.full(n, FCS_CUBIC), t0,
                         np.asarray(tbar, dtype=float), np.asarray(cap, dtype=float))


def linear_vector(intercept: np.ndarray, slope: np.ndarray) -> LatencyVector:
    intercept = np.asarray(intercept, dtype=float)
    n = len(intercept)
    return LatencyVector(np.full(n, LINEAR), intercept,
                         np.asarray(slope, dtype=float), np.zeros(n))
