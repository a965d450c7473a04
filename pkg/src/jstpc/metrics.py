"""Throughput, energy and scheduling-efficiency metrics over a simulation trace.

A :class:`Trace` stores, per frame (or per accounting epoch for the CSMA
baselines), the bits each link delivered, its length and whether its source
was inside the evaluation region, plus the energy each node consumed and
whether that node was inside the region.  All metrics are pure functions of
the trace, so they can be recomputed from a saved trace at any time.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .hex_asymptotic import LatticeConfig, maximize_G


class UndefinedMetric(ValueError):
    """Raised when a ratio metric has a zero denominator."""


@dataclass
class Trace:
    """Raw per-epoch accounting of one run.

    Shapes: ``bits``, ``length`` and ``src_inner`` are (frames, links);
    ``energy`` and ``node_inner`` are (frames, nodes).  ``src_node`` maps
    links to the node index of their source.  Energy is in J, bits in bit,
    lengths in m.
    """

    duration: float
    bandwidth: float
    data_fraction: float
    inner_area: float
    total_area: float
    src_node: np.ndarray
    bits: np.ndarray
    length: np.ndarray
    src_inner: np.ndarray
    energy: np.ndarray
    node_inner: np.ndarray
    generated_bits: float = 0.0
    queued_bits: float = 0.0
    frame_rows: list[dict] = field(default_factory=list)

    def __post_init__(self):
        self.src_node = np.asarray(self.src_node, dtype=int)
        self.bits = np.asarray(self.bits, dtype=float).reshape(-1, len(self.src_node))
        self.length = np.asarray(self.length, dtype=float).reshape(self.bits.shape)
        self.src_inner = np.asarray(self.src_inner, dtype=bool).reshape(self.bits.shape)
        self.energy = np.asarray(self.energy, dtype=float)
        self.node_inner = np.asarray(self.node_inner, dtype=bool).reshape(self.energy.shape)
        if self.duration <= 0:
            raise ValueError("trace duration must be positive")

    @property
    def n_frames(self) -> int:
        return self.bits.shape[0]

    def link_mask(self, region: str) -> np.ndarray:
        return _region_mask(self.src_inner, region)

    def node_mask(self, region: str) -> np.ndarray:
        return _region_mask(self.node_inner, region)

    def area(self, region: str) -> float:
        return self.inner_area if region == "inner" else self.total_area

    def digest(self) -> str:
        """SHA-256 over the numeric content; equal runs give equal digests."""
        h = hashlib.sha256()
        for arr in (self.src_node, self.bits, self.length, self.src_inner, self.energy, self.node_inner):
            a = np.ascontiguousarray(arr)
            h.update(str(a.dtype).encode())
            h.update(str(a.shape).encode())
            h.update(a.tobytes())
        h.update(json.dumps([self.duration, self.generated_bits, self.queued_bits]).encode())
        h.update(json.dumps(self.frame_rows, sort_keys=True, default=float).encode())
        return h.hexdigest()


def _region_mask(inner: np.ndarray, region: str) -> np.ndarray:
    if region == "inner":
        return inner
    if region == "all":
        return np.ones_like(inner, dtype=bool)
    raise ValueError(f"unknown region {region!r}; use 'inner' or 'all'")


def distance_weighted_throughput(trace: Trace, region: str = "inner") -> float:
    """Delivered bits times link length per second (bit*m/s)."""
    m = trace.link_mask(region)
    return float(np.sum(trace.bits * trace.length * m) / trace.duration)


def delivered_bits(trace: Trace, region: str = "inner") -> float:
    return float(np.sum(trace.bits * trace.link_mask(region)))


def total_energy_per_bit(trace: Trace, region: str = "inner") -> float:
    """Energy of the region's nodes divided by the region's delivered bits (J/bit)."""
    bits = delivered_bits(trace, region)
    if bits <= 0:
        raise UndefinedMetric("no delivered bits: energy per bit is undefined")
    return float(np.sum(trace.energy * trace.node_mask(region)) / bits)


def max_area_efficiency(alpha: float) -> float:
    """Largest lattice area efficiency max G for path-loss exponent ``alpha``."""
    return maximize_G(LatticeConfig(alpha=alpha))[1]


def scheduling_efficiency(trace: Trace, alpha: float, region: str = "inner",
                          data_slots_only: bool = False, g_max: float | None = None) -> float:
    """sum_l R_l d_l^2 / (max G * A), with R_l in bit/s/Hz.

    ``data_slots_only`` measures rates over data-slot time only.
    """
    g_max = max_area_efficiency(alpha) if g_max is None else g_max
    m = trace.link_mask(region)
    rate_d2 = np.sum(trace.bits * trace.length ** 2 * m) / (trace.duration * trace.bandwidth)
    if data_slots_only:
        rate_d2 /= trace.data_fraction
    return float(rate_d2 / (g_max * trace.area(region)))


def per_node_rates(trace: Trace, region: str = "inner") -> np.ndarray:
    """Delivered bit/s per source node in the region, sorted ascending.

    A node counts as in the region if its source was inside it in any frame.
    """
    m = trace.link_mask(region)
    per_link = np.sum(trace.bits * m, axis=0) / trace.duration
    active = m.any(axis=0)
    nodes = np.unique(trace.src_node[active])
    rates = np.array([per_link[active & (trace.src_node == n)].sum() for n in nodes])
    return np.sort(rates)


@dataclass
class MetricsReport:
    throughput: float
    energy_per_bit: float
    scheduling_efficiency: float
    scheduling_efficiency_data: float
    per_node_rates: list[float]
    region: str
    delivered_bits: float
    duration: float

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["energy_per_bit"] = None if math.isnan(self.energy_per_bit) else self.energy_per_bit
        return d


def report(trace: Trace, alpha: float, region: str = "inner", g_max: float | None = None) -> MetricsReport:
    g_max = max_area_efficiency(alpha) if g_max is None else g_max
    try:
        epb = total_energy_per_bit(trace, region)
    except UndefinedMetric:
        epb = math.nan
    return MetricsReport(
        throughput=distance_weighted_throughput(trace, region),
        energy_per_bit=epb,
        scheduling_efficiency=scheduling_efficiency(trace, alpha, region, g_max=g_max),
        scheduling_efficiency_data=scheduling_efficiency(trace, alpha, region, True, g_max=g_max),
        per_node_rates=per_node_rates(trace, region).tolist(),
        region=region,
        delivered_bits=delivered_bits(trace, region),
        duration=trace.duration,
    )
