"""Physical-layer and energy primitives shared by the rest of the package.

Unit conventions: RF quantities (transmit power, interference, noise) are in
mW; circuit and sleep power are in W; energy per bit is J/(bit/Hz) unless a
function says otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np


def _scalar_or_array(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


def dbm_to_mw(dbm):
    return _scalar_or_array(10.0 ** (np.asarray(dbm, dtype=float) / 10.0))


def mw_to_dbm(mw):
    return _scalar_or_array(10.0 * np.log10(mw))


db_to_lin = dbm_to_mw
lin_to_db = mw_to_dbm


# Thermal noise is about -101 dBm per 20 MHz; scaled to the 2 MHz channel.
DEFAULT_NOISE_DBM = -101.0 + 10.0 * math.log10(2e6 / 20e6)


@dataclass(frozen=True)
class RadioParams:
    """Radio, propagation and energy constants.

    Defaults reproduce the simulation table of the reference scenario, with
    the interference bounds read as dBm and the SINR bounds as dB.
    """

    c: float = 1e-4
    alpha: float = 3.4
    n0: float = dbm_to_mw(DEFAULT_NOISE_DBM)
    gamma_min: float = 1.0
    gamma_max: float = 100.0
    i_min: float = dbm_to_mw(-80.0)
    i_max: float = dbm_to_mw(-45.0)
    eta_min: float = db_to_lin(6.0)
    eta_max: float = db_to_lin(30.0)
    gamma_c: float = 1.25
    g_a: float = 10.0
    gamma_0: float = 0.0
    bandwidth: float = 2e6
    d_max: float = 20.0

    def __post_init__(self):
        if not self.gamma_min < self.gamma_max:
            raise ValueError("gamma_min must be < gamma_max")
        if not self.i_min < self.i_max:
            raise ValueError("i_min must be < i_max")
        if not self.eta_min < self.eta_max:
            raise ValueError("eta_min must be < eta_max")
        if not self.g_a > 1:
            raise ValueError("g_a must be > 1")
        positives = dict(c=self.c, alpha=self.alpha, n0=self.n0, gamma_min=self.gamma_min,
                         i_min=self.i_min, eta_min=self.eta_min, gamma_c=self.gamma_c,
                         bandwidth=self.bandwidth, d_max=self.d_max)
        for name, value in positives.items():
            if not value > 0:
                raise ValueError(f"{name} must be > 0, got {value}")
        if self.gamma_0 < 0:
            raise ValueError("gamma_0 must be >= 0")

    def with_(self, **changes) -> "RadioParams":
        return replace(self, **changes)


def default_params(**overrides) -> RadioParams:
    return RadioParams(**overrides)


def tradeoff_params(**overrides) -> RadioParams:
    """Constants of the asymptotic rate/energy trade-off curve (circuit power in mW)."""
    base = dict(alpha=3.5, gamma_c=1.25e-3, g_a=10.0, gamma_min=1.0, gamma_max=100.0)
    base.update(overrides)
    return RadioParams(**base)


@dataclass
class LinkDemand:
    w: float = 1.0
    r_hat: float = math.inf
    e_hat: float = math.inf

    def __post_init__(self):
        if self.w < 0:
            raise ValueError("w must be >= 0")
        if not self.r_hat > 0 or not self.e_hat > 0:
            raise ValueError("r_hat and e_hat must be > 0")


def channel_gain(d, params: RadioParams):
    """Path gain ``c * d**-alpha``. Works elementwise on arrays."""
    d_arr = np.asarray(d, dtype=float)
    if np.any(d_arr <= 0):
        raise ValueError("distance must be positive")
    return _scalar_or_array(params.c * d_arr ** (-params.alpha))


def sinr(signal_power, interference, noise):
    """Signal over noise plus interference; all in the same linear unit."""
    s = np.asarray(signal_power, dtype=float)
    i = np.asarray(interference, dtype=float)
    n = np.asarray(noise, dtype=float)
    if np.any(s < 0) or np.any(i < 0) or np.any(n < 0):
        raise ValueError("powers must be non-negative")
    den = n + i
    if np.any(den <= 0):
        raise ValueError("noise plus interference must be positive")
    return _scalar_or_array(s / den)


def shannon_rate(eta):
    """Achievable rate in bit/s/Hz."""
    e = np.asarray(eta, dtype=float)
    if np.any(e < 0):
        raise ValueError("SINR must be non-negative")
    return _scalar_or_array(np.log2(1.0 + e))


def link_slot_power(scheduled, gamma, params: RadioParams):
    """Source plus destination power draw (W) of one link for one slot.

    ``gamma`` is the transmit power in mW.
    """
    u = np.asarray(scheduled, dtype=float)
    g_w = np.asarray(gamma, dtype=float) * 1e-3
    return _scalar_or_array(u * (2 * params.gamma_c + params.g_a * g_w) + (1 - u) * 2 * params.gamma_0)


def link_energy_per_bit(u_row, gamma_row, eta_row, params: RadioParams) -> float:
    """E_l = P_l / R_l for one link over T slots, J/(bit/Hz)."""
    p = np.mean(link_slot_power(np.asarray(u_row), np.asarray(gamma_row), params))
    r = np.mean(shannon_rate(np.asarray(u_row) * np.asarray(eta_row)))
    if r <= 0:
        return math.inf
    return float(p / r)


# Gain used when an interfering source sits on the receiving node itself
# (half-duplex conflict). Finite so that 0 * gain stays 0 in matrix products.
COLLOCATED_GAIN = 1e250


def pair_gains(distances, params: RadioParams) -> np.ndarray:
    d = np.asarray(distances, dtype=float)
    g = np.full(d.shape, COLLOCATED_GAIN)
    pos = d > 0
    g[pos] = params.c * d[pos] ** (-params.alpha)
    return g


@dataclass
class Topology:
    """Nodes and directional links with all pairwise source-to-destination gains.

    ``gains[k, l]`` is the gain from the source of link k to the destination
    of link l, so the diagonal holds each link's own channel.
    """

    positions: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    params: RadioParams = field(default_factory=RadioParams)
    distances: np.ndarray = field(init=False)
    gains: np.ndarray = field(init=False)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        self.src = np.asarray(self.src, dtype=int)
        self.dst = np.asarray(self.dst, dtype=int)
        if np.any(self.src == self.dst):
            raise ValueError("a link cannot have identical source and destination")
        s = self.positions[self.src]
        d = self.positions[self.dst]
        self.distances = np.linalg.norm(s[:, None, :] - d[None, :, :], axis=-1)
        if np.any(np.diag(self.distances) > self.params.d_max * (1 + 1e-12)):
            raise ValueError("link longer than d_max")
        self.gains = pair_gains(self.distances, self.params)

    @property
    def n_links(self) -> int:
        return len(self.src)

    @property
    def link_lengths(self) -> np.ndarray:
        return np.diag(self.distances).copy()

    def slot_sinr(self, u: np.ndarray, gamma: np.ndarray) -> np.ndarray:
        """SINR matrix (L x T) for scheduling matrix ``u`` and powers ``gamma`` (mW)."""
        tx = np.asarray(u, dtype=float) * np.asarray(gamma, dtype=float)
        received = self.gains.T @ tx
        own = np.diag(self.gains)[:, None] * tx
        interference = received - own
        return own / (self.params.n0 + interference)
