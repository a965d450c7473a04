"""CSMA/CA baselines: DCF-style access with and without power saving.

Event-driven in continuous time with mini-slot backoff.  A node counts its
backoff down only while the power it senses stays below the carrier-sense
threshold, after a DIFS of idle medium.  Equal firing times collide only if
the receivers cannot tolerate the overlap: success is judged by the minimum
SINR over the whole packet, as in the scheduled MAC.  Every link uses the
same received-power target (power scaled by distance), so the carrier-sense
threshold is the only spatial-reuse knob; it is picked by a sweep.
"""

from __future__ import annotations

import dataclasses
import math
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core_model import RadioParams, pair_gains
from .hex_asymptotic import LatticeConfig, maximize_G
from .mac_sim import Layout, SimScenario, move_nodes, pick_destination
from .metrics import MetricsReport, Trace, distance_weighted_throughput, report

_EPS = 1e-9


@dataclass(frozen=True)
class CsmaConfig:
    """Baseline settings; times in microseconds unless named otherwise.

    ``rx_target`` (mW) sets each source's power to
    ``clip(rx_target * d^alpha / c, gamma_min, gamma_max)``.
    """

    cs_threshold: float = 3.77e-8
    rx_target: float = 3.77e-7
    cw_min: int = 15
    cw_max: int = 1023
    mini_slot_us: float = 20.0
    sifs_us: float = 10.0
    preamble_us: float = 72.0
    data_us: float = 1000.0
    signaling_rate: float = 6e6
    psm: bool = False
    beacon_ms: float = 100.0
    atim_ms: float = 20.0
    atim_bits: int = 224
    atim_ack_bits: int = 112
    rate_window: int = 50

    def __post_init__(self):
        if not self.cs_threshold > 0 or not self.rx_target > 0:
            raise ValueError("cs_threshold and rx_target must be positive")
        if not 0 < self.cw_min <= self.cw_max:
            raise ValueError("need 0 < cw_min <= cw_max")
        if not 0 < self.atim_ms < self.beacon_ms:
            raise ValueError("ATIM window must be inside the beacon interval")
        if self.rate_window < 1:
            raise ValueError("rate_window must be >= 1")

    @property
    def difs_us(self) -> float:
        return self.sifs_us + 2.0 * self.mini_slot_us

    @property
    def packet_us(self) -> float:
        return self.preamble_us + self.data_us

    @property
    def atim_us(self) -> float:
        """ATIM, SIFS and ATIM-ACK back to back."""
        return (2 * self.preamble_us + self.sifs_us
                + (self.atim_bits + self.atim_ack_bits) / self.signaling_rate * 1e6)

    def with_(self, **changes) -> "CsmaConfig":
        return dataclasses.replace(self, **changes)


def link_powers(lengths, cfg: CsmaConfig, params: RadioParams) -> np.ndarray:
    d = np.asarray(lengths, dtype=float)
    return np.clip(cfg.rx_target * d ** params.alpha / params.c, params.gamma_min, params.gamma_max)


def choose_rate_sinr(history: Sequence[float], params: RadioParams) -> float:
    """Required SINR maximising empirical goodput over past packet SINRs.

    Candidates are the observed SINRs (clipped to the allowed range) plus
    ``eta_min``; goodput of candidate x is ``log2(1+x) * P(SINR >= x)``.
    """
    if not history:
        return params.eta_min
    h = np.sort(np.asarray(history, dtype=float))
    cand = np.unique(np.clip(np.concatenate([h, [params.eta_min]]), params.eta_min, params.eta_max))
    frac = 1.0 - np.searchsorted(h, cand * (1 - _EPS), side="left") / len(h)
    good = np.log2(1.0 + cand) * frac
    return float(cand[int(np.argmax(good))])


class _Dcf:
    def __init__(self, sc: SimScenario, cfg: CsmaConfig, placement=None):
        self.sc, self.cfg, self.p = sc, cfg, sc.params
        lay = Layout(sc, placement)
        self.rng = lay.rng_mac
        self.rng_traffic = lay.rng_traffic
        self.rng_dest = lay.rng_dest
        self.pos, self.dst = lay.pos, lay.dst
        self.speed, self.heading = lay.speed, lay.heading
        self.N = sc.n_nodes
        self.saturated = sc.load_bps is None
        self.queue = np.where(self.dst >= 0, math.inf if self.saturated else 0.0, 0.0)
        self.generated = 0.0
        self.cw = np.full(self.N, cfg.cw_min)
        self.counter = self.rng.integers(0, cfg.cw_min + 1, self.N)
        self.history = [deque(maxlen=cfg.rate_window) for _ in range(self.N)]
        self.tx_power = np.zeros(self.N)       # mW while transmitting
        self.tx_end = np.full(self.N, math.inf)
        self.tx_dst = np.full(self.N, -1)
        self.tx_req = np.zeros(self.N)
        self.tx_min = np.full(self.N, math.inf)
        self.tx_kind = [""] * self.N
        self.idle_since = np.zeros(self.N)
        self.busy = np.zeros(self.N, dtype=bool)
        self._geometry()
        self.stats = dict(transmissions=0, failures=0, atim_success=0)

    def _geometry(self) -> None:
        d = np.linalg.norm(self.pos[:, None] - self.pos[None], axis=-1)
        self.G = pair_gains(d, self.p)
        np.fill_diagonal(self.G, 0.0)
        has = self.dst >= 0
        self.length = np.zeros(self.N)
        self.length[has] = d[np.flatnonzero(has), self.dst[has]]
        self.gamma = np.zeros(self.N)
        self.gamma[has] = link_powers(self.length[has], self.cfg, self.p)

    # -- medium --------------------------------------------------------
    def _sense(self):
        power = self.G.T @ self.tx_power
        transmitting = self.tx_power > 0
        receiving = np.zeros(self.N, dtype=bool)
        act = np.flatnonzero(transmitting)
        receiving[self.tx_dst[act]] = True
        return (power >= self.cfg.cs_threshold) | transmitting | receiving

    def _update_sinr(self) -> None:
        act = np.flatnonzero(self.tx_power > 0)
        if act.size == 0:
            return
        d = self.tx_dst[act]
        rx = self.G[:, d].T @ self.tx_power
        own = self.G[act, d] * self.tx_power[act]
        s = own / (self.p.n0 + rx - own)
        s[self.tx_power[d] > 0] = 0.0            # destination is itself transmitting
        self.tx_min[act] = np.minimum(self.tx_min[act], s)

    def _set_busy(self, now: float) -> None:
        new = self._sense()
        went_busy = new & ~self.busy
        slot = self.cfg.mini_slot_us
        elapsed = np.floor((now - self.idle_since - self.cfg.difs_us) / slot + _EPS)
        self.counter = np.where(went_busy, np.maximum(self.counter - np.maximum(elapsed, 0), 0),
                                self.counter).astype(int)
        self.idle_since = np.where(new, math.inf, np.where(self.busy & ~new, now, self.idle_since))
        self.busy = new

    def _finish(self, i: int, bits_out: np.ndarray, announced: np.ndarray | None) -> None:
        cfg, p = self.cfg, self.p
        s = float(self.tx_min[i])
        ok = s >= self.tx_req[i] * (1 - _EPS) and s >= p.eta_min * (1 - _EPS)
        kind = self.tx_kind[i]
        self.stats["transmissions"] += 1
        if kind == "data":
            self.history[i].append(s)
            if ok:
                bits = math.log2(1.0 + self.tx_req[i]) * p.bandwidth * cfg.data_us * 1e-6
                bits = min(bits, self.queue[i])
                self.queue[i] -= bits
                bits_out[i] += bits
        elif ok and announced is not None:
            announced[i] = True
            self.stats["atim_success"] += 1
        if not ok:
            self.stats["failures"] += 1
        self.cw[i] = cfg.cw_min if ok else min(2 * (self.cw[i] + 1) - 1, cfg.cw_max)
        self.counter[i] = self.rng.integers(0, self.cw[i] + 1)
        self.tx_power[i] = 0.0
        self.tx_end[i] = math.inf
        self.tx_dst[i] = -1

    def run_window(self, t0: float, t1: float, eligible: np.ndarray, kind: str,
                   bits_out: np.ndarray, tx_time: np.ndarray, announced: np.ndarray | None = None) -> None:
        """Contend and transmit inside [t0, t1) (microseconds)."""
        cfg = self.cfg
        air = cfg.packet_us if kind == "data" else cfg.atim_us
        self.busy = self._sense()
        self.idle_since = np.where(self.busy, math.inf, t0)
        while True:
            want = eligible & (self.queue > 0) & (self.dst >= 0) & ~self.busy
            fire = np.where(want, self.idle_since + cfg.difs_us + self.counter * cfg.mini_slot_us, math.inf)
            fire = np.where(fire + air <= t1 + _EPS, fire, math.inf)
            t_fire = float(fire.min()) if fire.size else math.inf
            t_end = float(self.tx_end.min())
            t = min(t_fire, t_end)
            if not math.isfinite(t):
                break
            if t_end <= t_fire + _EPS:
                for i in np.flatnonzero(self.tx_end <= t_end + _EPS):
                    self._finish(int(i), bits_out, announced)
                self._set_busy(t_end)
                continue
            starters = np.flatnonzero(fire <= t_fire + _EPS)
            for i in starters:
                j = self.dst[i]
                self.tx_dst[i] = j
                self.tx_end[i] = t_fire + air
                self.tx_power[i] = self.gamma[i]
                self.tx_req[i] = choose_rate_sinr(self.history[i], self.p) if kind == "data" else self.p.eta_min
                self.tx_min[i] = math.inf
                self.tx_kind[i] = kind
                tx_time[i] += air
            self.counter[starters] = 0
            self._set_busy(t_fire)
            self._update_sinr()
        # counters of still-idle nodes progress up to the window end
        slot = cfg.mini_slot_us
        idle = ~self.busy
        elapsed = np.floor((t1 - self.idle_since[idle] - cfg.difs_us) / slot + _EPS)
        self.counter[idle] = np.maximum(self.counter[idle] - np.maximum(elapsed, 0), 0)

    def _arrivals(self, dt_s: float) -> None:
        if self.saturated:
            return
        rate = self.sc.load_bps / self.N / self.sc.packet_bits * dt_s
        bits = self.rng_traffic.poisson(rate, self.N) * float(self.sc.packet_bits)
        bits[self.dst < 0] = 0.0
        self.queue += bits
        self.generated += float(bits.sum())

    def _move(self, dt_s: float) -> None:
        if self.sc.max_speed <= 0:
            return
        self.pos = move_nodes(self.pos, self.speed, self.heading, dt_s, self.sc.grid)
        for i in range(self.N):
            j = self.dst[i]
            if j >= 0 and np.linalg.norm(self.pos[i] - self.pos[j]) > self.p.d_max:
                self.dst[i] = pick_destination(self.pos, i, self.sc, self.rng_dest)
                self.history[i].clear()
                if self.saturated:
                    self.queue[i] = math.inf if self.dst[i] >= 0 else 0.0
        self._geometry()

    def run(self) -> Trace:
        sc, cfg, p = self.sc, self.cfg, self.p
        epoch_us = cfg.beacon_ms * 1e3
        n_ep = max(1, int(round(sc.duration * 1e6 / epoch_us)))
        N = self.N
        grid = sc.grid
        bits_log = np.zeros((n_ep, N))
        len_log = np.zeros((n_ep, N))
        inner_log = np.zeros((n_ep, N), dtype=bool)
        energy = np.zeros((n_ep, N))
        rows = []
        for e in range(n_ep):
            if e > 0:
                self._move(epoch_us * 1e-6)
            self._arrivals(epoch_us * 1e-6)
            t0 = e * epoch_us
            bits = np.zeros(N)
            tx_time = np.zeros(N)
            if cfg.psm:
                announced = np.zeros(N, dtype=bool)
                w_end = t0 + cfg.atim_ms * 1e3
                self.run_window(t0, w_end, np.ones(N, dtype=bool), "atim", bits, tx_time, announced)
                awake_rest = np.zeros(N, dtype=bool)
                awake_rest[announced] = True
                awake_rest[self.dst[announced]] = True
                self.run_window(w_end, t0 + epoch_us, announced, "data", bits, tx_time)
                awake_us = cfg.atim_ms * 1e3 + awake_rest * (epoch_us - cfg.atim_ms * 1e3)
            else:
                self.run_window(t0, t0 + epoch_us, np.ones(N, dtype=bool), "data", bits, tx_time)
                awake_us = np.full(N, epoch_us)
            sleep_us = epoch_us - awake_us
            energy[e] = (p.gamma_c * awake_us + p.g_a * self.gamma * 1e-3 * tx_time + p.gamma_0 * sleep_us) * 1e-6
            bits_log[e] = bits
            len_log[e] = self.length
            cell = grid.locate(self.pos)
            inner_log[e] = (cell >= 0) & grid.inner[np.maximum(cell, 0)]
            rows.append(dict(epoch=e, delivered_bits=float(bits.sum()),
                             transmissions=self.stats["transmissions"], failures=self.stats["failures"],
                             energy_j=float(energy[e].sum())))
        return Trace(duration=n_ep * epoch_us * 1e-6, bandwidth=p.bandwidth, data_fraction=1.0,
                     inner_area=grid.area(grid.inner), total_area=grid.area(), src_node=np.arange(N),
                     bits=bits_log, length=len_log, src_inner=inner_log, energy=energy,
                     node_inner=inner_log.copy(), generated_bits=self.generated,
                     queued_bits=0.0 if self.saturated else float(self.queue.sum()), frame_rows=rows)


@dataclass
class CsmaResult:
    trace: Trace
    metrics: MetricsReport
    config: CsmaConfig
    stats: dict


def run_csma(scenario: SimScenario, cfg: CsmaConfig = CsmaConfig(), placement=None) -> CsmaResult:
    """Simulate the CSMA baseline on the scenario's node layout (or on a
    fixed ``placement``, as in :func:`jstpc.mac_sim.run_simulation`)."""
    sim = _Dcf(scenario, cfg, placement)
    trace = sim.run()
    g_max = maximize_G(LatticeConfig(alpha=scenario.params.alpha))[1]
    return CsmaResult(trace, report(trace, scenario.params.alpha, g_max=g_max), cfg, sim.stats)


def default_sweep(params: RadioParams = RadioParams()) -> list[CsmaConfig]:
    """Carrier-sense thresholds around the best region, at the largest
    received-power target every link up to d_max can reach."""
    rx = params.c * params.gamma_max * params.d_max ** (-params.alpha)
    return [CsmaConfig(cs_threshold=rx * k, rx_target=rx) for k in (0.03, 0.1, 0.2, 0.3, 0.5, 1.0)]


def atim_sweep(base: CsmaConfig, windows_ms=(5.0, 10.0, 20.0, 40.0)) -> list[CsmaConfig]:
    """Power-saving variants of ``base`` over ATIM window sizes."""
    return [base.with_(psm=True, atim_ms=w) for w in windows_ms]


def optimize_csma(scenario: SimScenario, grid: Iterable[CsmaConfig], seeds: Sequence[int] | None = None):
    """Config with the highest mean distance-weighted throughput over ``seeds``.

    Ties keep the earliest config.  Returns ``(best, table)`` where ``table``
    lists ``(config, mean_throughput)`` in grid order.
    """
    configs = list(grid)
    if not configs:
        raise ValueError("empty sweep grid")
    seeds = [scenario.seed] if seeds is None else list(seeds)
    table = []
    for cfg in configs:
        vals = [distance_weighted_throughput(_Dcf(scenario.with_(seed=s), cfg).run()) for s in seeds]
        table.append((cfg, float(np.mean(vals))))
    best = max(range(len(table)), key=lambda k: (table[k][1], -k))
    return table[best][0], table
