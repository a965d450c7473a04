"""Frame-level simulator of the coordinator-based MAC.

The area is a patch of hexagonal cells with a coordinator at each centre.
Every frame has contention slots (requests and location reports via a
truncated CSMA), scheduling slots (one per colour; each coordinator runs the
greedy scheduler over its local view and broadcasts the result) and data
slots (scheduled links transmit; success is judged against the real,
network-wide interference).
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .core_model import RadioParams, pair_gains
from .hex_asymptotic import Infeasible, LatticeConfig, maximize_G
from .link_planner import LinkPlan, PlannerMode, plan_link
from .metrics import MetricsReport, Trace, report
from .scheduler import SchedulerState, node_conflicts, run_rounds

SEED_ENV = "JSTPC_SEED"

SQRT3 = math.sqrt(3.0)


@dataclass(frozen=True)
class CellGrid:
    """Hexagonal cells of circumradius ``rg`` out to ``rings`` rings.

    ``rings=2`` gives the 19-cell layout; its inner 7 cells are ring <= 1.
    """

    rg: float = 20.0
    rings: int = 2
    ra: float | None = None

    def __post_init__(self):
        if self.ra is None:
            object.__setattr__(self, "ra", 1.5 * self.rg)
        if not self.rg > 0:
            raise ValueError("rg must be positive")
        if self.rings < 0:
            raise ValueError("rings must be >= 0")
        if self.ra < self.rg:
            raise ValueError("ra must be >= rg")
        if self.ra ** 2 < 0.75 * self.rg ** 2:
            raise ValueError("ra too small for the known-radius formula")

    @cached_property
    def axial(self) -> np.ndarray:
        k = self.rings
        cells = [(q, r) for q in range(-k, k + 1) for r in range(-k, k + 1) if abs(q + r) <= k]
        cells.sort(key=lambda c: (_hex_ring(*c), c[1], c[0]))
        return np.array(cells, dtype=int).reshape(-1, 2)

    @cached_property
    def centers(self) -> np.ndarray:
        q, r = self.axial[:, 0], self.axial[:, 1]
        return np.column_stack([SQRT3 * self.rg * (q + r / 2.0), 1.5 * self.rg * r])

    @property
    def n_cells(self) -> int:
        return len(self.axial)

    @cached_property
    def ring(self) -> np.ndarray:
        return np.array([_hex_ring(q, r) for q, r in self.axial], dtype=int)

    @property
    def inner(self) -> np.ndarray:
        """Cells used for metrics: everything but the outermost ring."""
        return self.ring <= max(self.rings - 1, 0)

    @property
    def rn(self) -> float:
        """Radius within which a coordinator knows the scheduled links."""
        return 1.5 * self.rg + math.sqrt(self.ra ** 2 - 0.75 * self.rg ** 2)

    @property
    def cell_area(self) -> float:
        return 1.5 * SQRT3 * self.rg ** 2

    def area(self, mask=None) -> float:
        n = self.n_cells if mask is None else int(np.sum(mask))
        return n * self.cell_area

    def locate(self, points) -> np.ndarray:
        """Cell index of each point, or -1 outside the layout."""
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        fq = (SQRT3 / 3.0 * p[:, 0] - p[:, 1] / 3.0) / self.rg
        fr = (2.0 / 3.0 * p[:, 1]) / self.rg
        q, r = _cube_round(fq, fr)
        lookup = {(int(a), int(b)): i for i, (a, b) in enumerate(self.axial)}
        return np.array([lookup.get((int(a), int(b)), -1) for a, b in zip(q, r)], dtype=int)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """``n`` points uniform over the union of cells (rejection sampling)."""
        ext = self.centers
        lo = ext.min(axis=0) - self.rg
        hi = ext.max(axis=0) + self.rg
        out = np.empty((0, 2))
        while len(out) < n:
            cand = rng.uniform(lo, hi, size=(2 * n + 8, 2))
            out = np.vstack([out, cand[self.locate(cand) >= 0]])
        return out[:n]


def _hex_ring(q: int, r: int) -> int:
    return max(abs(q), abs(r), abs(q + r))


def _cube_round(fq, fr):
    fs = -fq - fr
    q, r, s = np.round(fq), np.round(fr), np.round(fs)
    dq, dr, ds = np.abs(q - fq), np.abs(r - fr), np.abs(s - fs)
    fix_q = (dq > dr) & (dq > ds)
    fix_r = ~fix_q & (dr > ds)
    q = np.where(fix_q, -r - s, q)
    r = np.where(fix_r, -q - s, r)
    return q.astype(int), r.astype(int)


def assign_scheduling_colors(grid: CellGrid) -> np.ndarray:
    """Seven-colour reuse pattern ``(q + 3 r) mod 7`` on axial coordinates.

    Raises ValueError if the information disks of two same-coloured
    coordinators would overlap.
    """
    colors = np.mod(grid.axial[:, 0] + 3 * grid.axial[:, 1], 7)
    if not coloring_is_valid(grid, colors):
        raise ValueError("ra too large for a 7-colour schedule")
    return colors


def coloring_is_valid(grid: CellGrid, colors) -> bool:
    colors = np.asarray(colors)
    c = grid.centers
    d = np.linalg.norm(c[:, None] - c[None], axis=-1)
    clash = (colors[:, None] == colors[None]) & ~np.eye(len(c), dtype=bool)
    adjacent = d < SQRT3 * grid.rg * 1.01
    overlap = d < 2.0 * grid.ra
    return not np.any(clash & (adjacent | overlap))


def worst_case_c0(d0: float, rg: float, alpha: float, radius_cells: int = 400) -> float:
    """Packing constant for one source per cell beyond ``d0``.

    Sources sit on the cell-centre lattice around a receiver at a lattice
    point; returns ``sum (|p|/d0)^-alpha`` over lattice points farther than
    ``d0``, with a continuum tail beyond ``radius_cells`` spacings.
    """
    if not d0 > 0:
        raise ValueError("d0 must be positive")
    if not alpha > 2:
        raise ValueError("alpha must be > 2")
    spacing = SQRT3 * rg
    k = radius_cells
    q, r = np.meshgrid(np.arange(-k, k + 1), np.arange(-k, k + 1), indexing="ij")
    x = spacing * (q + r / 2.0)
    y = spacing * (SQRT3 / 2.0) * r
    dist = np.hypot(x, y).ravel()
    cut = k * spacing * SQRT3 / 2.0
    keep = (dist > d0) & (dist <= cut)
    direct = np.sum((dist[keep] / d0) ** (-alpha))
    cell_area = 1.5 * SQRT3 * rg ** 2
    tail = 2.0 * math.pi * d0 ** alpha * cut ** (2.0 - alpha) / ((alpha - 2.0) * cell_area)
    return float(direct + tail)


def remote_interference_floor(d0: float, rg: float, params: RadioParams, c0: float | None = None,
                              gamma: float | None = None) -> float:
    """Bound on interference (mW) from scheduled sources beyond ``d0``:
    ``c0 * gamma * d0^-alpha``, with ``gamma`` defaulting to the maximum power
    and ``c0`` to :func:`worst_case_c0`."""
    if not d0 > 0:
        raise ValueError("d0 must be positive")
    if not params.alpha > 2:
        raise ValueError("alpha must be > 2")
    c0 = worst_case_c0(d0, rg, params.alpha) if c0 is None else float(c0)
    gamma = params.gamma_max if gamma is None else float(gamma)
    return c0 * gamma * params.c * d0 ** (-params.alpha)


@dataclass(frozen=True)
class FrameConfig:
    slot_ms: float = 1.0
    contention_slots: int = 3
    scheduling_slots: int = 7
    data_slots: int = 90
    signaling_rate: float = 6e6
    request_bits: int = 160
    entry_bits: int = 200
    cw_min: int = 15
    cw_max: int = 1023
    mini_slot_us: float = 20.0
    sifs_us: float = 10.0
    preamble_us: float = 72.0

    def __post_init__(self):
        for name in ("contention_slots", "scheduling_slots", "data_slots"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.slot_ms > 0 or not self.signaling_rate > 0 or not self.mini_slot_us > 0:
            raise ValueError("slot duration, signaling rate and mini-slot must be positive")
        if not 0 < self.cw_min <= self.cw_max:
            raise ValueError("need 0 < cw_min <= cw_max")

    @property
    def slot_s(self) -> float:
        return self.slot_ms * 1e-3

    @property
    def slots_per_frame(self) -> int:
        return self.contention_slots + self.scheduling_slots + self.data_slots

    @property
    def frame_s(self) -> float:
        return self.slots_per_frame * self.slot_s

    @property
    def data_fraction(self) -> float:
        return self.data_slots / self.slots_per_frame

    @property
    def scheduling_capacity(self) -> int:
        """Link entries that fit in one scheduling packet."""
        return int(math.floor(self.slot_s * self.signaling_rate / self.entry_bits))

    @property
    def request_minislots(self) -> int:
        air = self.preamble_us + self.request_bits / self.signaling_rate * 1e6 + self.sifs_us
        return int(math.ceil(air / self.mini_slot_us - 1e-9))

    @property
    def contention_minislots(self) -> int:
        return int(math.floor(self.contention_slots * self.slot_ms * 1e3 / self.mini_slot_us + 1e-9))


# Remote-interference constant used by default in the simulator; see the
# calibration helper ``measure_remote_interference``.
DEFAULT_C0 = 0.6


@dataclass(frozen=True)
class SimScenario:
    """Everything that defines one simulation run.

    ``load_bps`` is the aggregate bit arrival rate of the whole network
    (``None`` = saturated sources).  ``c0`` is the remote-interference
    constant, a number or ``"worst_case"``.
    """

    n_nodes: int = 100
    grid: CellGrid = field(default_factory=CellGrid)
    frame: FrameConfig = field(default_factory=FrameConfig)
    params: RadioParams = field(default_factory=RadioParams)
    load_bps: float | None = None
    packet_bits: int = 12000
    max_speed: float = 0.0
    report_period: float = 1.0
    duration: float = 5.0
    seed: int = 0
    theta: float = math.inf
    lam: float | None = None
    planner_mode: str = "proposed"
    scheduler_mode: str = "greedy"
    c0: float | str = DEFAULT_C0
    min_link_distance: float = 2.0

    def __post_init__(self):
        if self.grid.rg < self.params.d_max:
            raise ValueError("cell radius rg must be >= d_max")
        if self.n_nodes < 1:
            raise ValueError("n_nodes must be >= 1")
        if self.duration < self.frame.frame_s:
            raise ValueError("duration shorter than one frame")
        if self.load_bps is not None and self.load_bps < 0:
            raise ValueError("load_bps must be >= 0")
        if not 0 <= self.max_speed:
            raise ValueError("max_speed must be >= 0")
        if not 0 < self.min_link_distance < self.params.d_max:
            raise ValueError("min_link_distance must be in (0, d_max)")
        if self.scheduler_mode not in ("greedy", "random"):
            raise ValueError(f"unknown scheduler mode {self.scheduler_mode!r}")
        PlannerMode(self.planner_mode)
        if isinstance(self.c0, str) and self.c0 != "worst_case":
            raise ValueError("c0 must be a number or 'worst_case'")
        if len(set(assign_scheduling_colors(self.grid).tolist())) > self.frame.scheduling_slots:
            raise ValueError("more colours than scheduling slots")

    @property
    def n_frames(self) -> int:
        return int(round(self.duration / self.frame.frame_s))

    def with_(self, **changes) -> "SimScenario":
        return dataclasses.replace(self, **changes)

    def d0(self) -> float:
        return self.grid.rn - self.grid.rg

    def i0(self) -> float:
        c0 = None if self.c0 == "worst_case" else float(self.c0)
        return remote_interference_floor(self.d0(), self.grid.rg, self.params, c0=c0)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["grid"]["ra"] = self.grid.ra
        return _jsonable(d)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    return x


_NESTED = {"grid": CellGrid, "frame": FrameConfig, "params": RadioParams}


def scenario_from_mapping(data: dict, where: str = "scenario") -> SimScenario:
    """Build a scenario from a nested mapping; unknown keys are errors."""
    if not isinstance(data, dict):
        raise ValueError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(SimScenario)}
    kwargs = {}
    for key, value in data.items():
        if key not in names:
            raise ValueError(f"{where}: unknown key {key!r}")
        if key in _NESTED:
            cls = _NESTED[key]
            sub = {f.name for f in dataclasses.fields(cls)}
            if not isinstance(value, dict):
                raise ValueError(f"{where}.{key}: expected an object")
            bad = sorted(set(value) - sub)
            if bad:
                raise ValueError(f"{where}.{key}: unknown key {bad[0]!r}")
            try:
                value = cls(**{k: _num(v) for k, v in value.items()})
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{where}.{key}: {exc}") from None
        else:
            value = _num(value)
        kwargs[key] = value
    try:
        return SimScenario(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{where}: {exc}") from None


def _num(v):
    if isinstance(v, str) and v.lower() in ("inf", "infinity"):
        return math.inf
    return v


def load_scenario(path) -> SimScenario:
    """Read a JSON scenario file, reporting the line of syntax errors."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return scenario_from_mapping(data, where=str(path))


def scenario_seed(scenario: SimScenario) -> SimScenario:
    """Apply the seed override from the environment, if set."""
    env = os.environ.get(SEED_ENV)
    return scenario if env in (None, "") else scenario.with_(seed=int(env))


def contend(pending: np.ndarray, cw: np.ndarray, rng: np.random.Generator, budget: int,
            airtime: int, cw_max: int):
    """Truncated CSMA among the nodes in ``pending`` sharing one medium.

    Each draws a backoff in ``[0, cw]`` mini-slots; counters freeze while
    another request is on the air.  Equal counters collide.  Returns
    ``(success, awake, new_cw)`` where ``awake`` is mini-slots spent awake
    and ``new_cw`` the contention window for the next attempt.
    """
    pending = np.asarray(pending, dtype=int)
    n = len(pending)
    success = np.zeros(n, dtype=bool)
    awake = np.full(n, budget, dtype=float)
    new_cw = np.asarray(cw, dtype=int).copy()
    if n == 0:
        return success, awake, new_cw
    counter = np.array([rng.integers(0, c + 1) for c in new_cw], dtype=int)
    live = np.ones(n, dtype=bool)
    now = 0
    while live.any():
        m = int(counter[live].min())
        end = now + m + airtime
        if end > budget:
            break
        winners = live & (counter == m)
        counter[live] -= m
        if winners.sum() == 1:
            success[winners] = True
            new_cw[winners] = -1
        else:
            new_cw[winners] = np.minimum(2 * (new_cw[winners] + 1) - 1, cw_max)
        awake[winners] = end
        live &= ~winners
        now = end
    return success, awake, new_cw


def _initial_motion(sc: SimScenario, rng: np.random.Generator):
    if sc.max_speed > 0:
        return rng.uniform(0.0, sc.max_speed, sc.n_nodes), rng.uniform(-math.pi, math.pi, sc.n_nodes)
    return np.zeros(sc.n_nodes), np.zeros(sc.n_nodes)


def pick_destination(pos: np.ndarray, i: int, sc: SimScenario, rng: np.random.Generator) -> int:
    """Uniform pick among nodes at distance in [min_link_distance, d_max]; -1 if none."""
    d = np.linalg.norm(pos - pos[i], axis=1)
    ok = (d >= sc.min_link_distance) & (d <= sc.params.d_max)
    ok[i] = False
    cand = np.flatnonzero(ok)
    return int(rng.choice(cand)) if cand.size else -1


def move_nodes(pos, speed, heading, dt: float, grid: CellGrid) -> np.ndarray:
    """Straight-line motion; a node that would leave the layout turns back
    (``heading`` is updated in place) and stays put for this step."""
    step = np.column_stack([np.cos(heading), np.sin(heading)]) * (speed * dt)[:, None]
    new = pos + step
    out = grid.locate(new) < 0
    heading[out] = np.mod(heading[out] + 2 * math.pi, 2 * math.pi) - math.pi
    new[out] = pos[out]
    return new


class Layout:
    """Node placement, motion and destinations shared by every scheme, so
    that equal seeds give equal topologies across simulators.

    ``placement`` optionally fixes ``(positions, destinations)``; a
    destination of -1 means the node has no link.
    """

    def __init__(self, sc: SimScenario, placement=None):
        streams = np.random.SeedSequence(sc.seed).spawn(6)
        self.rng_place, self.rng_dest, self.rng_traffic, self.rng_mac, self.rng_sched, self.rng_mobile = \
            (np.random.default_rng(s) for s in streams)
        if placement is None:
            self.pos = sc.grid.sample(sc.n_nodes, self.rng_place)
            self.dst = np.array([pick_destination(self.pos, i, sc, self.rng_dest) for i in range(sc.n_nodes)],
                                dtype=int)
        else:
            self.pos = np.asarray(placement[0], dtype=float).reshape(sc.n_nodes, 2).copy()
            self.dst = np.asarray(placement[1], dtype=int).reshape(sc.n_nodes).copy()
            if np.any(sc.grid.locate(self.pos) < 0):
                raise ValueError("placement puts a node outside the cell layout")
            if np.any(self.dst == np.arange(sc.n_nodes)) or np.any(self.dst >= sc.n_nodes):
                raise ValueError("invalid destination in placement")
        self.speed, self.heading = _initial_motion(sc, self.rng_mobile)


@dataclass
class SimResult:
    trace: Trace
    metrics: MetricsReport
    scenario: SimScenario
    stats: dict

    @property
    def digest(self) -> str:
        return self.trace.digest()

    def write(self, out_dir) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rows = self.trace.frame_rows
        with open(out / "frames.csv", "w", newline="") as fh:
            if rows:
                w = csv.DictWriter(fh, fieldnames=list(rows[0]))
                w.writeheader()
                w.writerows(rows)
        rates = self.metrics.per_node_rates
        with open(out / "node_rates.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rank", "rate_bps"])
            w.writerows(enumerate(rates))
        summary = dict(metrics=self.metrics.as_dict(), stats=self.stats, digest=self.digest)
        (out / "summary.json").write_text(json.dumps(summary, indent=2, default=float))
        return summary


class _Simulation:
    def __init__(self, sc: SimScenario, placement=None):
        self.sc = sc
        self.p = sc.params
        self.fr = sc.frame
        lay = Layout(sc, placement)
        self.rng_dest, self.rng_traffic, self.rng_mac = lay.rng_dest, lay.rng_traffic, lay.rng_mac
        self.rng_sched = lay.rng_sched
        g = sc.grid
        self.grid = g
        self.colors = assign_scheduling_colors(g)
        self.N = sc.n_nodes
        self.C = g.n_cells
        self.pos = lay.pos
        self.reported = self.pos.copy()
        self.speed, self.heading = lay.speed, lay.heading
        self.dst = lay.dst
        self.known_dst = self.dst.copy()
        self.saturated = sc.load_bps is None
        self.queue = np.full(self.N, math.inf if self.saturated else 0.0)
        self.known_queue = np.zeros(self.N)
        self.generated = 0.0
        self.delivered_total = 0.0
        self.need_request = self.dst >= 0
        if not self.saturated:
            self.need_request[:] = False
        self.need_report = np.zeros(self.N, dtype=bool)
        self.cw = np.full(self.N, self.fr.cw_min)
        self.i0 = sc.i0() + self.p.n0
        self.mode = PlannerMode(sc.planner_mode)
        self.cfg = LatticeConfig(alpha=self.p.alpha)
        self.plan_cache: dict = {}
        self.sched_cache: dict = {}
        self.plan_rng = np.random.default_rng(np.random.SeedSequence(sc.seed).spawn(7)[6])
        self.topo_version = 0
        self.remote_samples: list | None = None
        self.stats = dict(scheduled_tx=0, failed_tx=0, unplannable=0, capacity_deferrals=0,
                          requests_sent=0, request_collisions=0, min_sinr_margin=math.inf)

    def _pick_destination(self, i: int) -> None:
        self.dst[i] = pick_destination(self.pos, i, self.sc, self.rng_dest)

    def _plan(self, link: int, d: float) -> LinkPlan | None:
        key = (link, d) if self.mode is PlannerMode.ARBITRARY else round(d, 12)
        if key not in self.plan_cache:
            try:
                self.plan_cache[key] = plan_link(d, self.sc.theta, self.sc.lam, self.mode, self.p,
                                                 self.cfg, rng=self.plan_rng, link=link)
            except Infeasible:
                self.plan_cache[key] = None
        return self.plan_cache[key]

    # -- per-frame phases -------------------------------------------------
    def _move(self, dt: float) -> None:
        if self.sc.max_speed <= 0:
            return
        self.pos = move_nodes(self.pos, self.speed, self.heading, dt, self.grid)
        for i in range(self.N):
            j = self.dst[i]
            if j >= 0 and np.linalg.norm(self.pos[i] - self.pos[j]) > self.p.d_max:
                self._pick_destination(i)
                self.need_request[i] = self.dst[i] >= 0 and self.queue[i] > 0

    def _arrivals(self) -> None:
        if self.saturated:
            return
        rate = self.sc.load_bps / self.N / self.sc.packet_bits * self.fr.frame_s
        pk = self.rng_traffic.poisson(rate, self.N)
        bits = pk * float(self.sc.packet_bits)
        bits[self.dst < 0] = 0.0
        self.queue += bits
        self.generated += float(bits.sum())
        self.need_request |= (bits > 0)

    def _contention(self, awake_s: np.ndarray, tx_j: np.ndarray) -> None:
        fr = self.fr
        cell = self.grid.locate(self.pos)
        want = (self.need_request | self.need_report) & (cell >= 0)
        mini = fr.mini_slot_us * 1e-6
        air_s = (fr.preamble_us + fr.request_bits / fr.signaling_rate * 1e6) * 1e-6
        for c in range(self.C):
            nodes = np.flatnonzero(want & (cell == c))
            if nodes.size == 0:
                continue
            ok, awake, new_cw = contend(nodes, self.cw[nodes], self.rng_mac, fr.contention_minislots,
                                        fr.request_minislots, fr.cw_max)
            awake_s[nodes] += awake * mini
            sent = awake < fr.contention_minislots
            tx_j[nodes[sent]] += self.p.g_a * self.p.gamma_max * 1e-3 * air_s
            self.stats["requests_sent"] += int(sent.sum())
            self.stats["request_collisions"] += int((sent & ~ok).sum())
            self.cw[nodes] = np.where(new_cw < 0, fr.cw_min, new_cw)
            for n in nodes[ok]:
                self.reported[n] = self.pos[n]
                if self.dst[n] >= 0:
                    self.reported[self.dst[n]] = self.pos[self.dst[n]]
                self.known_dst[n] = self.dst[n]
                self.known_queue[n] = self.queue[n]
                self.need_request[n] = False
                self.need_report[n] = False
            if ok.any():
                self.topo_version += 1

    def _schedule(self):
        """Run every coordinator's scheduler; returns the L x T matrix and plans."""
        T = self.fr.data_slots
        N = self.N
        u = np.zeros((N, T), dtype=bool)
        links = np.flatnonzero(self.known_dst >= 0)
        plans: dict[int, LinkPlan] = {}
        for l in links:
            d = float(np.linalg.norm(self.reported[l] - self.reported[self.known_dst[l]]))
            if d <= 0 or d > self.p.d_max:
                continue
            pl = self._plan(int(l), d)
            if pl is None:
                self.stats["unplannable"] += 1
                continue
            plans[int(l)] = pl
        plinks = np.array(sorted(plans), dtype=int)
        if plinks.size == 0:
            return u, plans, np.full(N, -1)
        src_xy = self.reported[plinks]
        dst_xy = self.reported[self.known_dst[plinks]]
        dist = np.linalg.norm(src_xy[:, None] - dst_xy[None], axis=-1)
        gains = pair_gains(dist, self.p)
        gstar = np.array([plans[l].gamma_star for l in plinks])
        itgt = np.array([plans[l].i_target for l in plinks])
        bps = np.array([plans[l].planned_rate for l in plinks]) * self.p.bandwidth * self.fr.slot_s
        conflicts = node_conflicts(plinks, self.known_dst[plinks])
        dst_cell = self.grid.locate(dst_xy)
        scheduled_by = np.full(N, -1)
        sub_u = np.zeros((len(plinks), T), dtype=bool)
        cap = self.fr.scheduling_capacity
        backlog = self.known_queue[plinks] > 0
        for color in range(7):
            snapshot = sub_u.copy()
            for c in np.flatnonzero(self.colors == color):
                cand = np.flatnonzero((dst_cell == c) & backlog)
                if cand.size == 0:
                    continue
                ctr = self.grid.centers[c]
                near = (np.linalg.norm(src_xy - ctr, axis=1) <= self.grid.rn) | \
                       (np.linalg.norm(dst_xy - ctr, axis=1) <= self.grid.rn)
                fixed = np.flatnonzero(near & snapshot.any(axis=1))
                fixed = np.setdiff1d(fixed, cand)
                view = np.concatenate([cand, fixed])
                ms = np.ceil(np.minimum(self.known_queue[plinks[cand]], 1e18) / bps[cand]).astype(np.int64)
                ms = np.minimum(ms, T)
                key = None
                if self.sc.scheduler_mode == "greedy":
                    key = (int(c), self.topo_version if self.sc.max_speed > 0 else 0,
                           cand.tobytes(), ms.tobytes(), fixed.tobytes(), snapshot[fixed].tobytes())
                rows = self.sched_cache.get(key) if key is not None else None
                if rows is None:
                    nc = len(cand)
                    u0 = np.zeros((len(view), T), dtype=bool)
                    u0[nc:] = snapshot[fixed]
                    state = SchedulerState(gains[np.ix_(view, view)], gstar[view], itgt[view], T,
                                           i0=self.i0, u0=u0,
                                           max_slots=np.concatenate([ms, np.zeros(len(fixed), dtype=int)]),
                                           conflicts=conflicts[np.ix_(view, view)],
                                           candidates=np.arange(len(view)) < nc)
                    rng = self.rng_sched if self.sc.scheduler_mode == "random" else None
                    run_rounds(state, self.sc.scheduler_mode, rng, max_links=cap)
                    rows = state.u[:nc].copy()
                    if key is not None:
                        self.sched_cache[key] = rows
                    holders = int(rows.any(axis=1).sum())
                    waiting = int(((ms > 0) & ~rows.any(axis=1)).sum())
                    if holders >= cap and waiting:
                        self.stats["capacity_deferrals"] += waiting
                sub_u[cand] = rows
                scheduled_by[plinks[cand[rows.any(axis=1)]]] = c
            del snapshot
        u[plinks] = sub_u
        return u, plans, scheduled_by

    def _transmit(self, u, plans, energy_data, awake_data):
        """Judge every scheduled (link, slot) against the real interference."""
        N, p = self.N, self.p
        bits = np.zeros(N)
        act = np.flatnonzero(u.any(axis=1))
        if act.size == 0:
            return bits, 0, 0, math.nan
        dst = self.dst[act]
        good = dst == self.known_dst[act]
        src_xy = self.pos[act]
        dst_xy = self.pos[np.where(dst >= 0, dst, self.known_dst[act])]
        dist = np.linalg.norm(src_xy[:, None] - dst_xy[None], axis=-1)
        g = pair_gains(dist, p)
        gamma = np.array([plans[l].gamma_star for l in act])
        planned = np.array([plans[l].planned_sinr for l in act])
        ua = u[act]
        tx = ua * gamma[:, None]
        rx = g.T @ tx
        own = np.diag(g)[:, None] * tx
        sinr = own / (p.n0 + rx - own)
        if self.remote_samples is not None:
            far = dist > self.sc.d0()
            remote = (g * far).T @ tx
            self.remote_samples.append(remote[ua] * self.sc.d0() ** p.alpha / (p.c * p.gamma_max))
        ok = ua & (sinr >= planned[:, None] * (1 - 1e-9)) & good[:, None]
        with np.errstate(invalid="ignore", divide="ignore"):
            margin = np.where(ua, sinr / planned[:, None], np.inf)
        self.stats["min_sinr_margin"] = min(self.stats["min_sinr_margin"], float(margin.min()))
        slot = self.fr.slot_s
        n_tx = ua.sum(axis=1)
        n_ok = ok.sum(axis=1)
        per_slot = np.array([plans[l].planned_rate for l in act]) * p.bandwidth * slot
        cap = n_ok * per_slot
        sent = np.minimum(cap, self.queue[act])
        bits[act] = sent
        self.queue[act] -= sent
        self.known_queue[act] = np.maximum(self.known_queue[act] - sent, 0.0)
        self.delivered_total += float(sent.sum())
        # circuit power of both ends is charged through their awake time
        energy_data[act] += n_tx * slot * p.g_a * gamma * 1e-3
        np.add.at(awake_data, act, n_tx * slot)
        np.add.at(awake_data, self.known_dst[act], n_tx * slot)
        sinr_db = 10 * np.log10(sinr[ua]) if ua.any() else np.array([math.nan])
        return bits, int(n_tx.sum()), int(n_tx.sum() - n_ok.sum()), float(np.mean(sinr_db))

    def run(self) -> SimResult:
        sc, fr, p = self.sc, self.fr, self.p
        F, N, C = sc.n_frames, self.N, self.C
        slot = fr.slot_s
        bits_log = np.zeros((F, N))
        len_log = np.zeros((F, N))
        inner_log = np.zeros((F, N), dtype=bool)
        energy_log = np.zeros((F, N + C))
        node_inner = np.zeros((F, N + C), dtype=bool)
        inner_cells = self.grid.inner
        coord_inner = inner_cells.copy()
        rows = []
        next_report = sc.report_period
        for f in range(F):
            t0 = f * fr.frame_s
            if f > 0:
                self._move(fr.frame_s)
            if sc.max_speed > 0 and t0 + 1e-12 >= next_report:
                self.need_report[:] = True
                next_report += sc.report_period
            self._arrivals()
            awake = np.zeros(N)
            tx_j = np.zeros(N)
            self._contention(awake, tx_j)
            u, plans, by = self._schedule()
            cell = self.grid.locate(self.pos)
            # every node listens to its own cell's scheduling slot, sources also
            # to the slot of the coordinator that scheduled them
            awake += np.where(cell >= 0, slot, 0.0)
            awake += np.where((by >= 0) & (by != cell), slot, 0.0)
            e_data = np.zeros(N)
            data_awake = np.zeros(N)
            bits, n_tx, n_fail, mean_db = self._transmit(u, plans, e_data, data_awake)
            self.stats["scheduled_tx"] += n_tx
            self.stats["failed_tx"] += n_fail
            node_time = fr.frame_s
            active_time = np.minimum(awake + data_awake, node_time)
            e_nodes = p.gamma_c * active_time + tx_j + e_data + p.gamma_0 * (node_time - active_time)
            ctrl = (fr.contention_slots + fr.scheduling_slots) * slot
            e_coord = np.full(C, p.gamma_c * ctrl + p.g_a * p.gamma_max * 1e-3 * slot
                              + p.gamma_0 * (node_time - ctrl))
            energy_log[f, :N] = e_nodes
            energy_log[f, N:] = e_coord
            node_in = (cell >= 0) & inner_cells[np.maximum(cell, 0)]
            node_inner[f, :N] = node_in
            node_inner[f, N:] = coord_inner
            bits_log[f] = bits
            has = self.dst >= 0
            len_log[f, has] = np.linalg.norm(self.pos[has] - self.pos[self.dst[has]], axis=1)
            inner_log[f] = node_in
            occ = int(u.any(axis=0).sum())
            rows.append(dict(frame=f, occupied_slots=occ, transmissions=n_tx, failures=n_fail,
                             delivered_bits=float(bits.sum()), mean_sinr_db=_r(mean_db),
                             energy_j=float(e_nodes.sum() + e_coord.sum())))
        trace = Trace(duration=F * fr.frame_s, bandwidth=p.bandwidth, data_fraction=fr.data_fraction,
                      inner_area=self.grid.area(inner_cells), total_area=self.grid.area(),
                      src_node=np.arange(N), bits=bits_log, length=len_log, src_inner=inner_log,
                      energy=energy_log, node_inner=node_inner,
                      generated_bits=self.generated if not self.saturated else 0.0,
                      queued_bits=0.0 if self.saturated else float(self.queue.sum()),
                      frame_rows=rows)
        self.stats["delivered_bits"] = self.delivered_total
        self.stats["generated_bits"] = trace.generated_bits
        self.stats["queued_bits"] = trace.queued_bits
        self.stats["links"] = int((self.dst >= 0).sum())
        self.stats["i0_mw"] = self.i0 - p.n0
        g_max = maximize_G(self.cfg)[1]
        return SimResult(trace=trace, metrics=report(trace, p.alpha, "inner", g_max=g_max),
                         scenario=sc, stats=self.stats)


def _r(x: float) -> float:
    return float("nan") if x != x else round(float(x), 9)


def run_simulation(scenario: SimScenario, placement=None) -> SimResult:
    """Simulate ``scenario`` and return its trace and inner-region metrics.

    ``placement`` fixes node positions and destinations (see :class:`Layout`).
    """
    return _Simulation(scenario, placement).run()


def measure_remote_interference(scenario: SimScenario) -> np.ndarray:
    """Empirical ``c0`` samples: for every scheduled (link, slot), the real
    interference from sources farther than ``d0`` divided by
    ``c * gamma_max * d0^-alpha``."""
    sim = _Simulation(scenario)
    sim.remote_samples = []
    sim.run()
    return np.concatenate(sim.remote_samples) if sim.remote_samples else np.zeros(0)
