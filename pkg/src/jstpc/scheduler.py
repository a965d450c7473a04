"""Sequential greedy link scheduling over a horizon of T slots.

At every step the scheduler admits the (link, slot) pair whose admission
brings interference closest to the planned targets, measured by

    (gamma*_l / gamma_hat_lt) * (I_hat_lt / I*_l)

where ``gamma_hat_lt`` is the largest power link l could use in slot t
without pushing any already scheduled link past its target, and
``I_hat_lt`` is the interference link l would already see there.  Scheduling
proceeds in rounds in which each link is granted at most one slot.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core_model import Topology
from .link_planner import LinkPlan


@dataclass
class StepRecord:
    round: int
    step: int
    link: int
    slot: int
    gamma_hat: float
    i_hat: float
    product: float


@dataclass
class ScheduleMatrix:
    u: np.ndarray
    gamma: np.ndarray
    log: list[StepRecord] = field(default_factory=list)

    @property
    def rounds(self) -> list[list[tuple[int, int, int]]]:
        out: list[list[tuple[int, int, int]]] = []
        for rec in self.log:
            while len(out) <= rec.round:
                out.append([])
            out[rec.round].append((rec.step, rec.link, rec.slot))
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["round", "step", "link", "slot", "gamma_hat", "i_hat", "product"])
            for r in self.log:
                w.writerow([r.round, r.step, r.link, r.slot, r.gamma_hat, r.i_hat, r.product])


class SchedulerState:
    """Partial schedule plus the bookkeeping the greedy rule needs.

    ``gains[k, l]`` is the gain from the source of link k to the destination
    of link l.  ``i0`` is an interference floor per destination that stands
    for transmitters the scheduler cannot see.  ``u0`` holds transmissions
    already fixed by someone else; they constrain admissions but are never
    changed.
    """

    def __init__(self, gains, gamma_star, i_target, T: int, i0=None, u0=None,
                 r_hat=None, max_slots=None, conflicts=None, candidates=None):
        self.gains = np.asarray(gains, dtype=float)
        L = self.gains.shape[0]
        self.L, self.T = L, int(T)
        self.gamma_star = np.asarray(gamma_star, dtype=float)
        self.i_target = np.asarray(i_target, dtype=float)
        self.i0 = np.zeros(L) if i0 is None else np.broadcast_to(np.asarray(i0, dtype=float), (L,)).copy()
        self.r_hat = np.full(L, np.inf) if r_hat is None else np.broadcast_to(np.asarray(r_hat, dtype=float), (L,)).copy()
        self.max_slots = np.full(L, self.T) if max_slots is None else np.broadcast_to(np.asarray(max_slots), (L,)).astype(int)
        self.candidates = np.ones(L, dtype=bool) if candidates is None else np.asarray(candidates, dtype=bool).copy()
        self.conflicts = None if conflicts is None else np.asarray(conflicts, dtype=bool)
        own = np.diag(self.gains)
        self.slot_rate = np.log2(1.0 + self.gamma_star * own / self.i_target)
        self.u = np.zeros((L, self.T), dtype=bool) if u0 is None else np.asarray(u0, dtype=bool).copy()
        tx = self.u * self.gamma_star[:, None]
        self.interference = self.gains.T @ tx - own[:, None] * tx
        self.slots_used = self.u.sum(axis=1)
        self.rate = self.slots_used * self.slot_rate / self.T
        self.step = 0
        self.gamma_hat = np.empty((L, self.T))
        for t in range(self.T):
            self._refresh_column(t)

    def _refresh_column(self, t: int) -> None:
        on = np.flatnonzero(self.u[:, t])
        if on.size == 0:
            self.gamma_hat[:, t] = np.inf
            return
        margin = self.i_target[on] - self.interference[on, t] - self.i0[on]
        with np.errstate(over="ignore", under="ignore"):
            col = np.min(margin[None, :] / self.gains[:, on], axis=1)
        self.gamma_hat[:, t] = col

    def i_hat(self) -> np.ndarray:
        return self.interference + self.i0[:, None]

    def admit(self, l: int, t: int) -> None:
        if self.u[l, t]:
            raise ValueError(f"link {l} already scheduled in slot {t}")
        self.u[l, t] = True
        contrib = self.gamma_star[l] * self.gains[l, :]
        contrib[l] = 0.0
        self.interference[:, t] += contrib
        self.slots_used[l] += 1
        self.rate[l] = self.slots_used[l] * self.slot_rate[l] / self.T
        self.step += 1
        self._refresh_column(t)

    def feasible(self, in_round: np.ndarray | None = None) -> np.ndarray:
        """Boolean L x T mask of pairs that may be admitted now."""
        ok = ~self.u
        ok &= self.gamma_hat >= self.gamma_star[:, None]
        ok &= self.i_hat() <= self.i_target[:, None]
        row = self.candidates & (self.slots_used < self.max_slots)
        row &= self.rate + self.slot_rate / self.T <= self.r_hat * (1 + 1e-12)
        if in_round is not None:
            row &= in_round
        ok &= row[:, None]
        if self.conflicts is not None and self.u.any():
            busy = (self.conflicts.astype(np.int64) @ self.u.astype(np.int64)) > 0
            ok &= ~busy
        return ok

    def products(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            p = (self.gamma_star[:, None] / self.gamma_hat) * (self.i_hat() / self.i_target[:, None])
        return np.where(np.isfinite(self.gamma_hat), p, 0.0)


def max_allowed_power(state: SchedulerState, l: int, t: int) -> float:
    """Largest source power for link l in slot t that keeps every link
    already scheduled in t at or under its target (inf for an empty slot)."""
    return float(state.gamma_hat[l, t])


def residual_interference(state: SchedulerState, l: int, t: int) -> float:
    """Interference link l would see in slot t, floor included (mW)."""
    return float(state.interference[l, t] + state.i0[l])


def greedy_step(state: SchedulerState, in_round: np.ndarray | None = None,
                rng: np.random.Generator | None = None):
    """Best admissible (link, slot), or ``None`` when nothing fits.

    With ``rng`` the pair is drawn uniformly from the admissible set instead.
    Ties in the greedy rule go to the smaller link, then the smaller slot.
    """
    ok = state.feasible(in_round)
    if not ok.any():
        return None
    if rng is not None:
        flat = np.flatnonzero(ok)
        k = int(flat[rng.integers(len(flat))])
    else:
        prod = np.where(ok, state.products(), -np.inf)
        k = int(np.argmax(prod))
    return divmod(k, state.T)


def run_rounds(state: SchedulerState, mode: str = "greedy", rng: np.random.Generator | None = None,
               max_links: int | None = None) -> list[StepRecord]:
    """Run scheduling rounds until a round admits nothing.

    ``max_links`` caps how many distinct candidate links may end up with at
    least one slot (links beyond the cap wait for a later horizon).
    """
    if mode not in ("greedy", "random"):
        raise ValueError(f"unknown scheduling mode {mode!r}")
    if mode == "random" and rng is None:
        raise ValueError("random mode needs an rng")
    log: list[StepRecord] = []
    rnd = 0
    while True:
        in_round = state.candidates.copy()
        if max_links is not None:
            holders = state.candidates & (state.slots_used > 0)
            if holders.sum() >= max_links:
                in_round &= holders
        admitted = 0
        while True:
            pick = greedy_step(state, in_round, rng if mode == "random" else None)
            if pick is None:
                break
            l, t = pick
            gh = float(state.gamma_hat[l, t])
            ih = float(state.interference[l, t] + state.i0[l])
            prod = 0.0 if math.isinf(gh) else state.gamma_star[l] / gh * ih / state.i_target[l]
            state.admit(l, t)
            log.append(StepRecord(rnd, state.step, l, t, gh, ih, prod))
            in_round[l] = False
            admitted += 1
            if max_links is not None:
                holders = state.candidates & (state.slots_used > 0)
                if holders.sum() >= max_links:
                    in_round &= holders
        if admitted == 0:
            return log
        rnd += 1


def node_conflicts(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Links sharing a node cannot be active in the same slot."""
    src = np.asarray(src)
    dst = np.asarray(dst)
    c = (src[:, None] == src[None, :]) | (src[:, None] == dst[None, :]) \
        | (dst[:, None] == src[None, :]) | (dst[:, None] == dst[None, :])
    np.fill_diagonal(c, False)
    return c


def build_schedule(topology: Topology, plans: Sequence[LinkPlan], T: int, r_hat=None,
                   mode: str = "greedy", seed: int | None = None, i0=None,
                   max_slots=None) -> ScheduleMatrix:
    """Schedule every planned link of ``topology`` over ``T`` slots."""
    gamma_star = np.array([p.gamma_star for p in plans])
    i_target = np.array([p.i_target for p in plans])
    state = SchedulerState(topology.gains, gamma_star, i_target, T, i0=i0, r_hat=r_hat,
                           max_slots=max_slots, conflicts=node_conflicts(topology.src, topology.dst))
    rng = np.random.default_rng(seed) if mode == "random" else None
    log = run_rounds(state, mode, rng)
    return ScheduleMatrix(u=state.u.copy(), gamma=state.u * gamma_star[:, None], log=log)


def total_planned_rate(schedule: ScheduleMatrix, plans: Sequence[LinkPlan], weights=None) -> float:
    """Weighted sum of per-link average planned rates (bit/s/Hz)."""
    rates = np.array([p.planned_rate for p in plans])
    w = np.ones_like(rates) if weights is None else np.asarray(weights, dtype=float)
    return float(np.sum(w * rates * schedule.u.mean(axis=1)))
