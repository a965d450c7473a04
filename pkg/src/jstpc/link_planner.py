"""Per-link transmit power and target interference assignment.

Each link gets a power ``gamma_star`` (mW) and a target interference
``i_target`` (mW) chosen to maximise the lattice area efficiency at the
resulting SINR, under an energy-per-bit cap ``theta * min E``.  In the
proposed mode every link sits on the hyperbola ``gamma * I = lam``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .core_model import RadioParams, channel_gain
from .hex_asymptotic import Infeasible, LatticeConfig, inverse_table

__all__ = [
    "PlannerMode", "LinkPlan", "Infeasible", "default_lambda", "min_separation",
    "min_energy_per_bit", "plan_link", "plan_links", "equal_product_optimality",
    "equal_product_scales",
]

_REL = 1e-12


class PlannerMode(str, enum.Enum):
    PROPOSED = "proposed"
    MAX_POWER = "max_power"
    MIN_INTERFERENCE = "min_interference"
    ARBITRARY = "arbitrary"
    FIXED_LAMBDA = "fixed_lambda"


@dataclass(frozen=True)
class LinkPlan:
    link: int
    d_ll: float
    gamma_star: float
    i_target: float
    planned_sinr: float
    planned_rate: float
    energy_per_bit: float
    area_efficiency: float
    theta: float
    lam: float
    mode: PlannerMode

    @property
    def sinr_db(self) -> float:
        return 10.0 * math.log10(self.planned_sinr)


def default_lambda(params: RadioParams) -> float:
    return params.gamma_max * params.i_min


def min_separation(gamma_i, i_target_j, params: RadioParams):
    """Smallest source-i to destination-j distance that keeps the
    interference from i at or below j's target."""
    return (params.c * np.asarray(gamma_i, dtype=float) / np.asarray(i_target_j, dtype=float)) ** (1.0 / params.alpha)


def _energy(gamma, eta, params):
    return (2.0 * params.gamma_c + params.g_a * gamma * 1e-3) / np.log2(1.0 + eta)


def _in_box(x, lo, hi):
    return (x >= lo * (1 - _REL)) & (x <= hi * (1 + _REL))


def _with_breakpoints(grid, points, lo, hi):
    pts = np.asarray([p for p in points if np.isfinite(p) and lo * (1 - _REL) <= p <= hi * (1 + _REL)])
    return np.unique(np.clip(np.concatenate([grid, pts]), lo, hi))


def _candidates(mode: PlannerMode, d_ll: float, lam: float, params: RadioParams, n: int):
    """Candidate (gamma, I) pairs searched by a mode."""
    h = channel_gain(d_ll, params)
    p = params
    if mode in (PlannerMode.PROPOSED, PlannerMode.FIXED_LAMBDA):
        # On gamma * I = lam the SINR is h gamma^2 / lam.
        brk = [lam / p.i_min, lam / p.i_max, math.sqrt(p.eta_min * lam / h), math.sqrt(p.eta_max * lam / h)]
        g = _with_breakpoints(np.geomspace(p.gamma_min, p.gamma_max, n), brk, p.gamma_min, p.gamma_max)
        return g, lam / g
    if mode is PlannerMode.MAX_POWER:
        brk = [h * p.gamma_max / p.eta_min, h * p.gamma_max / p.eta_max]
        i = _with_breakpoints(np.geomspace(p.i_min, p.i_max, n), brk, p.i_min, p.i_max)
        return np.full_like(i, p.gamma_max), i
    if mode is PlannerMode.MIN_INTERFERENCE:
        brk = [p.eta_min * p.i_min / h, p.eta_max * p.i_min / h]
        g = _with_breakpoints(np.geomspace(p.gamma_min, p.gamma_max, n), brk, p.gamma_min, p.gamma_max)
        return g, np.full_like(g, p.i_min)
    if mode is PlannerMode.ARBITRARY:
        side = max(16, int(math.sqrt(n)) * 2)
        g, i = np.meshgrid(np.geomspace(p.gamma_min, p.gamma_max, side),
                           np.geomspace(p.i_min, p.i_max, side), indexing="ij")
        return g.ravel(), i.ravel()
    raise ValueError(f"unknown planner mode {mode!r}")


def _box_feasible(gamma, i_t, eta, params, table):
    ok = _in_box(i_t, params.i_min, params.i_max)
    ok_eta = ok & _in_box(eta, params.eta_min, params.eta_max)
    ok_eta &= (eta >= table.f_lo) & (eta <= table.f_hi)
    return ok, ok_eta


def min_energy_per_bit(d_ll: float, params: RadioParams, lam: float | None = None,
                       grid_points: int = 200, mode: PlannerMode | None = None) -> float:
    """Lowest energy per bit (J/(bit/Hz)) a link of length ``d_ll`` can reach.

    Without ``lam`` (and ``mode``) this is a brute force over a
    ``grid_points`` x ``grid_points`` log grid of the (gamma, I) box.  With a
    mode, the minimum is taken over that mode's own candidate set, so a
    plan with ``theta = 1`` is always attainable.
    """
    if not 0 < d_ll <= params.d_max * (1 + _REL):
        raise ValueError("link length outside (0, d_max]")
    h = channel_gain(d_ll, params)
    if mode is None and lam is None:
        g, i = np.meshgrid(np.geomspace(params.gamma_min, params.gamma_max, grid_points),
                           np.geomspace(params.i_min, params.i_max, grid_points), indexing="ij")
        g, i = g.ravel(), i.ravel()
    else:
        mode = mode or PlannerMode.PROPOSED
        g, i = _candidates(mode, d_ll, lam if lam is not None else default_lambda(params), params, grid_points)
    eta = h * g / i
    ok = _in_box(i, params.i_min, params.i_max) & _in_box(eta, params.eta_min, params.eta_max)
    if not ok.any():
        raise Infeasible(f"no (gamma, I) reaches SINR >= eta_min at d={d_ll:g} m")
    return float(np.min(_energy(g[ok], eta[ok], params)))


def plan_link(d_ll: float, theta: float = math.inf, lam: float | None = None,
              mode: PlannerMode = PlannerMode.PROPOSED, params: RadioParams | None = None,
              cfg: LatticeConfig | None = None, rng: np.random.Generator | None = None,
              link: int = 0, gamma_points: int = 400) -> LinkPlan:
    """Choose (gamma*, I*) for one link.

    Raises :class:`Infeasible` naming the first constraint that empties the
    candidate set.
    """
    params = params or RadioParams()
    cfg = cfg or LatticeConfig(alpha=params.alpha)
    mode = PlannerMode(mode)
    if not 0 < d_ll <= params.d_max * (1 + _REL):
        raise ValueError("link length outside (0, d_max]")
    if theta < 1:
        raise ValueError("theta must be >= 1")
    if mode is PlannerMode.FIXED_LAMBDA and lam is None:
        raise ValueError("fixed-lambda mode needs an explicit lam")
    lam = default_lambda(params) if lam is None else float(lam)
    table = inverse_table(cfg)
    h = channel_gain(d_ll, params)

    g, i = _candidates(mode, d_ll, lam, params, gamma_points)
    eta = h * g / i
    ok_box, ok = _box_feasible(g, i, eta, params, table)
    if not ok_box.any():
        raise Infeasible(f"target interference bounds: no candidate in [i_min, i_max] (d={d_ll:g} m, lam={lam:g})")
    if not ok.any():
        raise Infeasible(f"SINR bounds: no candidate in [eta_min, eta_max] (d={d_ll:g} m)")
    E = np.full_like(g, np.inf)
    E[ok] = _energy(g[ok], eta[ok], params)
    if math.isfinite(theta):
        e_cap = theta * float(E[ok].min())
        ok &= E <= e_cap * (1 + _REL)
        if not ok.any():
            raise Infeasible(f"energy per bit cap theta*minE (d={d_ll:g} m)")

    obj = np.full_like(g, -np.inf)
    obj[ok] = table.area_efficiency(eta[ok]) / (d_ll * d_ll)
    if mode is PlannerMode.ARBITRARY:
        rng = rng if rng is not None else np.random.default_rng()
        k = int(rng.choice(np.flatnonzero(ok)))
    else:
        # np.argmax keeps the first maximum, i.e. the smallest power.
        k = int(np.argmax(obj))
    return LinkPlan(link=link, d_ll=float(d_ll), gamma_star=float(g[k]), i_target=float(i[k]),
                    planned_sinr=float(eta[k]), planned_rate=float(np.log2(1 + eta[k])),
                    energy_per_bit=float(E[k]), area_efficiency=float(obj[k]), theta=float(theta),
                    lam=lam, mode=mode)


def plan_links(lengths, theta: float = math.inf, lam: float | None = None,
               mode: PlannerMode = PlannerMode.PROPOSED, params: RadioParams | None = None,
               cfg: LatticeConfig | None = None, rng: np.random.Generator | None = None) -> list[LinkPlan]:
    """Plan every link independently; ``rng`` is only used by the arbitrary mode."""
    return [plan_link(float(d), theta, lam, mode, params, cfg, rng, link=k) for k, d in enumerate(lengths)]


def equal_product_scales(gamma1, i1, gamma2, i2):
    """SINR-preserving scalings (s1, s2) with s1^2 gamma1 I1 = s2^2 gamma2 I2, s1 = 1."""
    return 1.0, math.sqrt(gamma1 * i1 / (gamma2 * i2))


def equal_product_optimality(gamma1, i1, gamma2, i2, scale1, scale2, params: RadioParams):
    """Worst-case squared separation requirement of a two-link pair after
    scaling each link's power and target by the same factor.

    Returns ``max((c g1'/I2')^(2/alpha), (c g2'/I1')^(2/alpha))``.  Vectorised
    over the scale arguments.
    """
    s1 = np.asarray(scale1, dtype=float)
    s2 = np.asarray(scale2, dtype=float)
    a = (params.c * s1 * gamma1 / (s2 * i2)) ** (2.0 / params.alpha)
    b = (params.c * s2 * gamma2 / (s1 * i1)) ** (2.0 / params.alpha)
    return np.maximum(a, b)
