"""Symmetric hexagonal-lattice analysis of concurrent links.

One link of length ``d`` is scheduled in every hexagonal cell of an unbounded
plane; ``r_g`` is the cell circumradius and every quantity depends only on
``r' = r_g / d``.  The lattice interference sum is evaluated as a direct sum
over an index box plus a continuum correction for the lattice points outside
it, which is accurate to O(M^-3).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy.interpolate import PchipInterpolator

from .core_model import RadioParams

SQRT3 = math.sqrt(3.0)
# Area of a hexagon with unit circumradius.
HEX_AREA = 1.5 * SQRT3
LN2 = math.log(2.0)

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(96)


class Infeasible(ValueError):
    """No grid point satisfies the constraints."""


@dataclass(frozen=True)
class LatticeConfig:
    """Lattice sum settings.

    ``reference_radius`` is the index bound of the lattice being modelled;
    ``None`` means the infinite lattice.  The default matches a direct double
    sum over ``|m|, |n| <= 5000``.
    """

    alpha: float = 3.5
    truncation_radius: int = 64
    tail_tolerance: float = 1e-6
    reference_radius: int | None = 5000
    bracket: tuple[float, float] = (0.8, 16.0)

    def __post_init__(self):
        if not self.alpha > 2:
            raise ValueError("lattice interference diverges for alpha <= 2")
        if self.truncation_radius < 1:
            raise ValueError("truncation_radius must be >= 1")
        if not self.tail_tolerance > 0:
            raise ValueError("tail_tolerance must be > 0")
        if self.reference_radius is not None and self.reference_radius < self.truncation_radius:
            raise ValueError("reference_radius must be >= truncation_radius")


def _index_box(M: int):
    m, n = np.meshgrid(np.arange(-M, M + 1), np.arange(-M, M + 1), indexing="ij")
    keep = (m != 0) | (n != 0)
    return m[keep].astype(float), n[keep].astype(float)


@lru_cache(maxsize=16)
def _index_box_cached(M: int):
    return _index_box(M)


def interferer_distances(rg_over_d: float, M: int) -> np.ndarray:
    """Distances (in units of d) from the reference destination to every
    interfering source with lattice indices ``(m, n) in [-M, M]^2 \\ {(0, 0)}``."""
    if not rg_over_d > 0:
        raise ValueError("rg_over_d must be positive")
    m, n = _index_box(M)
    x = m * SQRT3 * rg_over_d + n * SQRT3 * rg_over_d / 2.0 - 1.0
    y = 1.5 * n * rg_over_d
    return np.hypot(x, y)


def _direct_terms(r, M, alpha, derivative=False):
    """Direct sum over the index box, vectorised over ``r``."""
    m, n = _index_box_cached(M)
    a = m * SQRT3 + n * SQRT3 / 2.0
    b = 1.5 * n
    r = np.atleast_1d(np.asarray(r, dtype=float))
    total = np.empty_like(r)
    dtotal = np.empty_like(r) if derivative else None
    chunk = max(1, 2_000_000 // len(m))
    for s in range(0, len(r), chunk):
        rr = r[s:s + chunk, None]
        x = a * rr - 1.0
        y = b * rr
        q = x * x + y * y
        p = q ** (-alpha / 2.0)
        total[s:s + chunk] = p.sum(axis=1)
        if derivative:
            dq = 2.0 * x * a + 2.0 * y * b
            dtotal[s:s + chunk] = (-alpha / 2.0 * p / q * dq).sum(axis=1)
    return total, dtotal


def _exterior_integral(r, h, alpha):
    """Continuum estimate of the lattice sum outside the index box of half
    extent ``h`` (in index units), vectorised over ``r``."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    a1 = np.stack([SQRT3 * r, np.zeros_like(r)], axis=-1)
    a2 = np.stack([SQRT3 * r / 2.0, 1.5 * r], axis=-1)
    verts = [h * (a1 + a2), h * (-a1 + a2), h * (-a1 - a2), h * (a1 - a2)]
    p = np.array([1.0, 0.0])
    total = np.zeros_like(r)
    for i in range(4):
        A = verts[i] - p
        B = verts[(i + 1) % 4] - p
        th0 = np.arctan2(A[:, 1], A[:, 0])
        dth = np.mod(np.arctan2(B[:, 1], B[:, 0]) - th0, 2 * math.pi)
        e = B - A
        nrm = np.stack([e[:, 1], -e[:, 0]], axis=-1) / np.linalg.norm(e, axis=-1, keepdims=True)
        proj = np.sum(A * nrm, axis=-1)
        hd = np.abs(proj)
        nrm = nrm * np.sign(proj)[:, None]
        phi = np.arctan2(nrm[:, 1], nrm[:, 0])
        th = th0[:, None] + (0.5 * (_GL_NODES + 1.0))[None, :] * dth[:, None]
        rho = hd[:, None] / np.cos(th - phi[:, None])
        total += 0.5 * dth * np.sum(_GL_WEIGHTS * rho ** (2.0 - alpha), axis=1)
    return total / ((alpha - 2.0) * HEX_AREA * r * r)


def _lattice_sum_at(r, alpha, M, reference):
    direct, _ = _direct_terms(r, M, alpha)
    tail = _exterior_integral(r, M + 0.5, alpha)
    if reference is not None:
        tail = tail - _exterior_integral(r, reference + 0.5, alpha)
    return direct + tail


_PROBE_R = (0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0, 16.0)


@lru_cache(maxsize=64)
def effective_truncation(cfg: LatticeConfig) -> int:
    """Smallest doubling of ``cfg.truncation_radius`` whose estimated error
    is below ``cfg.tail_tolerance`` on a probe set of spacings."""
    M = cfg.truncation_radius
    probe = np.array(_PROBE_R)
    while True:
        if cfg.reference_radius is not None and M >= cfg.reference_radius:
            return cfg.reference_radius
        fine = _lattice_sum_at(probe, cfg.alpha, M, cfg.reference_radius)
        coarse = _lattice_sum_at(probe, cfg.alpha, max(1, M // 2), cfg.reference_radius)
        # The corrected sum converges as M^-3, so the error at M is about
        # a seventh of the change from M/2.
        err = np.max(np.abs(fine - coarse) / fine) / 7.0
        if err < cfg.tail_tolerance:
            return M
        M *= 2


def lattice_sum(rg_over_d, cfg: LatticeConfig):
    """Normalised interference sum, i.e. 1/F."""
    r = np.asarray(rg_over_d, dtype=float)
    if np.any(r <= 0):
        raise ValueError("rg_over_d must be positive")
    M = effective_truncation(cfg)
    if cfg.reference_radius is not None and M >= cfg.reference_radius:
        out = _direct_terms(r, M, cfg.alpha)[0]
    else:
        out = _lattice_sum_at(r, cfg.alpha, M, cfg.reference_radius)
    return float(out[0]) if r.ndim == 0 else out.reshape(r.shape)


def lattice_F(rg_over_d, cfg: LatticeConfig):
    """Interference-limited SINR of the symmetric lattice schedule."""
    return 1.0 / lattice_sum(rg_over_d, cfg)


def lattice_F_prime(rg_over_d, cfg: LatticeConfig):
    """dF/dr' from term-wise differentiation of the lattice sum.

    The tail correction is a smooth, tiny part of the sum and is
    differentiated by central differences.
    """
    r = np.atleast_1d(np.asarray(rg_over_d, dtype=float))
    M = effective_truncation(cfg)
    direct, ddirect = _direct_terms(r, M, cfg.alpha, derivative=True)
    total = direct.copy()
    dtotal = ddirect.copy()
    if not (cfg.reference_radius is not None and M >= cfg.reference_radius):
        def tail(x):
            t = _exterior_integral(x, M + 0.5, cfg.alpha)
            if cfg.reference_radius is not None:
                t = t - _exterior_integral(x, cfg.reference_radius + 0.5, cfg.alpha)
            return t
        h = 1e-4 * r
        total += tail(r)
        dtotal += (tail(r + h) - tail(r - h)) / (2 * h)
    out = -dtotal / total**2
    return float(out[0]) if np.ndim(rg_over_d) == 0 else out


def lattice_G(rg_over_d, cfg: LatticeConfig):
    """Area spectral efficiency log2(1+F) / (hex area), for unit link length."""
    r = np.asarray(rg_over_d, dtype=float)
    return np.log2(1.0 + lattice_F(r, cfg)) / (HEX_AREA * r * r)


def spectral_density(rg, d, cfg: LatticeConfig):
    """Rate per unit area (bit/s/Hz/m^2) for cell circumradius ``rg`` and link length ``d``."""
    return lattice_G(np.asarray(rg, dtype=float) / d, cfg) / (d * d)


def lattice_F_inverse(eta: float, cfg: LatticeConfig, tol: float = 1e-8) -> float:
    """Spacing r' with F(r') = eta, by bisection over ``cfg.bracket``."""
    lo, hi = cfg.bracket
    f_lo, f_hi = lattice_F(lo, cfg), lattice_F(hi, cfg)
    if not f_lo <= eta <= f_hi:
        raise ValueError(f"SINR {eta} outside attainable range [{f_lo}, {f_hi}]")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if lattice_F(mid, cfg) < eta:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class InverseTable:
    """Vectorised F^-1 from a dense log-log monotone interpolant.

    Used where F^-1 is needed for many SINR values at once (link planning).
    Agreement with :func:`lattice_F_inverse` is checked by the test suite.
    """

    def __init__(self, cfg: LatticeConfig, points: int = 2049):
        lo, hi = cfg.bracket
        self.cfg = cfg
        self.r = np.geomspace(lo, hi, points)
        self.f = lattice_F(self.r, cfg)
        if np.any(np.diff(self.f) <= 0):
            raise ValueError("F is not increasing on the bracket")
        self.f_lo, self.f_hi = float(self.f[0]), float(self.f[-1])
        self._interp = PchipInterpolator(np.log(self.f), np.log(self.r))

    def __call__(self, eta):
        eta = np.asarray(eta, dtype=float)
        if np.any(eta < self.f_lo * (1 - 1e-12)) or np.any(eta > self.f_hi * (1 + 1e-12)):
            raise ValueError("SINR outside attainable range of the bracket")
        return np.exp(self._interp(np.log(eta)))

    def area_efficiency(self, eta):
        """G(F^-1(eta)): rate per unit area for unit link length at SINR eta."""
        eta = np.asarray(eta, dtype=float)
        return np.log2(1.0 + eta) / (HEX_AREA * self(eta) ** 2)


@lru_cache(maxsize=16)
def inverse_table(cfg: LatticeConfig) -> InverseTable:
    return InverseTable(cfg)


def maximize_G(cfg: LatticeConfig, lo: float = 0.8, hi: float = 6.0, grid_points: int = 521,
               refine: bool = True) -> tuple[float, float]:
    """Maximiser and maximum of G on [lo, hi]: grid search, then optional
    golden-section refinement inside the bracketing grid cells."""
    rs = np.linspace(lo, hi, grid_points)
    g = lattice_G(rs, cfg)
    i = int(np.argmax(g))
    if not refine:
        return float(rs[i]), float(g[i])
    a, b = rs[max(i - 1, 0)], rs[min(i + 1, len(rs) - 1)]
    return golden_section_max(lambda x: float(lattice_G(x, cfg)), a, b)


def golden_section_max(f, a: float, b: float, tol: float = 1e-10) -> tuple[float, float]:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def asymptotic_energy_per_bit(gamma, rg_over_d, params: RadioParams, cfg: LatticeConfig):
    """Energy per bit (J/(bit/Hz)) of the lattice schedule; ``gamma`` in mW."""
    num = 2.0 * params.gamma_c + params.g_a * np.asarray(gamma, dtype=float) * 1e-3
    return num / np.log2(1.0 + lattice_F(rg_over_d, cfg))


@dataclass(frozen=True)
class AsymptoticGrid:
    """Brute-force grid: log-spaced powers (mW) and linear spacings (units of d)."""

    gamma_points: int = 200
    rg_points: int = 300
    rg_over_d: tuple[float, float] = (1.0, 4.0)
    d: float = 1.0
    refine: bool = False


@dataclass
class AsymptoticSolution:
    gamma_star: float
    rg_star: float
    spectral_density: float
    energy_per_bit: float
    sinr: float
    d: float = 1.0
    grid_index: tuple[int, int] = field(default=(0, 0))

    @property
    def rg_over_d(self) -> float:
        return self.rg_star / self.d


class _GridTables(NamedTuple):
    gammas: np.ndarray
    rgs: np.ndarray
    F: np.ndarray
    R: np.ndarray


@lru_cache(maxsize=32)
def _grid_tables(params: RadioParams, grid: AsymptoticGrid, cfg: LatticeConfig) -> _GridTables:
    gammas = np.geomspace(params.gamma_min, params.gamma_max, grid.gamma_points)
    rgs = np.linspace(grid.rg_over_d[0] * grid.d, grid.rg_over_d[1] * grid.d, grid.rg_points)
    F = lattice_F(rgs / grid.d, cfg)
    R = np.log2(1.0 + F) / (HEX_AREA * rgs**2)
    return _GridTables(gammas, rgs, F, R)


def solve_asymptotic(e_hat: float, params: RadioParams, grid: AsymptoticGrid = AsymptoticGrid(),
                     cfg: LatticeConfig | None = None) -> AsymptoticSolution:
    """Maximise rate per unit area subject to an energy-per-bit cap and the
    minimum SINR, by brute force over the (gamma, r_g) grid.

    Ties go to the smaller r_g, then the smaller gamma.  Raises
    :class:`Infeasible` when no grid point meets both constraints.
    """
    cfg = cfg or LatticeConfig(alpha=params.alpha)
    t = _grid_tables(params, grid, cfg)
    E = (2.0 * params.gamma_c + params.g_a * t.gammas[:, None] * 1e-3) / np.log2(1.0 + t.F)[None, :]
    feasible = (E <= e_hat) & (t.F >= params.eta_min)[None, :]
    if not feasible.any():
        raise Infeasible(f"no grid point satisfies E <= {e_hat:g} and F >= eta_min")
    obj = np.where(feasible, np.broadcast_to(t.R, E.shape), -np.inf)
    gi, ri = np.nonzero(obj == obj.max())
    order = np.lexsort((gi, ri))
    gi, ri = int(gi[order[0]]), int(ri[order[0]])
    gamma, rg = float(t.gammas[gi]), float(t.rgs[ri])
    if grid.refine:
        gamma, rg = _refine(e_hat, params, grid, cfg, gamma, rg)
        F = float(lattice_F(rg / grid.d, cfg))
        R = float(math.log2(1 + F) / (HEX_AREA * rg * rg))
        Ev = float(asymptotic_energy_per_bit(gamma, rg / grid.d, params, cfg))
        return AsymptoticSolution(gamma, rg, R, Ev, F, grid.d, (gi, ri))
    return AsymptoticSolution(gamma, rg, float(t.R[ri]), float(E[gi, ri]), float(t.F[ri]),
                              grid.d, (gi, ri))


def _refine(e_hat, params, grid, cfg, gamma, rg):
    # With gamma fixed at its grid optimum the objective only depends on r_g;
    # the feasible r_g set is an interval, so refine its best point.
    d = grid.d
    lo, hi = grid.rg_over_d[0] * d, grid.rg_over_d[1] * d

    def feasible(x):
        F = float(lattice_F(x / d, cfg))
        return F >= params.eta_min and float(asymptotic_energy_per_bit(gamma, x / d, params, cfg)) <= e_hat

    x_unc, _ = golden_section_max(lambda x: float(spectral_density(x, d, cfg)), lo, hi)
    if feasible(x_unc):
        return gamma, x_unc
    # Constraint-limited: the feasible set lies above the boundary; bisect it.
    a, b = lo, rg
    if feasible(a):
        return gamma, a
    while b - a > 1e-10 * d:
        mid = 0.5 * (a + b)
        if feasible(mid):
            b = mid
        else:
            a = mid
    return gamma, b


def sweep_asymptotic(e_hats, params: RadioParams, grid: AsymptoticGrid = AsymptoticGrid(),
                     cfg: LatticeConfig | None = None) -> list[dict]:
    """Solve for each energy cap; infeasible caps give NaN rows."""
    rows = []
    for e in e_hats:
        try:
            s = solve_asymptotic(float(e), params, grid, cfg)
            rows.append(dict(e_hat=float(e), spectral_density=s.spectral_density,
                             energy_per_bit=s.energy_per_bit, gamma_star=s.gamma_star,
                             rg_star=s.rg_star, sinr=s.sinr, feasible=True))
        except Infeasible:
            rows.append(dict(e_hat=float(e), spectral_density=math.nan, energy_per_bit=math.nan,
                             gamma_star=math.nan, rg_star=math.nan, sinr=math.nan, feasible=False))
    return rows


class KKTResidual(NamedTuple):
    """Optimality residuals of the lattice problem at one point.

    Stationarity entries are projected onto the box of each variable, so a
    variable resting on a bound only counts a gradient pushing out of the box.
    """

    d_rg: float
    d_gamma: float
    slack_energy: float
    slack_sinr: float
    sign_violation: float
    primal_violation: float

    def max_abs(self) -> float:
        return max(abs(v) for v in self)


def _problem_gradients(rg, gamma, params, cfg, d):
    r = rg / d
    F = float(lattice_F(r, cfg))
    dF = float(lattice_F_prime(r, cfg)) / d
    logf = math.log2(1.0 + F)
    num = 2.0 * params.gamma_c + params.g_a * gamma * 1e-3
    df = dF / ((1.0 + F) * LN2) / (HEX_AREA * rg * rg) - 2.0 * logf / (HEX_AREA * rg**3)
    dg1_r = -num * dF / ((1.0 + F) * LN2 * logf**2)
    dg1_gamma = params.g_a * 1e-3 / logf
    dg2_r = -dF
    return F, num / logf, df, dg1_r, dg1_gamma, dg2_r


def _project(value, x, lo, hi, scale):
    at_lo = x <= lo + 1e-12 * scale
    at_hi = x >= hi - 1e-12 * scale
    if at_lo and value < 0:
        return 0.0
    if at_hi and value > 0:
        return 0.0
    return value


def kkt_residual(rg: float, gamma: float, mu1: float, mu2: float, params: RadioParams,
                 e_hat: float, cfg: LatticeConfig | None = None, d: float = 1.0,
                 rg_bounds: tuple[float, float] | None = None) -> KKTResidual:
    """KKT residuals of: max rate-per-area s.t. energy <= e_hat, F >= eta_min.

    Uses the convention grad f = mu1 grad g1 + mu2 grad g2 with constraints
    written g <= 0 and ``mu >= 0``.
    """
    cfg = cfg or LatticeConfig(alpha=params.alpha)
    lo, hi = rg_bounds or (cfg.bracket[0] * d, cfg.bracket[1] * d)
    F, E, df, dg1_r, dg1_gamma, dg2_r = _problem_gradients(rg, gamma, params, cfg, d)
    d_rg = _project(df - mu1 * dg1_r - mu2 * dg2_r, rg, lo, hi, d)
    d_gamma = _project(-mu1 * dg1_gamma, gamma, params.gamma_min, params.gamma_max, params.gamma_max)
    g1 = E - e_hat
    g2 = params.eta_min - F
    return KKTResidual(
        d_rg=d_rg,
        d_gamma=d_gamma,
        slack_energy=mu1 * g1,
        slack_sinr=mu2 * g2,
        sign_violation=max(0.0, -mu1) + max(0.0, -mu2),
        primal_violation=max(0.0, g1) + max(0.0, g2),
    )


def fit_multipliers(rg: float, gamma: float, params: RadioParams, e_hat: float,
                    cfg: LatticeConfig | None = None, d: float = 1.0,
                    active_tol: tuple[float, float] = (0.0, 0.0)) -> tuple[float, float]:
    """Least-squares multipliers for the constraints active within ``active_tol``
    (absolute slack in energy and SINR); inactive constraints get zero."""
    cfg = cfg or LatticeConfig(alpha=params.alpha)
    F, E, df, dg1_r, _, dg2_r = _problem_gradients(rg, gamma, params, cfg, d)
    cols, which = [], []
    if abs(E - e_hat) <= active_tol[0]:
        cols.append(dg1_r)
        which.append(0)
    if abs(params.eta_min - F) <= active_tol[1]:
        cols.append(dg2_r)
        which.append(1)
    mu = [0.0, 0.0]
    if cols:
        A = np.array(cols, dtype=float).reshape(1, -1)
        sol, *_ = np.linalg.lstsq(A, np.array([df]), rcond=None)
        for k, v in zip(which, sol):
            mu[k] = float(v)
    return mu[0], mu[1]
