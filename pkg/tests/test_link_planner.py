import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from jstpc.core_model import RadioParams, channel_gain
from jstpc.hex_asymptotic import Infeasible, LatticeConfig, inverse_table
from jstpc.link_planner import (PlannerMode, default_lambda, equal_product_optimality,
                                equal_product_scales, min_energy_per_bit, min_separation, plan_link,
                                plan_links)

P = RadioParams()
CFG = LatticeConfig(alpha=P.alpha)
REL = 1e-9


def test_min_separation_examples(golden):
    unit = RadioParams(c=1.0, alpha=2.0)
    assert min_separation(4.0, 1.0, unit) == pytest.approx(2.0)
    assert min_separation(4.0 * 2 ** 2.0, 1.0, unit) == pytest.approx(4.0)
    assert min_separation(100.0, 1e-8, P) == pytest.approx(golden["oracle"]["min_separation_100mw_80dbm"], rel=1e-12)
    assert min_separation(100.0, 1e-8, P) == pytest.approx(58.1, abs=0.1)


@given(st.floats(1.0, 100.0), st.floats(1e-8, 1e-4), st.floats(1.1, 10.0))
def test_min_separation_homogeneous(g, i, k):
    assert min_separation(g * k ** P.alpha, i, P) == pytest.approx(k * min_separation(g, i, P), rel=1e-12)


def test_min_energy_golden(golden):
    assert min_energy_per_bit(10.0, P) == pytest.approx(golden["oracle"]["min_energy_per_bit_10m"], rel=1e-12)


def test_min_energy_non_decreasing_in_distance():
    e = [min_energy_per_bit(d, P) for d in np.linspace(1.0, 20.0, 39)]
    assert np.all(np.diff(e) >= -1e-12)


@pytest.mark.parametrize("d", [2.0, 3.0, 5.0])
def test_min_energy_sits_at_highest_sinr_when_reachable(d):
    # With circuit power dominating, the cheapest bits use the top SINR.
    g, i = np.meshgrid(np.geomspace(P.gamma_min, P.gamma_max, 200), np.geomspace(P.i_min, P.i_max, 200))
    eta = channel_gain(d, P) * g / i
    ok = (eta >= P.eta_min) & (eta <= P.eta_max * (1 + 1e-12))
    e = np.where(ok, (2 * P.gamma_c + P.g_a * g * 1e-3) / np.log2(1 + eta), np.inf)
    k = np.unravel_index(np.argmin(e), e.shape)
    step = (P.gamma_max / P.gamma_min) ** (1 / 199) * (P.i_max / P.i_min) ** (1 / 199)
    assert eta[k] >= P.eta_max / step
    assert e[k] == pytest.approx(min_energy_per_bit(d, P), rel=1e-12)


def test_min_energy_infeasible():
    far = P.with_(d_max=500.0)
    with pytest.raises(Infeasible):
        min_energy_per_bit(400.0, far)


def test_theta_one_short_link_uses_top_sinr():
    p = plan_link(5.0, theta=1.0)
    assert p.sinr_db == pytest.approx(30.0, abs=1e-9)


def test_theta_one_uses_highest_attainable_sinr():
    for d in (10.0, 15.0, 20.0):
        p = plan_link(d, theta=1.0)
        top = min(P.eta_max, channel_gain(d, P) * P.gamma_max / P.i_min)
        assert p.planned_sinr == pytest.approx(top, rel=1e-9)


def test_proposed_plan_on_hyperbola():
    lam = default_lambda(P)
    assert lam == pytest.approx(1e-6)
    for d in (2.0, 7.0, 13.0, 20.0):
        for th in (1.0, 1.5, math.inf):
            p = plan_link(d, th)
            assert p.gamma_star * p.i_target == pytest.approx(lam, rel=1e-12)


MODES = [PlannerMode.PROPOSED, PlannerMode.MAX_POWER, PlannerMode.MIN_INTERFERENCE, PlannerMode.ARBITRARY]


@given(st.floats(2.0, 20.0), st.one_of(st.just(math.inf), st.floats(1.0, 20.0)), st.sampled_from(MODES),
       st.integers(0, 2 ** 31))
def test_plan_box_and_energy_invariants(d, theta, mode, seed):
    p = plan_link(d, theta, mode=mode, rng=np.random.default_rng(seed))
    assert P.gamma_min * (1 - REL) <= p.gamma_star <= P.gamma_max * (1 + REL)
    assert P.i_min * (1 - REL) <= p.i_target <= P.i_max * (1 + REL)
    assert P.eta_min * (1 - REL) <= p.planned_sinr <= P.eta_max * (1 + REL)
    assert p.planned_sinr == pytest.approx(channel_gain(d, P) * p.gamma_star / p.i_target, rel=1e-12)
    e = (2 * P.gamma_c + P.g_a * p.gamma_star * 1e-3) / math.log2(1 + p.planned_sinr)
    assert e == pytest.approx(p.energy_per_bit, rel=1e-12)
    if math.isfinite(theta):
        assert e <= theta * min_energy_per_bit(d, P, mode=mode) * (1 + REL)
    if mode is PlannerMode.MAX_POWER:
        assert p.gamma_star == P.gamma_max
    if mode is PlannerMode.MIN_INTERFERENCE:
        assert p.i_target == P.i_min


@given(st.floats(2.0, 20.0))
def test_proposed_objective_dominates_hyperbola_grid(d):
    p = plan_link(d)
    lam = default_lambda(P)
    tab = inverse_table(CFG)
    g = np.geomspace(P.gamma_min, P.gamma_max, 1000)
    i = lam / g
    eta = channel_gain(d, P) * g / i
    ok = (i >= P.i_min) & (i <= P.i_max) & (eta >= P.eta_min) & (eta <= P.eta_max)
    ok &= (eta >= tab.f_lo) & (eta <= tab.f_hi)
    best = float(np.max(tab.area_efficiency(eta[ok]))) / d ** 2
    # the plan's own grid differs, so allow one grid step of slack
    assert p.area_efficiency >= best * (1 - 5e-3)


@given(st.floats(2.0, 20.0), st.floats(1.0, 4.0), st.floats(1.0, 4.0))
def test_objective_monotone_in_theta(d, t1, t2):
    lo, hi = sorted((t1, t2))
    assert plan_link(d, hi).area_efficiency >= plan_link(d, lo).area_efficiency * (1 - 1e-12)
    assert plan_link(d, math.inf).area_efficiency >= plan_link(d, hi).area_efficiency * (1 - 1e-12)


def test_arbitrary_mode_is_seeded():
    a = plan_link(8.0, mode="arbitrary", rng=np.random.default_rng(3))
    b = plan_link(8.0, mode="arbitrary", rng=np.random.default_rng(3))
    assert a == b


def test_fixed_lambda_requires_value_and_respects_it():
    with pytest.raises(ValueError):
        plan_link(5.0, mode=PlannerMode.FIXED_LAMBDA)
    p = plan_link(5.0, mode=PlannerMode.FIXED_LAMBDA, lam=3e-6)
    assert p.gamma_star * p.i_target == pytest.approx(3e-6, rel=1e-12)


def test_infeasible_names_constraint():
    with pytest.raises(Infeasible, match="target interference"):
        plan_link(5.0, lam=1e-12)
    with pytest.raises(ValueError):
        plan_link(25.0)
    with pytest.raises(ValueError):
        plan_link(5.0, theta=0.5)


def test_plan_links_ids():
    plans = plan_links([3.0, 9.0, 17.0])
    assert [p.link for p in plans] == [0, 1, 2]


def test_equal_product_examples():
    g1, i1, g2, i2 = 20.0, 1e-7, 80.0, 3e-6
    s1, s2 = equal_product_scales(g1, i1, g2, i2)
    assert s1 ** 2 * g1 * i1 == pytest.approx(s2 ** 2 * g2 * i2, rel=1e-12)
    a = (P.c * s1 * g1 / (s2 * i2)) ** (2 / P.alpha)
    b = (P.c * s2 * g2 / (s1 * i1)) ** (2 / P.alpha)
    assert a == pytest.approx(b, rel=1e-12)
    assert float(equal_product_optimality(g1, i1, g1, i1, 1.0, 1.0, P)) == pytest.approx(
        (P.c * g1 / i1) ** (2 / P.alpha))


@given(st.floats(1.0, 100.0), st.floats(1e-8, 1e-4), st.floats(1.0, 100.0), st.floats(1e-8, 1e-4))
def test_equal_products_minimise_worst_case(g1, i1, g2, i2):
    rng = np.random.default_rng(0)
    s1, s2 = equal_product_scales(g1, i1, g2, i2)
    best = float(equal_product_optimality(g1, i1, g2, i2, s1, s2, P))
    scales = np.exp(rng.uniform(-5, 5, size=(2, 500)))
    vals = equal_product_optimality(g1, i1, g2, i2, scales[0], scales[1], P)
    assert np.all(vals >= best * (1 - 1e-9))
