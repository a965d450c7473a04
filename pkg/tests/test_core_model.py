import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from jstpc.core_model import (RadioParams, Topology, channel_gain, dbm_to_mw, tradeoff_params,
                              link_energy_per_bit, link_slot_power, mw_to_dbm, shannon_rate, sinr)

P = RadioParams()


def test_table_defaults():
    assert P.c == 1e-4 and P.alpha == 3.4
    assert P.i_min == pytest.approx(1e-8) and P.i_max == pytest.approx(10 ** -4.5)
    assert P.eta_min == pytest.approx(10 ** 0.6) and P.eta_max == pytest.approx(1000.0)
    assert mw_to_dbm(P.n0) == pytest.approx(-111.0)


def test_dbm_round_trip():
    assert dbm_to_mw(0.0) == pytest.approx(1.0)
    assert mw_to_dbm(dbm_to_mw(-80.0)) == pytest.approx(-80.0)


def test_channel_gain_examples():
    assert channel_gain(1.0, P) == pytest.approx(1e-4)
    assert channel_gain(10.0, P) == pytest.approx(1e-4 * 10 ** -3.4)
    # 100 mW over the longest link lands well above the interference floor
    rx = 100.0 * channel_gain(20.0, P)
    assert rx == pytest.approx(3.7714e-7, rel=1e-4)
    assert rx > P.i_min * P.eta_min


def test_channel_gain_rejects_nonpositive():
    with pytest.raises(ValueError):
        channel_gain(0.0, P)


def test_sinr_examples():
    assert sinr(10.0, 0.0, 1.0) == 10.0
    assert sinr(1.0, 3.0, 1.0) == 0.25
    with pytest.raises(ValueError):
        sinr(-1.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        sinr(1.0, 0.0, 0.0)


def test_shannon_rate(golden):
    assert shannon_rate(1.0) == 1.0
    assert shannon_rate(3.0) == 2.0
    assert shannon_rate(0.0) == 0.0
    assert shannon_rate(10 ** 0.8) == pytest.approx(golden["oracle"]["rate_8db"], rel=1e-12)
    assert shannon_rate(10 ** 0.8) == pytest.approx(2.870, abs=5e-4)
    with pytest.raises(ValueError):
        shannon_rate(-0.1)


def test_link_slot_power_examples():
    assert link_slot_power(1, 100.0, P) == pytest.approx(3.5)
    assert link_slot_power(0, 100.0, P) == 0.0
    assert link_slot_power(1, 1.0, P) == pytest.approx(2.51)
    assert link_slot_power(0, 1.0, P.with_(gamma_0=0.05)) == pytest.approx(0.1)


def test_always_on_energy_per_bit():
    T = 7
    eta = 12.0
    e = link_energy_per_bit(np.ones(T), np.full(T, 40.0), np.full(T, eta), P)
    assert e == pytest.approx((2 * P.gamma_c + P.g_a * 0.04) / math.log2(1 + eta), rel=1e-14)
    assert link_energy_per_bit(np.zeros(T), np.zeros(T), np.zeros(T), P) == math.inf


def test_param_validation():
    with pytest.raises(ValueError):
        RadioParams(gamma_min=200.0)
    with pytest.raises(ValueError):
        RadioParams(alpha=-1.0)
    assert tradeoff_params().gamma_c == pytest.approx(1.25e-3)


def test_topology_gains_and_sinr():
    pos = np.array([[0.0, 0.0], [10.0, 0.0], [100.0, 0.0], [110.0, 0.0]])
    top = Topology(pos, [0, 2], [1, 3], P)
    assert top.link_lengths == pytest.approx([10.0, 10.0])
    assert top.gains[0, 1] == pytest.approx(channel_gain(110.0, P))
    assert top.gains[1, 0] == pytest.approx(channel_gain(90.0, P))
    u = np.array([[1, 1], [0, 1]])
    g = np.array([[50.0, 50.0], [0.0, 50.0]])
    s = top.slot_sinr(u, g)
    own = 50.0 * channel_gain(10.0, P)
    assert s[0, 0] == pytest.approx(own / P.n0)
    assert s[0, 1] == pytest.approx(own / (P.n0 + 50.0 * channel_gain(90.0, P)))
    assert s[1, 0] == 0.0
    with pytest.raises(ValueError):
        Topology(np.array([[0, 0], [30, 0]]), [0], [1], P)


@given(st.floats(0.1, 1e3), st.floats(0.1, 1e3))
def test_gain_reciprocity(a, b):
    d = math.hypot(a, b)
    assert channel_gain(d, P) == channel_gain(math.hypot(b, a), P)


@given(st.floats(1e-6, 1e3), st.floats(0.0, 1e3), st.floats(1e-6, 1.0), st.floats(1.01, 10.0))
def test_sinr_monotone(s, i, n, k):
    assert sinr(s, i * k + 1e-9, n) < sinr(s, i, n)
    assert sinr(s * k, i, n) > sinr(s, i, n)


@given(st.floats(0.0, 1e4), st.floats(1e-3, 1e4))
def test_rate_increasing_and_concave(x, h):
    r0, r1, r2 = shannon_rate(x), shannon_rate(x + h), shannon_rate(x + 2 * h)
    assert r1 > r0
    assert r1 - r0 >= r2 - r1 - 1e-12
