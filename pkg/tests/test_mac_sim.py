import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from golden_oracles import known_radius
from jstpc.core_model import RadioParams
from jstpc.link_planner import min_separation
from jstpc.mac_sim import (DEFAULT_C0, CellGrid, FrameConfig, SimScenario, _Simulation,
                           assign_scheduling_colors, coloring_is_valid, contend, load_scenario,
                           measure_remote_interference, remote_interference_floor, run_simulation,
                           scenario_from_mapping, scenario_seed, worst_case_c0)

P = RadioParams()
GRID = CellGrid()


# -- geometry ---------------------------------------------------------------

def test_grid_layout():
    assert GRID.n_cells == 19
    assert int(GRID.inner.sum()) == 7
    assert GRID.ra == pytest.approx(30.0)
    assert GRID.rn == pytest.approx(known_radius(20.0, 30.0))
    assert GRID.area(GRID.inner) == pytest.approx(7 * 1.5 * math.sqrt(3) * 400)
    assert np.array_equal(GRID.locate(GRID.centers), np.arange(19))
    assert GRID.locate([[500.0, 0.0]])[0] == -1


def test_sample_stays_inside():
    pts = GRID.sample(500, np.random.default_rng(0))
    assert pts.shape == (500, 2)
    assert np.all(GRID.locate(pts) >= 0)


def test_coloring_19_cells():
    c = assign_scheduling_colors(GRID)
    assert sorted(set(c.tolist())) == list(range(7))
    assert coloring_is_valid(GRID, c)
    assert not coloring_is_valid(GRID, np.zeros(19, dtype=int))


def test_coloring_single_cell():
    assert assign_scheduling_colors(CellGrid(rings=0)).tolist() == [0]


@given(st.floats(20.0, 200.0), st.floats(1.0, 1.7))
def test_colorings_always_valid(rg, k):
    g = CellGrid(rg=rg, ra=k * rg)
    assert coloring_is_valid(g, assign_scheduling_colors(g))


def test_grid_validation():
    with pytest.raises(ValueError):
        CellGrid(rg=20.0, ra=10.0)
    with pytest.raises(ValueError):
        SimScenario(grid=CellGrid(rg=10.0))
    with pytest.raises(ValueError):
        FrameConfig(data_slots=0)


def test_frame_defaults():
    f = FrameConfig()
    assert f.slots_per_frame == 100 and f.frame_s == pytest.approx(0.1)
    assert f.data_fraction == pytest.approx(0.9)
    assert f.scheduling_capacity == 30
    assert f.request_minislots == 6 and f.contention_minislots == 150


# -- remote interference ----------------------------------------------------

def test_worst_case_floor_golden(golden):
    o = golden["oracle"]
    d0 = GRID.rn - GRID.rg
    assert d0 == pytest.approx(o["d0_default"], rel=1e-12)
    assert worst_case_c0(d0, 20.0, P.alpha) == pytest.approx(o["worst_case_c0"], rel=1e-6)
    assert remote_interference_floor(d0, 20.0, P) == pytest.approx(o["worst_case_i0_mw"], rel=1e-6)
    assert SimScenario(c0="worst_case").i0() == pytest.approx(o["worst_case_i0_mw"], rel=1e-6)


@given(st.floats(5.0, 200.0), st.floats(1.01, 3.0))
def test_floor_decreasing_in_distance(d0, k):
    assert remote_interference_floor(d0 * k, 20.0, P, c0=1.0) < remote_interference_floor(d0, 20.0, P, c0=1.0)


def test_floor_linear_in_power():
    d0 = 34.5
    a = remote_interference_floor(d0, 20.0, P, c0=2.0, gamma=50.0)
    assert remote_interference_floor(d0, 20.0, P, c0=2.0, gamma=100.0) == pytest.approx(2 * a)
    assert SimScenario().i0() == pytest.approx(DEFAULT_C0 * P.gamma_max * P.c * d0 ** 0 * (GRID.rn - 20) ** -P.alpha)
    with pytest.raises(ValueError):
        worst_case_c0(30.0, 20.0, 2.0)


# -- contention ---------------------------------------------------------------

def test_contend_single_and_collision():
    rng = np.random.default_rng(0)
    ok, awake, cw = contend(np.array([4]), np.array([15]), rng, 150, 6, 1023)
    assert ok.tolist() == [True] and cw.tolist() == [-1] and awake[0] <= 15 + 6
    ok, awake, cw = contend(np.array([1, 2]), np.array([0, 0]), rng, 150, 6, 1023)
    assert ok.tolist() == [False, False] and cw.tolist() == [1, 1]
    ok, awake, cw = contend(np.array([1]), np.array([1023]), np.random.default_rng(1), 5, 6, 1023)
    assert not ok[0] and awake[0] == 5


# -- scenarios --------------------------------------------------------------

def test_scenario_round_trip(tmp_path):
    sc = SimScenario(n_nodes=30, load_bps=1e6, theta=2.0, max_speed=1.0)
    path = tmp_path / "s.json"
    path.write_text(json.dumps(sc.to_dict()))
    assert load_scenario(path) == sc


def test_scenario_errors(tmp_path):
    with pytest.raises(ValueError, match="unknown key 'nodes'"):
        scenario_from_mapping({"nodes": 3})
    with pytest.raises(ValueError, match="grid: unknown key 'radius'"):
        scenario_from_mapping({"grid": {"radius": 3}})
    with pytest.raises(ValueError, match="rg must be >= d_max"):
        scenario_from_mapping({"grid": {"rg": 10.0}})
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "n_nodes": 10,\n  "seed": \n}')
    with pytest.raises(ValueError, match=r"bad.json:4:1"):
        load_scenario(bad)
    assert scenario_from_mapping({"theta": "inf"}).theta == math.inf


def test_seed_env_override(monkeypatch):
    monkeypatch.setenv("JSTPC_SEED", "7")
    assert scenario_seed(SimScenario()).seed == 7
    monkeypatch.delenv("JSTPC_SEED")
    assert scenario_seed(SimScenario(seed=3)).seed == 3


# -- protocol behaviour ---------------------------------------------------------

def test_single_link_uses_every_data_slot():
    sc = SimScenario(n_nodes=2, duration=0.5)
    r = run_simulation(sc, ([[0.0, 0.0], [8.0, 0.0]], [1, -1]))
    assert r.stats["failed_tx"] == 0
    assert r.stats["scheduled_tx"] == 5 * 90
    assert all(row["occupied_slots"] == 90 for row in r.trace.frame_rows)


def test_two_distant_links_run_concurrently():
    pos = [[-69.3, 0.0], [-61.3, 0.0], [69.3, 0.0], [61.3, 0.0]]
    sc = SimScenario(n_nodes=4, duration=0.3)
    sim = _Simulation(sc, (pos, [1, -1, 3, -1]))
    r = sim.run()
    plan = sim._plan(0, 8.0)
    assert 130.0 > min_separation(plan.gamma_star, plan.i_target, P)
    assert r.stats["failed_tx"] == 0
    assert r.stats["scheduled_tx"] == 3 * 2 * 90
    assert r.trace.bits[:, 0] == pytest.approx(r.trace.bits[:, 2])


def test_energy_accounting_single_link():
    p = P.with_(gamma_0=0.01)
    sc = SimScenario(n_nodes=3, duration=0.3, params=p)
    sim = _Simulation(sc, ([[0.0, 0.0], [8.0, 0.0], [0.0, 60.0]], [1, -1, -1]))
    r = sim.run()
    plan = sim._plan(0, 8.0)
    slot, frame = sc.frame.slot_s, sc.frame.frame_s
    e = r.trace.energy[1]
    # source: own scheduling slot plus 90 data slots awake, the rest asleep
    src = p.gamma_c * 91 * slot + p.g_a * plan.gamma_star * 1e-3 * 90 * slot + p.gamma_0 * 9 * slot
    dst = p.gamma_c * 91 * slot + p.gamma_0 * 9 * slot
    idle = p.gamma_c * slot + p.gamma_0 * 99 * slot
    coord = p.gamma_c * 10 * slot + p.g_a * p.gamma_max * 1e-3 * slot + p.gamma_0 * 90 * slot
    assert e[0] == pytest.approx(src, rel=1e-12)
    assert e[1] == pytest.approx(dst, rel=1e-12)
    assert e[2] == pytest.approx(idle, rel=1e-12)
    assert e[3:] == pytest.approx(np.full(19, coord), rel=1e-12)
    assert sum(row["energy_j"] for row in r.trace.frame_rows) == pytest.approx(r.trace.energy.sum())
    assert frame == pytest.approx(100 * slot)


@pytest.mark.parametrize("seed", range(6))
def test_fuzz_conservation_energy_determinism(seed):
    rng = np.random.default_rng(seed)
    sc = SimScenario(n_nodes=int(rng.integers(5, 60)), duration=0.4, seed=seed,
                     load_bps=float(rng.uniform(1e5, 2e7)), max_speed=float(rng.choice([0.0, 2.0])),
                     report_period=0.2, scheduler_mode=str(rng.choice(["greedy", "random"])))
    a = run_simulation(sc)
    t = a.trace
    delivered = t.bits.sum()
    assert t.generated_bits == pytest.approx(delivered + t.queued_bits, rel=1e-12, abs=1e-6)
    assert a.stats["delivered_bits"] == pytest.approx(delivered)
    p, frame = sc.params, sc.frame.frame_s
    assert np.all(t.energy >= p.gamma_0 * frame - 1e-12)
    assert np.all(t.energy <= (p.gamma_c + p.g_a * p.gamma_max * 1e-3) * frame + 1e-12)
    assert a.digest == run_simulation(sc).digest


def test_digest_depends_on_seed():
    sc = SimScenario(n_nodes=40, duration=0.3)
    assert run_simulation(sc).digest != run_simulation(sc.with_(seed=1)).digest


def test_results_written(tmp_path):
    r = run_simulation(SimScenario(n_nodes=20, duration=0.3))
    s = r.write(tmp_path)
    assert (tmp_path / "frames.csv").read_text().startswith("frame,occupied_slots")
    assert json.loads((tmp_path / "summary.json").read_text())["digest"] == r.digest == s["digest"]


@pytest.fixture(scope="module")
def saturated_run():
    sim = _Simulation(SimScenario(seed=0))
    sim.remote_samples = []
    return sim, sim.run()


def test_saturated_success_ratio(saturated_run):
    _, r = saturated_run
    ok = 1 - r.stats["failed_tx"] / r.stats["scheduled_tx"]
    assert ok >= 0.99
    assert r.stats["scheduled_tx"] > 0


def test_targets_hold_when_remote_bound_holds(saturated_run):
    sim, r = saturated_run
    remote = np.concatenate(sim.remote_samples)
    if np.all(remote <= DEFAULT_C0):
        assert r.stats["failed_tx"] == 0
        assert r.stats["min_sinr_margin"] >= 1 - 1e-9


def test_capacity_per_scheduling_packet(saturated_run):
    # a coordinator never hands out slots to more links than one packet holds
    _, r = saturated_run
    assert r.stats["links"] <= 100


def test_measure_remote_interference_shape():
    s = measure_remote_interference(SimScenario(n_nodes=40, duration=0.3))
    assert s.ndim == 1 and np.all(s >= 0)
