"""Command-line front end.

Every subcommand writes CSV/JSON into ``--out`` together with a
``manifest.json`` holding the resolved arguments, seeds and code version, so
an output directory can be regenerated from its manifest alone.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .baseline_csma import atim_sweep, default_sweep, run_csma
from .core_model import RadioParams, Topology, tradeoff_params
from .hex_asymptotic import AsymptoticGrid, Infeasible, LatticeConfig, lattice_G, sweep_asymptotic
from .link_planner import PlannerMode, plan_link, plan_links
from .mac_sim import SEED_ENV, SimScenario, load_scenario, run_simulation, scenario_from_mapping, scenario_seed
from .metrics import distance_weighted_throughput
from .scheduler import build_schedule, total_planned_rate

WORKERS_ENV = "JSTPC_WORKERS"

SCHEMES = {
    "proposed": dict(),
    "p-ran-sch": dict(scheduler_mode="random"),
    "p-gamma-max": dict(planner_mode="max_power"),
    "p-i-min": dict(planner_mode="min_interference"),
    "p-arb": dict(planner_mode="arbitrary"),
}
CSMA_SCHEMES = ("best-dcf", "best-psm")


def scheme_scenario(sc: SimScenario, scheme: str) -> SimScenario:
    """Scenario for one of the scheduled-MAC ablations."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    return sc.with_(**SCHEMES[scheme])


@dataclass
class ExperimentSpec:
    subcommand: str
    out: Path
    scenario: str | None = None
    seeds: list[int] = field(default_factory=lambda: [0])
    overrides: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["out"] = str(self.out)
        return d


def code_version() -> str:
    h = hashlib.sha256()
    for p in sorted(Path(__file__).parent.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return f"{__version__}+{h.hexdigest()[:12]}"


def worker_cap() -> int:
    env = os.environ.get(WORKERS_ENV, "")
    return max(1, int(env)) if env else 1


def _write_csv(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def _write_manifest(spec: ExperimentSpec, extra: dict | None = None) -> None:
    spec.out.mkdir(parents=True, exist_ok=True)
    man = dict(spec=spec.as_dict(), code_version=code_version(), python=sys.version.split()[0])
    if extra:
        man.update(extra)
    (spec.out / "manifest.json").write_text(json.dumps(man, indent=2, default=str))


def _base_scenario(spec: ExperimentSpec) -> SimScenario:
    sc = load_scenario(spec.scenario) if spec.scenario else SimScenario()
    ov = {k: v for k, v in spec.overrides.items() if v is not None}
    if ov:
        data = sc.to_dict()
        data.update(ov)
        sc = scenario_from_mapping(data, where="overrides")
    return sc


# -- subcommands ------------------------------------------------------------

def cmd_asymptotic(spec: ExperimentSpec) -> int:
    o = spec.options
    if o["figure"] == "G":
        rows = []
        rs = np.linspace(o["rg_lo"], o["rg_hi"], o["points"])
        for a in o["alphas"]:
            g = lattice_G(rs, LatticeConfig(alpha=a))
            rows += [dict(rg_over_d=float(r), G=float(v), alpha=a) for r, v in zip(rs, g)]
        _write_csv(spec.out / "G.csv", rows)
    else:
        params = tradeoff_params()
        e_hats = np.geomspace(o["e_lo"], o["e_hi"], o["points"])
        rows = sweep_asymptotic(e_hats, params, AsymptoticGrid())
        _write_csv(spec.out / "rate_energy.csv", rows)
    _write_manifest(spec)
    return 0


def cmd_plan(spec: ExperimentSpec) -> int:
    o = spec.options
    params = RadioParams()
    rows = []
    status = 0
    for d in o["distances"]:
        for th in o["thetas"]:
            try:
                p = plan_link(d, th, o["lam"], PlannerMode(o["mode"]), params,
                              rng=np.random.default_rng(spec.seeds[0]))
                rows.append(dict(d=d, theta=th, gamma_star=p.gamma_star, i_target=p.i_target,
                                 sinr_db=p.sinr_db, rate=p.planned_rate, energy_per_bit=p.energy_per_bit))
            except Infeasible as exc:
                print(f"infeasible: d={d} theta={th}: {exc}", file=sys.stderr)
                status = 2
    _write_csv(spec.out / "plans.csv", rows)
    _write_manifest(spec)
    return status


def _load_topology(path: str | None, seed: int, n_links: int, side: float, params: RadioParams) -> Topology:
    if path:
        data = json.loads(Path(path).read_text())
        unknown = set(data) - {"positions", "src", "dst"}
        if unknown:
            raise ValueError(f"{path}: unknown key {sorted(unknown)[0]!r}")
        return Topology(np.asarray(data["positions"]), data["src"], data["dst"], params)
    rng = np.random.default_rng(seed)
    src = rng.uniform(0, side, (n_links, 2))
    ang = rng.uniform(-math.pi, math.pi, n_links)
    d = rng.uniform(2.0, params.d_max, n_links)
    dst = src + np.column_stack([np.cos(ang), np.sin(ang)]) * d[:, None]
    pos = np.vstack([src, dst])
    return Topology(pos, np.arange(n_links), np.arange(n_links) + n_links, params)


def cmd_schedule(spec: ExperimentSpec) -> int:
    o = spec.options
    params = RadioParams()
    top = _load_topology(spec.scenario, spec.seeds[0], o["links"], o["side"], params)
    plans = plan_links(top.link_lengths, o["theta"], None, PlannerMode(o["mode"]), params,
                       rng=np.random.default_rng(spec.seeds[0]))
    s = build_schedule(top, plans, o["slots"], mode=o["order"], seed=spec.seeds[0])
    spec.out.mkdir(parents=True, exist_ok=True)
    s.to_csv(spec.out / "schedule.csv")
    _write_manifest(spec, dict(total_planned_rate=total_planned_rate(s, plans)))
    return 0


def cmd_simulate(spec: ExperimentSpec) -> int:
    sc = scenario_seed(_base_scenario(spec))
    seeds = spec.seeds if os.environ.get(SEED_ENV, "") == "" else [sc.seed]
    spec.seeds = list(seeds)
    summaries = {}
    for seed in seeds:
        res = run_simulation(sc.with_(seed=seed))
        summaries[seed] = res.write(spec.out / f"seed_{seed}")
    _write_manifest(spec, dict(scenario=sc.to_dict(), digests={k: v["digest"] for k, v in summaries.items()}))
    return 0


def cmd_baseline(spec: ExperimentSpec) -> int:
    o = spec.options
    sc = scenario_seed(_base_scenario(spec))
    grid = default_sweep(sc.params)
    table = []
    best, best_v = grid[0], -math.inf
    for cfg in grid:
        v = float(np.mean([distance_weighted_throughput(run_csma(sc.with_(seed=s), cfg).trace)
                           for s in spec.seeds]))
        table.append(dict(cs_threshold=cfg.cs_threshold, rx_target=cfg.rx_target, psm=False, atim_ms="",
                          throughput=v))
        if v > best_v:
            best, best_v = cfg, v
    if o["psm"]:
        grid = atim_sweep(best)
        best_v = -math.inf
        for cfg in grid:
            v = float(np.mean([distance_weighted_throughput(run_csma(sc.with_(seed=s), cfg).trace)
                               for s in spec.seeds]))
            table.append(dict(cs_threshold=cfg.cs_threshold, rx_target=cfg.rx_target, psm=True,
                              atim_ms=cfg.atim_ms, throughput=v))
            if v > best_v:
                best, best_v = cfg, v
    _write_csv(spec.out / "sweep.csv", table)
    rows = []
    for s in spec.seeds:
        m = run_csma(sc.with_(seed=s), best).metrics
        rows.append(dict(seed=s, throughput=m.throughput, energy_per_bit=m.energy_per_bit,
                         scheduling_efficiency=m.scheduling_efficiency))
    _write_csv(spec.out / "best.csv", rows)
    _write_manifest(spec, dict(best=dataclasses.asdict(best)))
    return 0


def _metrics_row(m) -> dict:
    return dict(throughput=m.throughput, energy_per_bit=m.energy_per_bit,
                scheduling_efficiency=m.scheduling_efficiency,
                scheduling_efficiency_data=m.scheduling_efficiency_data)


def _run_any(args):
    sc_dict, scheme, seed, cfg = args
    sc = scenario_from_mapping(sc_dict).with_(seed=seed)
    if cfg is not None:
        return _metrics_row(run_csma(sc, cfg).metrics)
    return _metrics_row(run_simulation(scheme_scenario(sc, scheme)).metrics)


def _map(fn, jobs):
    cap = worker_cap()
    if cap <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(cap, len(jobs))) as ex:
        return list(ex.map(fn, jobs))


def cmd_sweep(spec: ExperimentSpec) -> int:
    o = spec.options
    base = _base_scenario(spec)
    var = o["vary"]
    out_rows = []
    for x in o["values"]:
        sc = base.with_(**{"n_nodes": int(x)} if var == "n" else {"load_bps": float(x)})
        d = sc.to_dict()
        for scheme in o["schemes"]:
            if scheme in CSMA_SCHEMES:
                cfgs = default_sweep(sc.params)
                res = [_map(_run_any, [(d, scheme, s, c) for s in spec.seeds]) for c in cfgs]
                k = int(np.argmax([np.mean([r["throughput"] for r in rr]) for rr in res]))
                best_rows = res[k]
                if scheme == "best-psm":
                    cfgs = atim_sweep(cfgs[k])
                    res = [_map(_run_any, [(d, scheme, s, c) for s in spec.seeds]) for c in cfgs]
                    k = int(np.argmax([np.mean([r["throughput"] for r in rr]) for rr in res]))
                    best_rows = res[k]
                rows = best_rows
            else:
                rows = _map(_run_any, [(d, scheme, s, None) for s in spec.seeds])
            mean = {k: float(np.nanmean([r[k] for r in rows])) for k in rows[0]}
            out_rows.append(dict(x=x, scheme=scheme, **mean))
    _write_csv(spec.out / f"sweep_{var}.csv", out_rows)
    _write_manifest(spec)
    return 0


COMMANDS = dict(asymptotic=cmd_asymptotic, plan=cmd_plan, schedule=cmd_schedule, simulate=cmd_simulate,
                baseline=cmd_baseline, sweep=cmd_sweep)


def run_experiment(spec: ExperimentSpec) -> int:
    if spec.subcommand not in COMMANDS:
        raise ValueError(f"unknown subcommand {spec.subcommand!r}")
    return COMMANDS[spec.subcommand](spec)


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="jstpc", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="subcommand", required=True)

    def common(p, scenario=True):
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--seeds", type=_ints, default=[0], help="comma-separated seeds")
        if scenario:
            p.add_argument("--scenario", help="JSON scenario file")

    p = sub.add_parser("asymptotic", help="lattice curves: G(r) table or the rate/energy trade-off")
    common(p, scenario=False)
    p.add_argument("--figure", choices=["G", "rate-energy"], default="rate-energy")
    p.add_argument("--alphas", type=_floats, default=[3.0, 3.5, 4.0, 5.0, 6.0])
    p.add_argument("--rg-lo", type=float, default=0.8)
    p.add_argument("--rg-hi", type=float, default=6.0)
    p.add_argument("--e-lo", type=float, default=2e-3)
    p.add_argument("--e-hi", type=float, default=1.0)
    p.add_argument("--points", type=int, default=60)

    p = sub.add_parser("plan", help="per-link power and target interference versus theta")
    common(p, scenario=False)
    p.add_argument("--distances", type=_floats, default=[5.0, 10.0, 15.0, 20.0])
    p.add_argument("--theta", dest="thetas", type=_floats, default=[math.inf])
    p.add_argument("--mode", default="proposed", choices=[m.value for m in PlannerMode])
    p.add_argument("--lam", type=float, default=None)

    p = sub.add_parser("schedule", help="run the greedy scheduler on one topology")
    common(p)
    p.add_argument("--links", type=int, default=20)
    p.add_argument("--side", type=float, default=100.0)
    p.add_argument("--slots", type=int, default=10)
    p.add_argument("--theta", type=float, default=math.inf)
    p.add_argument("--mode", default="proposed", choices=[m.value for m in PlannerMode])
    p.add_argument("--order", default="greedy", choices=["greedy", "random"])

    def sim_overrides(p):
        p.add_argument("--theta", type=float)
        p.add_argument("--n", dest="n_nodes", type=int)
        p.add_argument("--load", dest="load_bps", type=float)
        p.add_argument("--duration", type=float)
        p.add_argument("--planner-mode", choices=[m.value for m in PlannerMode])
        p.add_argument("--scheduler-mode", choices=["greedy", "random"])
        p.add_argument("--max-speed", type=float)

    p = sub.add_parser("simulate", help="simulate the scheduled MAC")
    common(p)
    sim_overrides(p)

    p = sub.add_parser("baseline", help="optimised CSMA baseline (threshold sweep, optional PSM)")
    common(p)
    sim_overrides(p)
    p.add_argument("--psm", action="store_true")

    p = sub.add_parser("sweep", help="metrics per scheme versus node count or load")
    common(p)
    sim_overrides(p)
    p.add_argument("--vary", choices=["n", "load"], default="n")
    p.add_argument("--values", type=_floats, required=True)
    p.add_argument("--schemes", type=lambda s: s.split(","), default=["proposed", "p-ran-sch"])
    return ap


_OVERRIDE_KEYS = ("theta", "n_nodes", "load_bps", "duration", "planner_mode", "scheduler_mode", "max_speed")


def spec_from_args(ns: argparse.Namespace) -> ExperimentSpec:
    d = dict(vars(ns))
    sub = d.pop("subcommand")
    out = d.pop("out")
    seeds = d.pop("seeds")
    scenario = d.pop("scenario", None)
    overrides = {k: d.pop(k) for k in _OVERRIDE_KEYS if k in d}
    if sub in ("plan", "schedule"):
        for k in ("theta", "mode"):
            if k in overrides:
                d[k] = overrides.pop(k)
    if sub == "sweep":
        bad = [s for s in d["schemes"] if s not in SCHEMES and s not in CSMA_SCHEMES]
        if bad:
            raise SystemExit(f"unknown scheme {bad[0]!r}")
    return ExperimentSpec(sub, out, scenario, seeds, overrides, d)


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    spec = spec_from_args(ns)
    try:
        return run_experiment(spec)
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
