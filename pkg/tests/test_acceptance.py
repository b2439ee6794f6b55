"""Acceptance criteria, one test and one PASS/FAIL line each.

All measurements come from one shared campaign (the ``campaign`` fixture)
so that every converged world is built once.  ``HSKIP_ACCEPT_SEEDS`` lowers
the seed counts for a quick look; the verdicts only count at the default.
``HSKIP_ACCEPT_LOG`` names a file that receives progress lines.
"""

import math
import os
import statistics
import time
from dataclasses import dataclass, field

import pytest

from hskip.cli import main as cli_main
from hskip.experiments import (
    ScenarioConfig, converge, flow_problem, log_fit, polylog_exponent, route,
    run_scenario, scenario_crash, scenario_join, trace_is_monotone,
)

SEEDS = int(os.environ.get("HSKIP_ACCEPT_SEEDS", "100"))
SWEEP_NS = (16, 32, 64, 128, 256, 512, 1024)
CONVERGE_NS = (16, 64, 256)
JOIN_NS, JOIN_SEEDS = (64, 256, 1024), min(50, SEEDS)
FLOW_NS, FLOW_SEEDS = (64, 256, 1024), min(10, SEEDS)
CHURN_N, CHURN_SEEDS = 1024, min(10, SEEDS)
ROUTE_NS, ROUTE_SEEDS = (16, 32, 64), min(20, SEEDS)
CLOSURE = {16: 10, 64: 10, 256: 10, 1024: 2}
LOG = os.environ.get("HSKIP_ACCEPT_LOG")

RESULTS: list[str] = []


def verdict(number: int, ok: bool, text: str):
    line = f"CRITERION {number:2d}: {'PASS' if ok else 'FAIL'} | {text}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def progress(msg):
    if LOG:
        with open(LOG, "a") as fh:
            fh.write(f"{time.strftime('%H:%M:%S')} {msg}\n")


@dataclass
class Campaign:
    converge: dict = field(default_factory=dict)       # (n, seed) -> RunRecord
    converge_seconds: dict = field(default_factory=dict)
    oracle_exact: dict = field(default_factory=dict)   # (n, seed) -> bool
    closure: dict = field(default_factory=dict)        # (n, seed) -> (edge changes, illegal rounds)
    routes: dict = field(default_factory=dict)         # (n, seed) -> (pairs, delivered, monotone, max hops)
    flows: dict = field(default_factory=dict)          # (n, seed) -> FlowResult summary
    joins: dict = field(default_factory=dict)          # (n, seed) -> RunRecord
    churn: dict = field(default_factory=dict)          # (mode, seed) -> RunRecord


def all_pairs(world):
    pairs = delivered = monotone = 0
    worst = 0
    for u in world.live:
        for v in world.live:
            pairs += 1
            try:
                trace = route(world, u, v)
            except Exception:
                continue
            delivered += 1
            monotone += trace_is_monotone(world, trace)
            worst = max(worst, len(trace) - 1)
    return pairs, delivered, monotone, worst


def closure_check(world, rounds=50):
    edges, changes = world.explicit_edges(), world.edge_changes()
    illegal = 0
    for _ in range(rounds):
        world.step_round()
        illegal += not world.is_legal()
    illegal += not world.legality().legal
    return world.edge_changes() - changes + len(edges ^ world.explicit_edges()), illegal


@pytest.fixture(scope="session")
def campaign():
    out = Campaign()
    for n in SWEEP_NS:
        for seed in range(SEEDS):
            t0 = time.perf_counter()
            world, rec = converge(ScenarioConfig("converge", n), seed)
            out.converge_seconds[(n, seed)] = time.perf_counter() - t0
            out.converge[(n, seed)] = rec
            if not rec.legal:
                continue
            if n <= 64:
                out.oracle_exact[(n, seed)] = world.legality().legal and world.explicit_edges() == world.target().edges
            if n in ROUTE_NS and seed < ROUTE_SEEDS:
                out.routes[(n, seed)] = all_pairs(world)
            if n in FLOW_NS and seed < FLOW_SEEDS:
                f = flow_problem(world)
                out.flows[(n, seed)] = {
                    "dilation": f.dilation, "avg": f.avg_normalized_congestion,
                    "delivered": f.delivered, "pairs": f.pairs,
                    "identity": math.isclose(f.total_traffic, f.volume_hops, rel_tol=1e-9),
                }
            if n == CHURN_N and seed < CHURN_SEEDS:
                out.churn[("contiguous", seed)] = scenario_crash(world.clone(), seed, 0.35, "contiguous")
                out.churn[("random", seed)] = scenario_crash(world.clone(), seed, 0.60, "random")
            if seed < CLOSURE.get(n, 0):
                out.closure[(n, seed)] = closure_check(world.clone())
            if n in JOIN_NS and seed < JOIN_SEEDS:
                out.joins[(n, seed)] = scenario_join(world, seed)
            progress(f"n={n} seed={seed} rounds={rec.rounds_to_legal} legal={rec.legal} "
                     f"{out.converge_seconds[(n, seed)]:.1f}s")
    return out


def medians(camp, attr, ns, source="converge"):
    table = getattr(camp, source)
    return [statistics.median(getattr(table[(n, s)], attr) for s in range(SEEDS if source == "converge" else JOIN_SEEDS))
            for n in ns]


def test_c01_convergence(campaign):
    recs = [campaign.converge[(n, s)] for n in CONVERGE_NS for s in range(SEEDS)]
    legal = sum(r.legal and r.rounds_to_legal <= math.ceil(50 * math.log2(r.n)) for r in recs)
    seconds = sum(campaign.converge_seconds[(n, s)] for n in CONVERGE_NS for s in range(SEEDS))
    verdict(1, legal == len(recs) and seconds < 300,
            f"{legal}/{len(recs)} random trees legal within 50*log2 n rounds (n in {CONVERGE_NS}); {seconds:.0f}s")


def test_c02_stabilization_time_scaling(campaign):
    rounds = medians(campaign, "rounds_to_legal", SWEEP_NS)
    fit = log_fit(SWEEP_NS, rounds)
    legal = all(campaign.converge[(n, s)].legal for n in SWEEP_NS for s in range(SEEDS))
    verdict(2, fit.r2 >= 0.9 and legal,
            f"median rounds {dict(zip(SWEEP_NS, rounds))}; fit {fit.intercept:.2f} + {fit.slope:.2f}*log2 n, R^2={fit.r2:.3f}")


def test_c03_message_scaling(campaign):
    msgs = medians(campaign, "total_messages", SWEEP_NS)
    fit = polylog_exponent(SWEEP_NS, msgs)
    per_node = polylog_exponent(SWEEP_NS, [m / n for m, n in zip(msgs, SWEEP_NS)])
    verdict(3, 1.5 <= fit.slope <= 2.5,
            f"median total messages {dict(zip(SWEEP_NS, msgs))}; log-log exponent {fit.slope:.2f} "
            f"(per node {per_node.slope:.2f}); window [1.5, 2.5]")


def test_c04_closure(campaign):
    changes = sum(c for c, _ in campaign.closure.values())
    illegal = sum(i for _, i in campaign.closure.values())
    verdict(4, changes == 0 and illegal == 0 and len(campaign.closure) == sum(min(k, SEEDS) for k in CLOSURE.values()),
            f"{len(campaign.closure)} converged worlds x 50 rounds: {changes} edge changes, {illegal} illegal rounds")


def test_c05_connectivity_every_step():
    from hskip.experiments import gen_initial_world
    violations = checks = 0
    for n in (16, 32, 64):
        for seed in range(min(20, SEEDS)):
            world = gen_initial_world(n, seed)
            bad = []

            def check(w, v):
                bad.append(not w.connectivity_check())

            for _ in range(math.ceil(50 * math.log2(n))):
                world.step_round(on_turn=check)
                if world.is_legal():
                    break
            checks += len(bad)
            violations += sum(bad)
            if n == 16:
                world = gen_initial_world(n, seed)
                for _ in range(4000):
                    world.step_async()
                    checks += 1
                    violations += not world.connectivity_check()
    verdict(5, violations == 0, f"{checks} connectivity checks (every node turn; async: every step), {violations} violations")


def test_c06_oracle_equivalence(campaign):
    exact = sum(campaign.oracle_exact.values())
    total = len(campaign.oracle_exact)
    verdict(6, total >= min(50, 3 * SEEDS) and exact == total,
            f"{exact}/{total} converged worlds with n <= 64 have exactly the target edge set")


def test_c07_join_work(campaign):
    extra = medians(campaign, "additional_messages", JOIN_NS, "joins")
    changes = medians(campaign, "structural_changes", JOIN_NS, "joins")
    legal = all(r.legal for r in campaign.joins.values())
    fm = polylog_exponent(JOIN_NS, extra)
    fs = polylog_exponent(JOIN_NS, changes)
    verdict(7, legal and 1.5 <= fm.slope <= 2.5 and fs.slope <= 2.5,
            f"median additional messages {dict(zip(JOIN_NS, extra))} exponent {fm.slope:.2f} (window [1.5, 2.5]); "
            f"median structural changes {dict(zip(JOIN_NS, changes))} exponent {fs.slope:.2f} (<= 2.5)")


def test_c08_routing(campaign):
    pairs = sum(r[0] for r in campaign.routes.values())
    delivered = sum(r[1] for r in campaign.routes.values())
    monotone = sum(r[2] for r in campaign.routes.values())
    verdict(8, pairs > 0 and delivered == pairs == monotone,
            f"{len(campaign.routes)} worlds, {pairs} lookups: {delivered} delivered, {monotone} bandwidth-monotone")


def test_c09_dilation(campaign):
    bound_ok = all(r[3] <= 4 * math.log2(n) for (n, _), r in campaign.routes.items())
    flow_ok = all(f["dilation"] <= 4 * math.log2(n) for (n, _), f in campaign.flows.items())
    big = [campaign.flows[(1024, s)]["dilation"] for s in range(FLOW_SEEDS)]
    verdict(9, bound_ok and flow_ok and all(8 <= d <= 14 for d in big),
            f"all-pairs max hops within 4*log2 n: {bound_ok and flow_ok}; n=1024 flow dilation per seed {big}")


def test_c10_congestion(campaign):
    avg = [statistics.mean(campaign.flows[(n, s)]["avg"] for s in range(FLOW_SEEDS)) for n in FLOW_NS]
    fit = log_fit(FLOW_NS, avg)
    growth = math.log(avg[-1] / avg[0]) / math.log(FLOW_NS[-1] / FLOW_NS[0])
    ok_flows = all(f["identity"] and f["delivered"] == f["pairs"] for f in campaign.flows.values())
    verdict(10, fit.slope > 0 and growth < 1 and ok_flows,
            f"mean avg normalized congestion {dict(zip(FLOW_NS, (round(a, 3) for a in avg)))}; "
            f"{fit.intercept:.2f} + {fit.slope:.2f}*log2 n (R^2={fit.r2:.3f}); growth exponent in n {growth:.2f}")


def test_c11_churn(campaign):
    attack = [campaign.churn[("contiguous", s)].surviving_fraction for s in range(CHURN_SEEDS)]
    crash = [campaign.churn[("random", s)].surviving_fraction for s in range(CHURN_SEEDS)]
    ma, mc = statistics.mean(attack), statistics.mean(crash)
    verdict(11, ma >= 0.99 and mc >= 0.99,
            f"n={CHURN_N}: mean surviving fraction {ma:.4f} after 35% contiguous attack, {mc:.4f} after 60% random crash")


def test_c12_determinism(campaign, tmp_path):
    cfg = tmp_path / "campaign.json"
    import json
    cfg.write_text(json.dumps({"seed": 11, "scenarios": [
        {"scenario": s, "n": 64, "repeats": 3}
        for s in ("converge", "join", "leave", "change", "crash", "attack", "flow", "random_target_flow")
    ]}))
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}.csv"
        cli_main(["campaign", str(cfg), "--out", str(out)])
        outs.append(out.read_bytes())
    again = [run_scenario(ScenarioConfig("converge", 256), s).row() for s in range(min(3, SEEDS))]
    sweep = [campaign.converge[(256, s)].row() for s in range(min(3, SEEDS))]
    verdict(12, outs[0] == outs[1] and len(outs[0]) > 0 and again == sweep,
            f"two campaign executions byte-identical ({len(outs[0])} bytes); sweep rows reproduce: {again == sweep}")
