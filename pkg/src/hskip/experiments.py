"""Scenario generation and measurement campaigns.

Every scenario is a pure function of its configuration and seed.  Random
choices made by a scenario (bandwidths, contacts, victims) come from a
``random.Random`` seeded with ``(seed, purpose)`` strings, so adding a new
kind of draw never perturbs existing ones.
"""

from __future__ import annotations

import math
import random
import statistics
from dataclasses import dataclass, field, fields
from pathlib import Path

from hskip.core import HSkipError
from hskip.oracle import GlobalView, ViewNode, target_edges
from hskip.protocol import NoRoute
from hskip.simnet import World

SCENARIOS = ("converge", "join", "leave", "change", "crash", "attack", "flow", "random_target_flow")
CSV_FIELDS = (
    "run_id", "seed", "n", "scenario", "rounds_to_legal", "total_messages",
    "additional_messages", "max_degree", "dilation", "avg_normalized_congestion",
    "surviving_fraction", "legal",
)


class BadDistribution(HSkipError, ValueError):
    pass


class BadFraction(HSkipError, ValueError):
    pass


class BadConfig(HSkipError, ValueError):
    pass


class RoutingLoop(HSkipError):
    pass


# -- bandwidth distributions -------------------------------------------------


@dataclass(frozen=True)
class BandwidthDist:
    """``uniform(lo, hi)``, ``pareto(alpha, scale)`` or ``empirical(path)``."""

    kind: str = "pareto"
    params: tuple = (1.5, 1.0)
    values: tuple = ()

    def sample(self, rng: random.Random) -> float:
        if self.kind == "uniform":
            lo, hi = self.params
            return rng.uniform(lo, hi)
        if self.kind == "pareto":
            alpha, scale = self.params
            return scale * rng.paretovariate(alpha)
        return rng.choice(self.values)

    def __str__(self):
        if self.kind == "empirical":
            return f"empirical:{self.params[0]}"
        return f"{self.kind}:" + ",".join(f"{p:g}" for p in self.params)


def parse_dist(text: str | None) -> BandwidthDist:
    """Parse ``pareto[:alpha,scale]``, ``uniform[:lo,hi]`` or ``empirical:path``."""
    if not text:
        return BandwidthDist()
    kind, _, rest = text.partition(":")
    kind = kind.strip().lower()
    if kind == "empirical":
        if not rest:
            raise BadDistribution("empirical distribution needs a file path")
        return load_empirical(rest)
    defaults = {"pareto": (1.5, 1.0), "uniform": (1.0, 100.0)}
    if kind not in defaults:
        raise BadDistribution(f"unknown distribution {kind!r}")
    try:
        params = tuple(float(p) for p in rest.split(",")) if rest else defaults[kind]
    except ValueError:
        raise BadDistribution(f"bad parameters in {text!r}") from None
    if len(params) != 2:
        raise BadDistribution(f"{kind} takes two parameters, got {len(params)}")
    a, b = params
    if kind == "pareto" and not (a > 0 and b > 0):
        raise BadDistribution("pareto needs alpha > 0 and scale > 0")
    if kind == "uniform" and not (0 < a <= b):
        raise BadDistribution("uniform needs 0 < lo <= hi")
    return BandwidthDist(kind, params)


def load_empirical(path) -> BandwidthDist:
    """One positive decimal per line; blank lines and ``#`` comments are skipped."""
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise BadDistribution(f"cannot read {path}: {exc}") from None
    values = []
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            value = float(line)
        except ValueError:
            raise BadDistribution(f"{path}:{lineno}: not a number: {line!r}") from None
        if not (value > 0 and math.isfinite(value)):
            raise BadDistribution(f"{path}:{lineno}: bandwidth must be positive")
        values.append(value)
    if not values:
        raise BadDistribution(f"{path}: no bandwidth values")
    return BandwidthDist("empirical", (str(path),), tuple(values))


# -- configuration and records -----------------------------------------------


def default_max_rounds(n: int) -> int:
    return max(1, math.ceil(50 * math.log2(max(n, 2))))


@dataclass
class ScenarioConfig:
    scenario: str = "converge"
    n: int = 16
    seed: int = 0
    dist: BandwidthDist = field(default_factory=BandwidthDist)
    max_rounds: int | None = None
    repeats: int = 1
    fraction: float = 0.0
    mode: str = "random"

    def __post_init__(self):
        if isinstance(self.dist, str):
            self.dist = parse_dist(self.dist)
        if self.scenario == "attack":
            self.mode = "contiguous"
        self.validate()

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise BadConfig(f"unknown scenario {self.scenario!r}")
        if not isinstance(self.n, int) or self.n < 2:
            raise BadConfig(f"n must be an integer >= 2, got {self.n!r}")
        if self.max_rounds is not None and self.max_rounds < 1:
            raise BadConfig("max_rounds must be >= 1")
        if self.repeats < 1:
            raise BadConfig("repeats must be >= 1")
        if not 0 <= self.fraction < 1:
            raise BadFraction(f"fraction must lie in [0, 1), got {self.fraction}")
        if self.mode not in ("random", "contiguous"):
            raise BadConfig(f"unknown crash mode {self.mode!r}")

    @property
    def rounds_cap(self) -> int:
        return self.max_rounds if self.max_rounds is not None else default_max_rounds(self.n)

    def seeds(self) -> list[int]:
        return [self.seed + k for k in range(self.repeats)]


@dataclass
class RunRecord:
    run_id: str
    seed: int
    n: int
    scenario: str
    rounds_to_legal: int = 0
    total_messages: int = 0
    additional_messages: int = 0
    max_degree: int = 0
    dilation: int = 0
    avg_normalized_congestion: float = 0.0
    surviving_fraction: float = 1.0
    legal: bool = False
    # not part of the CSV row
    structural_changes: int = 0
    detail: dict = field(default_factory=dict)

    def row(self) -> list[str]:
        out = []
        for name in CSV_FIELDS:
            value = getattr(self, name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = f"{value:.6g}"
            out.append(str(value))
        return out


assert set(CSV_FIELDS) <= {f.name for f in fields(RunRecord)}


def scenario_rng(seed: int, purpose: str) -> random.Random:
    return random.Random(f"{seed}:{purpose}")


# -- world generation and convergence ------------------------------------------


def gen_initial_world(n: int, seed: int, dist: BandwidthDist | None = None, **world_kw) -> World:
    """``n`` nodes joined by a uniformly random recursive tree.

    Node ``i > 0`` stores a reference to a uniformly chosen ``j < i``.
    """
    if n < 2:
        raise BadConfig("need at least two nodes")
    dist = dist or BandwidthDist()
    rng = scenario_rng(seed, "initial")
    world = World(seed, **world_kw)
    for v in range(n):
        world.add_node(v, dist.sample(rng))
    for v in range(1, n):
        world.live[v].add_neighbor(world.ref(rng.randrange(v)))
    return world


@dataclass
class ConvergenceResult:
    rounds: int
    messages: int
    periodic: int
    reactive: int
    legal: bool


def run_until_legal(world: World, max_rounds: int, *, per_component: bool = False,
                    on_round=None) -> ConvergenceResult:
    """Step rounds until the world is legal or ``max_rounds`` have run.

    Legality is checked before the first round, so a legal world costs zero
    rounds.  With ``per_component`` the run also stops once every weakly
    connected component is legal on its own (a partitioned world never
    becomes globally legal).
    """
    start = world.metrics.totals.copy()
    rounds = 0
    legal = world.is_legal()
    while not legal and rounds < max_rounds:
        world.step_round()
        rounds += 1
        if on_round is not None:
            on_round(world)
        legal = world.is_legal()
        if not legal and per_component and components_legal(world):
            break
    totals = world.metrics.totals
    periodic = totals["periodic"] - start["periodic"]
    reactive = totals["reactive"] - start["reactive"]
    return ConvergenceResult(rounds, periodic + reactive, periodic, reactive, legal)


def component_is_legal(world: World, members) -> bool:
    view = GlobalView(ViewNode(v, world.live[v].rs, world.live[v].bw) for v in members)
    levels = target_edges(view).levels
    for v in members:
        nh = world.live[v].nh
        if nh.keys() != levels[v].keys():
            return False
        if any(world.live[w].bw != ref.bw for w, ref in nh.items()):
            return False
    return True


def components_legal(world: World) -> bool:
    return all(component_is_legal(world, c) for c in world.components())


def largest_legal_fraction(world: World) -> float:
    """Share of live nodes in the largest component, or 0 if that component is not legal."""
    if not world.live:
        return 0.0
    comps = world.components()
    if len(comps) == 1 and world.is_legal():
        return 1.0
    best = comps[0]
    return len(best) / len(world.live) if component_is_legal(world, best) else 0.0


def converge(cfg: ScenarioConfig, seed: int, **world_kw) -> tuple[World, RunRecord]:
    world = gen_initial_world(cfg.n, seed, cfg.dist, **world_kw)
    res = run_until_legal(world, cfg.rounds_cap)
    rec = RunRecord(
        run_id=f"converge-n{cfg.n}-s{seed}", seed=seed, n=cfg.n, scenario="converge",
        rounds_to_legal=res.rounds, total_messages=res.messages,
        max_degree=world.max_degree(), legal=res.legal,
        structural_changes=world.edge_changes(),
        detail={"periodic": res.periodic, "reactive": res.reactive},
    )
    return world, rec


# -- external dynamics --------------------------------------------------------


def fresh_id(world: World) -> int:
    return max(world.live.keys() | world.departed, default=-1) + 1


def _dynamics(world: World, name: str, seed: int, max_rounds: int, event) -> RunRecord:
    """Apply ``event`` to a legal world and measure re-legalisation.

    Additional messages are the disturbed run's messages minus those of an
    undisturbed clone stepped for the same number of rounds.
    """
    baseline = world.clone()
    before = world.metrics.messages
    changes_before = world.edge_changes()
    detail = event(world) or {}
    res = run_until_legal(world, max_rounds)
    base_before = baseline.metrics.messages
    for _ in range(res.rounds):
        baseline.step_round()
    used = world.metrics.messages - before
    base = baseline.metrics.messages - base_before
    return RunRecord(
        run_id=f"{name}-n{len(world.live)}-s{seed}", seed=seed, n=len(baseline.live), scenario=name,
        rounds_to_legal=res.rounds, total_messages=used, additional_messages=used - base,
        max_degree=world.max_degree(), legal=res.legal,
        structural_changes=world.edge_changes() - changes_before, detail=detail,
    )


def scenario_join(world: World, seed: int, dist: BandwidthDist | None = None,
                  max_rounds: int | None = None) -> RunRecord:
    dist = dist or BandwidthDist()
    rng = scenario_rng(seed, "join")

    def event(w):
        contact = rng.choice(sorted(w.live))
        v = fresh_id(w)
        w.join(v, dist.sample(rng), contact)
        return {"node": v, "contact": contact}

    return _dynamics(world, "join", seed, max_rounds or default_max_rounds(len(world.live)), event)


def scenario_leave(world: World, seed: int, max_rounds: int | None = None) -> RunRecord:
    rng = scenario_rng(seed, "leave")

    def event(w):
        v = rng.choice(sorted(w.live))
        w.leave(v)
        return {"node": v}

    return _dynamics(world, "leave", seed, max_rounds or default_max_rounds(len(world.live)), event)


def scenario_change(world: World, seed: int, dist: BandwidthDist | None = None,
                    max_rounds: int | None = None) -> RunRecord:
    dist = dist or BandwidthDist()
    rng = scenario_rng(seed, "change")

    def event(w):
        v = rng.choice(sorted(w.live))
        old = w.live[v].bw
        w.change(v, dist.sample(rng))
        return {"node": v, "old_bw": old, "new_bw": w.live[v].bw}

    return _dynamics(world, "change", seed, max_rounds or default_max_rounds(len(world.live)), event)


def scenario_crash(world: World, seed: int, fraction: float, mode: str = "random",
                   dist: BandwidthDist | None = None, max_rounds: int | None = None) -> RunRecord:
    """Crash ``ceil(fraction * n)`` nodes and join as many fresh ones in the same round.

    ``mode="contiguous"`` removes a block that is consecutive in bandwidth
    order, starting at a uniformly random offset (kept in ``detail``).
    """
    if not 0 <= fraction < 1:
        raise BadFraction(f"fraction must lie in [0, 1), got {fraction}")
    if mode not in ("random", "contiguous"):
        raise BadConfig(f"unknown crash mode {mode!r}")
    dist = dist or BandwidthDist()
    rng = scenario_rng(seed, f"crash-{mode}")
    n = len(world.live)
    k = math.ceil(fraction * n)
    order = sorted(world.live, key=lambda v: world.live[v].key)
    detail = {"mode": mode, "crashed": k}
    if mode == "random":
        victims = rng.sample(order, k)
    else:
        offset = rng.randrange(n - k + 1)
        victims = order[offset:offset + k]
        detail["offset"] = offset
    before = world.metrics.messages
    changes_before = world.edge_changes()
    world.crash(victims)
    survivors = sorted(world.live)
    for _ in range(k):
        world.join(fresh_id(world), dist.sample(rng), rng.choice(survivors))
    cap = max_rounds or default_max_rounds(n)
    res = run_until_legal(world, cap, per_component=True)
    name = "attack" if mode == "contiguous" else "crash"
    return RunRecord(
        run_id=f"{name}-n{n}-s{seed}", seed=seed, n=n, scenario=name,
        rounds_to_legal=res.rounds, total_messages=world.metrics.messages - before,
        max_degree=world.max_degree(), legal=res.legal,
        surviving_fraction=largest_legal_fraction(world),
        structural_changes=world.edge_changes() - changes_before,
        detail=detail | {"isolations": len(world.metrics.isolations)},
    )


# -- routing ------------------------------------------------------------------


def route(world: World, src: int, dst: int, limit: int | None = None) -> tuple[int, ...]:
    """Hop trace of a lookup from ``src`` to ``dst`` using each node's routing rule."""
    target = world.ref(dst)
    limit = limit or 4 * len(world.live) + 4
    trace = [src]
    v = src
    while True:
        nxt = world.node(v).next_hop(target)
        if nxt is None:
            return tuple(trace)
        if nxt not in world.live:
            raise NoRoute(f"node {v} forwards to departed node {nxt}")
        trace.append(nxt)
        v = nxt
        if len(trace) > limit:
            raise RoutingLoop(f"lookup {src}->{dst} exceeded {limit} hops")


def trace_is_monotone(world: World, trace) -> bool:
    """Bandwidth rises then falls along ``trace`` and never drops below the endpoints' minimum."""
    keys = [world.live[v].key for v in trace]
    floor = min(keys[0], keys[-1])
    if any(k < floor for k in keys):
        return False
    peak = keys.index(max(keys))
    rising = all(a < b for a, b in zip(keys[:peak], keys[1:peak + 1]))
    falling = all(a > b for a, b in zip(keys[peak:], keys[peak + 1:]))
    return rising and falling


@dataclass
class FlowResult:
    traffic: dict
    congestion: dict
    avg_normalized_congestion: float
    max_normalized_congestion: float
    dilation: int
    delivered: int
    pairs: int
    volume_hops: float

    @property
    def total_traffic(self) -> float:
        return sum(self.traffic.values())


def _next_table(world: World, dst: int) -> dict[int, int]:
    target = world.ref(dst)
    table = {}
    for v, node in world.live.items():
        if v != dst:
            table[v] = node.next_hop(target)
    return table


def _flow_to(world: World, dst: int, volume_of, traffic, hops_out) -> tuple[int, float]:
    """Route one unit of ``volume_of(u)`` from every ``u`` to ``dst``.

    Paths towards one destination form a tree, so each node's carried
    volume is its own plus everything routed through it.  The sending node
    of each hop carries the volume.
    """
    nxt = _next_table(world, dst)
    hops = {dst: 0}

    for u in nxt:
        path = []
        v = u
        while v not in hops:
            path.append(v)
            v = nxt[v]
            if len(path) > len(nxt):
                raise RoutingLoop(f"routing loop towards {dst}")
        h = hops[v]
        for x in reversed(path):
            h += 1
            hops[x] = h
    carried = {u: volume_of(u) for u in nxt}
    vol_hops = sum(carried[u] * hops[u] for u in nxt)
    for u in sorted(nxt, key=hops.__getitem__, reverse=True):
        traffic[u] += carried[u]
        parent = nxt[u]
        if parent != dst:
            carried[parent] += carried[u]
    for u in nxt:
        hops_out.append(hops[u])
    return max((hops[u] for u in nxt), default=0), vol_hops


def flow_problem(world: World) -> FlowResult:
    """Every ordered pair ``(u, v)`` sends ``u.bw * v.bw / total_bw``."""
    live = world.live
    total_bw = sum(n.bw for n in live.values())
    traffic = dict.fromkeys(live, 0.0)
    dilation = 0
    vol_hops = 0.0
    hops: list[int] = []
    for dst in sorted(live):
        dbw = live[dst].bw
        d, vh = _flow_to(world, dst, lambda u: live[u].bw * dbw / total_bw, traffic, hops)
        dilation = max(dilation, d)
        vol_hops += vh
    congestion = {v: traffic[v] / live[v].bw for v in live}
    return FlowResult(
        traffic, congestion, statistics.fmean(congestion.values()), max(congestion.values()),
        dilation, len(hops), len(live) * (len(live) - 1), vol_hops,
    )


def flow_volume(world: World, u: int, v: int) -> float:
    total_bw = sum(n.bw for n in world.live.values())
    return world.live[u].bw * world.live[v].bw / total_bw


def longest_prefix_match(world: World, x: int) -> int:
    """Live node whose stream shares the longest prefix with ``x`` (higher key on ties)."""
    best = max(world.live.values(), key=lambda n: (-(n.rs.bits ^ x).bit_length(), n.key))
    return best.id


def random_target_flow(world: World, seed: int) -> FlowResult:
    """Each node routes ``min(u.bw, w.bw)`` to the best prefix match ``w`` of a random string."""
    rng = scenario_rng(seed, "random-target")
    live = world.live
    cap = next(iter(live.values())).rs.cap
    traffic = dict.fromkeys(live, 0.0)
    dilation = 0
    vol_hops = 0.0
    delivered = 0
    for u in sorted(live):
        w = longest_prefix_match(world, rng.getrandbits(cap))
        trace = route(world, u, w)
        volume = min(live[u].bw, live[w].bw)
        for v in trace[:-1]:
            traffic[v] += volume
        dilation = max(dilation, len(trace) - 1)
        vol_hops += volume * (len(trace) - 1)
        delivered += 1
    congestion = {v: traffic[v] / live[v].bw for v in live}
    return FlowResult(
        traffic, congestion, statistics.fmean(congestion.values()), max(congestion.values()),
        dilation, delivered, len(live), vol_hops,
    )


# -- scaling fits -------------------------------------------------------------


@dataclass
class Fit:
    intercept: float
    slope: float
    r2: float


def linear_fit(xs, ys) -> Fit:
    slope, intercept = statistics.linear_regression(xs, ys)
    r = statistics.correlation(xs, ys) if len(set(ys)) > 1 else 1.0
    return Fit(intercept, slope, r * r)


def log_fit(ns, ys) -> Fit:
    """Least squares of ``y`` against ``log2 n``."""
    return linear_fit([math.log2(n) for n in ns], list(ys))


def polylog_exponent(ns, ys) -> Fit:
    """Slope of ``log y`` against ``log log2 n``: the ``k`` in ``y ~ log^k n``."""
    return linear_fit([math.log(math.log2(n)) for n in ns], [math.log(y) for y in ys])


# -- dispatch -------------------------------------------------------------------


def run_scenario(cfg: ScenarioConfig, seed: int, trace=None) -> RunRecord:
    """One run of ``cfg`` for ``seed``; dynamics start from a converged world.

    A run claiming legality is re-verified against the full oracle diff, and
    flow runs check the volume accounting identity; failures are listed in
    ``detail["violations"]``.
    """
    kw = {"trace": trace} if trace is not None else {}
    world, rec = converge(cfg, seed, **kw)
    out = rec
    violations = []
    if cfg.scenario != "converge" and not rec.legal:
        rec.detail["error"] = "world did not converge before the event"
    elif cfg.scenario == "join":
        out = scenario_join(world, seed, cfg.dist, cfg.rounds_cap)
    elif cfg.scenario == "leave":
        out = scenario_leave(world, seed, cfg.rounds_cap)
    elif cfg.scenario == "change":
        out = scenario_change(world, seed, cfg.dist, cfg.rounds_cap)
    elif cfg.scenario in ("crash", "attack"):
        out = scenario_crash(world, seed, cfg.fraction, cfg.mode, cfg.dist, cfg.rounds_cap)
    elif cfg.scenario in ("flow", "random_target_flow"):
        try:
            flow = flow_problem(world) if cfg.scenario == "flow" else random_target_flow(world, seed)
        except (NoRoute, RoutingLoop) as exc:
            violations.append(f"routing failed: {exc}")
            flow = None
        out = RunRecord(
            run_id="", seed=seed, n=cfg.n, scenario=cfg.scenario,
            rounds_to_legal=rec.rounds_to_legal, total_messages=rec.total_messages,
            max_degree=rec.max_degree, legal=flow is not None and flow.delivered == flow.pairs,
        )
        if flow is not None:
            out.dilation = flow.dilation
            out.avg_normalized_congestion = flow.avg_normalized_congestion
            out.detail["max_normalized_congestion"] = flow.max_normalized_congestion
            if not math.isclose(flow.total_traffic, flow.volume_hops, rel_tol=1e-9, abs_tol=1e-9):
                violations.append(
                    f"traffic {flow.total_traffic!r} != volume*hops {flow.volume_hops!r}")
    if out.legal and out.scenario not in ("flow", "random_target_flow"):
        verdict = world.legality()
        if not verdict.legal:
            violations.append("oracle diff not empty: " + "; ".join(verdict.lines()[:5]))
    if violations:
        out.detail["violations"] = violations
    out.scenario = cfg.scenario
    out.n = cfg.n
    out.run_id = f"{cfg.scenario}-n{cfg.n}-s{seed}"
    return out
