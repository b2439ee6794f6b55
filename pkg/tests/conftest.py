import random

import pytest

from hskip.core import BitStream
from hskip.oracle import GlobalView, ViewNode
from hskip.simnet import World

# Four nodes whose first two stream bits are fixed by hand.
F4 = {"A": (40.0, "00"), "B": (30.0, "01"), "C": (20.0, "10"), "D": (10.0, "11")}
F4_IDS = {"A": 1, "B": 2, "C": 3, "D": 4}
F4_TARGET = {
    ("A", "B"), ("A", "C"), ("B", "A"), ("B", "C"), ("B", "D"),
    ("C", "A"), ("C", "B"), ("C", "D"), ("D", "B"), ("D", "C"),
}


def f4_stream(name):
    return BitStream.with_prefix(F4[name][1], seed=100 + F4_IDS[name])


@pytest.fixture
def f4_view():
    nodes = [ViewNode(F4_IDS[k], f4_stream(k), bw) for k, (bw, _) in F4.items()]
    return GlobalView(nodes, {v: k for k, v in F4_IDS.items()})


def f4_world(edges=()):
    world = World(0)
    for name, (bw, _) in F4.items():
        world.add_node(F4_IDS[name], bw, f4_stream(name))
    for a, b in edges:
        world.live[F4_IDS[a]].add_neighbor(world.ref(F4_IDS[b]))
    return world


@pytest.fixture
def f4_chain():
    return f4_world([("A", "B"), ("B", "C"), ("C", "D")])


@pytest.fixture
def f4_legal():
    return f4_world(sorted(F4_TARGET))


def named(edges):
    names = {v: k for k, v in F4_IDS.items()}
    return {(names[a], names[b]) for a, b in edges}


def random_view(n, seed, cap=256):
    rng = random.Random(seed)
    return GlobalView(ViewNode(v, BitStream(rng.getrandbits(64), cap), rng.paretovariate(1.5)) for v in range(n))


def random_tree_world(n, seed, **kw):
    from hskip.experiments import gen_initial_world
    return gen_initial_world(n, seed, **kw)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
