"""Omniscient construction of the target topology.

The functions named after the topology definitions (``component``,
``first_pred``, ``range_`` ...) evaluate them literally by scanning the whole
view, which makes them slow but easy to audit.  ``target_edges`` builds the
complete edge set in one sweep per level and is what the simulator uses.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

from hskip.core import BitStream, HSkipError, bandwidth_key, common_prefix


class UnknownNode(HSkipError):
    pass


@dataclass(frozen=True)
class ViewNode:
    id: int
    rs: BitStream
    bw: float

    @property
    def key(self):
        return bandwidth_key(self.bw, self.id)


class GlobalView:
    """Snapshot of the true identity, bit stream and bandwidth of every node."""

    def __init__(self, nodes: Iterable[ViewNode], labels: Mapping[int, str] | None = None):
        self.nodes: dict[int, ViewNode] = {}
        for node in nodes:
            if node.id in self.nodes:
                raise ValueError(f"duplicate node id {node.id}")
            self.nodes[node.id] = node
        self.labels = dict(labels or {})

    @classmethod
    def from_triples(cls, triples, labels=None) -> GlobalView:
        return cls((ViewNode(i, rs, bw) for i, rs, bw in triples), labels)

    def __len__(self):
        return len(self.nodes)

    def __contains__(self, node_id):
        return node_id in self.nodes

    def __getitem__(self, node_id) -> ViewNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNode(node_id) from None

    def name(self, node_id) -> str:
        return self.labels.get(node_id, str(node_id))


# -- literal definitions -----------------------------------------------------


def component(view: GlobalView, v: int, i: int) -> set[int]:
    me = view[v]
    return {w for w, node in view.nodes.items() if w == v or common_prefix(me.rs, node.rs) >= i}


def graph_level(view: GlobalView) -> int:
    """Longest prefix shared by any two distinct nodes (0 below two nodes)."""
    if len(view) < 2:
        return 0
    # The maximal common prefix over all pairs is attained by two neighbours
    # in lexicographic order of the streams.
    ordered = sorted(view.nodes.values(), key=lambda n: n.rs.bits)
    return max(common_prefix(a.rs, b.rs) for a, b in zip(ordered, ordered[1:]))


def _extensions(view, v, i, b, above):
    me = view[v]
    for w, node in view.nodes.items():
        if w == v or (node.key > me.key) != above:
            continue
        if common_prefix(me.rs, node.rs) >= i and node.rs.bit(i) == b:
            yield node


def first_pred(view: GlobalView, v: int, i: int, b: int) -> int | None:
    """Lowest-keyed node above ``v`` that extends ``v``'s i-prefix with bit ``b``."""
    found = min(_extensions(view, v, i, b, True), key=lambda n: n.key, default=None)
    return None if found is None else found.id


def first_succ(view: GlobalView, v: int, i: int, b: int) -> int | None:
    found = max(_extensions(view, v, i, b, False), key=lambda n: n.key, default=None)
    return None if found is None else found.id


def farthest_pred(view: GlobalView, v: int, i: int) -> int | None:
    """Farther of the two nearest prefix-extending predecessors.

    None unless both bit classes occur above ``v`` in its level-``i``
    component; the range is then unbounded on that side.
    """
    firsts = [first_pred(view, v, i, 0), first_pred(view, v, i, 1)]
    if None in firsts:
        return None
    return max(firsts, key=lambda u: view[u].key)


def farthest_succ(view: GlobalView, v: int, i: int) -> int | None:
    firsts = [first_succ(view, v, i, 0), first_succ(view, v, i, 1)]
    if None in firsts:
        return None
    return min(firsts, key=lambda u: view[u].key)


def range_(view: GlobalView, v: int, i: int) -> set[int]:
    """Level-``i`` neighbours of ``v``: its component between the two boundaries."""
    me = view[v]
    top = farthest_pred(view, v, i)
    bottom = farthest_succ(view, v, i)
    out = set()
    for w in component(view, v, i):
        if w == v:
            continue
        key = view[w].key
        if key > me.key and (top is None or key <= view[top].key):
            out.add(w)
        elif key < me.key and (bottom is None or key >= view[bottom].key):
            out.add(w)
    return out


# -- target edge set ---------------------------------------------------------


@dataclass
class TargetEdgeSet:
    """Directed target edges; ``levels[v][w]`` is the lowest level witnessing ``v -> w``."""

    levels: dict[int, dict[int, int]] = field(default_factory=dict)

    @property
    def edges(self) -> set[tuple[int, int]]:
        return {(v, w) for v, out in self.levels.items() for w in out}

    def out(self, v: int) -> set[int]:
        return set(self.levels.get(v, ()))

    def __contains__(self, edge):
        v, w = edge
        return w in self.levels.get(v, ())

    def __len__(self):
        return sum(len(out) for out in self.levels.values())

    def max_degree(self) -> int:
        return max((len(out) for out in self.levels.values()), default=0)


def _walk(group, start, step, i, cap, out):
    """Add the range on one side of ``group[start]`` at level ``i`` to ``out``."""
    shift = cap - 1 - i
    seen = [False, False]
    j = start + step
    while 0 <= j < len(group):
        b = (group[j].rs.bits >> shift) & 1
        seen[b] = True
        w = group[j].id
        if w not in out:
            out[w] = i
        if seen[1 - b]:
            break
        j += step


def target_edges(view: GlobalView) -> TargetEdgeSet:
    """All edges ``(v, w)`` with ``w`` in ``range(v, i)`` for some level ``i``."""
    levels: dict[int, dict[int, int]] = {v: {} for v in view.nodes}
    if len(view) < 2:
        return TargetEdgeSet(levels)
    ordered = sorted(view.nodes.values(), key=lambda n: n.key)
    cap = ordered[0].rs.cap
    top = graph_level(view)
    for i in range(top + 1):
        groups: dict[int, list] = {}
        for node in ordered:
            groups.setdefault(node.rs.bits >> (cap - i), []).append(node)
        for group in groups.values():
            if len(group) < 2:
                continue
            for idx, node in enumerate(group):
                out = levels[node.id]
                _walk(group, idx, +1, i, cap, out)
                _walk(group, idx, -1, i, cap, out)
    return TargetEdgeSet(levels)


# -- legality ----------------------------------------------------------------


@dataclass
class LegalityReport:
    legal: bool
    missing: list[tuple[int, int, int]] = field(default_factory=list)
    surplus: list[tuple[int, int]] = field(default_factory=list)
    stale: list[tuple[int, int]] = field(default_factory=list)

    def __bool__(self):
        return self.legal

    def lines(self, view: GlobalView | None = None) -> list[str]:
        name = view.name if view is not None else str
        out = [f"MISSING {name(v)}→{name(w)}@{i}" for v, w, i in self.missing]
        out += [f"SURPLUS {name(v)}→{name(w)}" for v, w in self.surplus]
        out += [f"STALE {name(v)}:{name(w)}" for v, w in self.stale]
        return out


def is_legal(
    view: GlobalView,
    explicit_edges: Iterable[tuple[int, int]],
    cached_info: Mapping[tuple[int, int], float],
    target: TargetEdgeSet | None = None,
) -> LegalityReport:
    """Compare stored edges and cached bandwidths against the target topology.

    ``cached_info[(v, w)]`` is the bandwidth ``v`` believes ``w`` has.  In-flight
    references play no part in legality.
    """
    if target is None:
        target = target_edges(view)
    explicit = set(explicit_edges)
    wanted = target.edges
    missing = sorted((v, w, target.levels[v][w]) for v, w in wanted - explicit)
    surplus = sorted(explicit - wanted)
    stale = sorted(
        (v, w)
        for (v, w), bw in cached_info.items()
        if w in view.nodes and view.nodes[w].bw != bw
    )
    return LegalityReport(not (missing or surplus or stale), missing, surplus, stale)
