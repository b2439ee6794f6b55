"""Node-local protocol: neighbourhood bookkeeping, periodic actions, handlers.

A ``NodeState`` is mutated in place by its handlers, each of which returns
the outbound messages as a list of ``(destination id, message)`` pairs.
Nothing here knows about channels or scheduling; see ``hskip.simnet``.

All local decisions use the bandwidths cached in the stored references,
which may be stale until the referenced node introduces itself again.
"""

from __future__ import annotations

from typing import NamedTuple

from hskip.core import BitStream, HSkipError, LevelOverflow, bandwidth_key


class NoRoute(HSkipError):
    """A lookup reached a node with no usable next hop."""


class InvalidBandwidth(HSkipError, ValueError):
    pass


class NodeRef(NamedTuple):
    """Copyable reference: identity, bit stream and a bandwidth snapshot.

    ``version`` counts the referenced node's bandwidth changes, so a holder
    can tell a newer snapshot from an older copy still circulating.
    """

    id: int
    rs: BitStream
    bw: float
    version: int = 0

    @property
    def key(self):
        return (self.bw, self.id)


class Build(NamedTuple):
    """Introduce ``ref``.  A self-introduction also carries ``seen``, the
    sender's cached reference to the receiver, so that the receiver can
    answer an outdated copy with its current one."""

    ref: NodeRef
    seen: NodeRef | None = None
    kind = "build"


class Remove(NamedTuple):
    ref: NodeRef
    kind = "remove"


class Lookup(NamedTuple):
    target: NodeRef
    trace: tuple = ()
    volume: float = 0.0
    kind = "lookup"

    @property
    def ref(self):
        return self.target


class LocalView:
    """Per-level neighbourhood structure derived from one node's ``nh``.

    For each level ``i`` in ``0..level``:

    * ``preds[i]`` / ``succs[i]``: the level-``i`` range on each side, nearest first;
    * ``first_pred[i][b]`` / ``first_succ[i][b]``: nearest node on that side
      whose stream extends the node's ``i``-prefix with bit ``b``;
    * ``farthest_pred[i]`` / ``farthest_succ[i]``: the range boundaries, or
      None when that side lacks one of the two bit classes (unbounded side);
    * ``closest_pred[i]`` / ``closest_succ[i]``.

    ``needed`` is the union of all ranges.
    """

    __slots__ = (
        "level", "cps", "preds", "succs", "first_pred", "first_succ",
        "farthest_pred", "farthest_succ", "closest_pred", "closest_succ",
        "neighbors", "needed", "clean", "order",
    )

    def __init__(self, node: NodeState):
        bits, cap = node.rs.bits, node.rs.cap
        mykey = (node.bw, node.id)
        cps = {}
        above, below = [], []
        for r in node.nh.values():
            diff = bits ^ r.rs.bits
            if not diff:
                raise LevelOverflow(f"nodes {node.id} and {r.id} share all {cap} bits")
            cps[r.id] = cap - diff.bit_length()
            (above if (r.bw, r.id) > mykey else below).append(r)
        above.sort(key=lambda r: (r.bw, r.id))
        below.sort(key=lambda r: (r.bw, r.id), reverse=True)
        level = max(cps.values(), default=0)
        self.level = level
        self.cps = cps
        self.order = sorted(node.nh)
        self.preds, self.first_pred, self.farthest_pred = _side(above, cps, level, bits, cap)
        self.succs, self.first_succ, self.farthest_succ = _side(below, cps, level, bits, cap)
        self.closest_pred = [p[0] if p else None for p in self.preds]
        self.closest_succ = [s[0] if s else None for s in self.succs]
        self.neighbors = [p + s for p, s in zip(self.preds, self.succs)]
        needed = set()
        for nb in self.neighbors:
            needed.update(r.id for r in nb)
        self.needed = needed
        self.clean = len(needed) == len(cps)


def _side(refs, cps, level, bits, cap):
    # One pass over the side, nearest first, feeding every level that is still
    # open.  A side on which only one bit class occurs is unbounded: its range
    # runs to the end of the component and its boundary is reported as None.
    n = level + 1
    ranges = [[] for _ in range(n)]
    firsts = [[None, None] for _ in range(n)]
    farthest = [None] * n
    mine = [(bits >> (cap - 1 - i)) & 1 for i in range(n)]
    pending = list(range(n))
    for r in refs:
        if not pending:
            break
        c = cps[r.id]
        closed = False
        for i in pending:
            if i > c:
                break
            ranges[i].append(r)
            found = firsts[i]
            b = mine[i] if c > i else 1 - mine[i]
            if found[b] is None:
                found[b] = r
                if found[1 - b] is not None:
                    farthest[i] = r
                    closed = True
        if closed:
            pending = [i for i in pending if farthest[i] is None]
    return ranges, firsts, farthest


class NodeState:
    """Protocol state of one live node."""

    __slots__ = ("id", "rs", "bw", "version", "nh", "latest", "departed", "adds", "removes", "_view", "_ref")

    def __init__(self, node_id: int, bw: float, rs: BitStream | None = None):
        if bw <= 0:
            raise InvalidBandwidth(f"bandwidth must be positive, got {bw}")
        self.id = node_id
        self.rs = rs if rs is not None else BitStream.for_node(node_id)
        self.bw = bw
        self.version = 0
        self.nh: dict[int, NodeRef] = {}
        # newest snapshot seen per id, kept after the reference is dropped
        self.latest: dict[int, NodeRef] = {}
        self.departed = False
        self.adds = 0
        self.removes = 0
        self._view = None
        self._ref = None

    def __repr__(self):
        return f"NodeState(id={self.id}, bw={self.bw}, nh={sorted(self.nh)})"

    @property
    def key(self):
        return bandwidth_key(self.bw, self.id)

    def ref(self) -> NodeRef:
        if self._ref is None:
            self._ref = NodeRef(self.id, self.rs, self.bw, self.version)
        return self._ref

    def view(self) -> LocalView:
        if self._view is None:
            self._view = LocalView(self)
        return self._view

    def copy(self) -> NodeState:
        twin = NodeState.__new__(NodeState)
        twin.id, twin.rs, twin.bw, twin.version = self.id, self.rs, self.bw, self.version
        twin.nh = dict(self.nh)
        twin.latest = dict(self.latest)
        twin.departed = self.departed
        twin.adds, twin.removes = self.adds, self.removes
        twin._view = None
        twin._ref = self._ref
        return twin

    # -- neighbourhood edits ------------------------------------------------

    def add_neighbor(self, ref: NodeRef):
        """Store ``ref`` directly (initial topologies and tests)."""
        if ref.id == self.id:
            return
        if ref.id not in self.nh:
            self.adds += 1
        self.nh[ref.id] = ref
        self._view = None

    def _drop(self, node_id):
        del self.nh[node_id]
        self.removes += 1
        self._view = None

    def purge(self, is_live) -> list[int]:
        """Drop references to nodes for which ``is_live(id)`` is false."""
        dead = [w for w in self.nh if not is_live(w)]
        for w in dead:
            self._drop(w)
        for w in [w for w in self.latest if not is_live(w)]:
            del self.latest[w]
        return dead

    # -- local neighbourhood queries ---------------------------------------

    def common_prefix(self, ref: NodeRef) -> int:
        diff = self.rs.bits ^ ref.rs.bits
        if not diff:
            raise LevelOverflow(f"nodes {self.id} and {ref.id} share all bits")
        return self.rs.cap - diff.bit_length()

    def local_level(self) -> int:
        return self.view().level

    def local_first_pred(self, i: int, b: int) -> NodeRef | None:
        view = self.view()
        return view.first_pred[i][b] if i <= view.level else None

    def local_first_succ(self, i: int, b: int) -> NodeRef | None:
        view = self.view()
        return view.first_succ[i][b] if i <= view.level else None

    def local_farthest_pred(self, i: int, b: int | None = None) -> NodeRef | None:
        if b is not None:
            return self.local_first_pred(i, b)
        view = self.view()
        return view.farthest_pred[i] if i <= view.level else None

    def local_farthest_succ(self, i: int, b: int | None = None) -> NodeRef | None:
        if b is not None:
            return self.local_first_succ(i, b)
        view = self.view()
        return view.farthest_succ[i] if i <= view.level else None

    def local_closest_pred(self, i: int) -> NodeRef | None:
        view = self.view()
        return view.closest_pred[i] if i <= view.level else None

    def local_closest_succ(self, i: int) -> NodeRef | None:
        view = self.view()
        return view.closest_succ[i] if i <= view.level else None

    def local_neighbors(self, i: int) -> list[NodeRef]:
        view = self.view()
        return list(view.neighbors[i]) if i <= view.level else []

    def local_predecessors(self, i: int) -> list[NodeRef]:
        view = self.view()
        return list(view.preds[i]) if i <= view.level else []

    def local_successors(self, i: int) -> list[NodeRef]:
        view = self.view()
        return list(view.succs[i]) if i <= view.level else []

    def check_node(self, w: NodeRef) -> bool:
        """Whether ``w`` lies in some local range once it is part of ``nh``."""
        stored = self.nh.get(w.id)
        if stored is None:
            return self._would_keep(w, self.view())
        if stored == w:
            return w.id in self.view().needed
        trial = self.copy()
        trial.nh[w.id] = w
        return w.id in trial.view().needed

    def _would_keep(self, x: NodeRef, view: LocalView) -> bool:
        # Inserting x moves a boundary only when x becomes the nearest node
        # of its bit class, which puts x inside the range anyway; so testing
        # x against the current boundaries is equivalent.
        c = self.common_prefix(x)
        if c > view.level:
            return True
        key = (x.bw, x.id)
        if key > (self.bw, self.id):
            for far in view.farthest_pred[: c + 1]:
                if far is None or key <= far.key:
                    return True
        else:
            for far in view.farthest_succ[: c + 1]:
                if far is None or key >= far.key:
                    return True
        return False

    def _forward_target(self, x: NodeRef) -> int:
        """Neighbour sharing the longest prefix with ``x``; ties go to the smaller id."""
        xb = x.rs.bits
        return min(((xb ^ r.rs.bits).bit_length(), r.id) for r in self.nh.values())[1]

    # -- periodic actions ---------------------------------------------------

    def check_neighborhood(self) -> list:
        """Drop every neighbour outside all local ranges and delegate it.

        Removing such a neighbour never moves a range boundary (boundaries
        are themselves in range), so one pass over a single view matches
        the element-by-element loop.
        """
        view = self._view or self.view()
        if view.clean:
            return []
        needed = view.needed
        drop = [w for w in view.order if w not in needed]
        if len(drop) == len(self.nh):
            drop.pop()
        refs = [self.nh[w] for w in drop]
        for w in drop:
            self._drop(w)
        return [(self._forward_target(r), Build(r)) for r in refs]

    def introduce_node(self) -> list:
        me, nh = self.ref(), self.nh
        return [(w, Build(me, nh[w])) for w in self.view().order]

    def introduce_closest_neighbors(self) -> list:
        view = self.view()
        out = []
        for i in range(view.level + 1):
            targets = [w.id for w in view.neighbors[i]]
            for closest in (view.closest_pred[i], view.closest_succ[i]):
                if closest is not None:
                    msg = Build(closest)
                    out.extend((w, msg) for w in targets)
        return out

    def linearize_neighbors(self) -> list:
        view = self.view()
        out = []
        for i in range(view.level + 1):
            for chain in (view.preds[i], view.succs[i]):
                for near, far in zip(chain, chain[1:]):
                    out.append((near.id, Build(far)))
        return out

    def periodic_action(self) -> list:
        out = self.check_neighborhood()
        out += self.introduce_node()
        out += self.introduce_closest_neighbors()
        out += self.linearize_neighbors()
        return out

    # -- message handlers ---------------------------------------------------

    def handle(self, msg) -> list:
        kind = msg.kind
        if kind == "build":
            return self.handle_build(msg.ref, msg.seen)
        if kind == "remove":
            self.handle_remove(msg.ref)
            return []
        return self.handle_lookup(msg)

    def _outdated(self, copy: NodeRef) -> bool:
        """Whether ``copy`` misstates our bandwidth; a wrong copy that is not
        older than our own snapshot is outranked by bumping our version."""
        if copy.bw == self.bw and copy.version == self.version:
            return False
        if copy.bw != self.bw and copy.version >= self.version:
            self.version = copy.version + 1
            self._ref = None
        return copy.bw != self.bw or copy.version < self.version

    def _freshest(self, x: NodeRef) -> NodeRef:
        known = self.latest.get(x.id)
        if known is None or x.version > known.version or (x.version == known.version and x.bw != known.bw):
            self.latest[x.id] = x
            return x
        return known

    def handle_build(self, x: NodeRef, seen: NodeRef | None = None) -> list:
        if x.id == self.id:
            self._outdated(x)
            return []
        x = self._freshest(x)
        reply = [(x.id, Build(self.ref()))] if seen is not None and self._outdated(seen) else []
        stored = self.nh.get(x.id)
        if stored is not None:
            if x.version > stored.version or (x.version == stored.version and x.bw != stored.bw):
                self.nh[x.id] = x
                self._view = None
            return reply + self.check_neighborhood()
        view = self._view or self.view()
        if self._would_keep(x, view):
            self.nh[x.id] = x
            self.adds += 1
            self._view = None
            return reply + self.check_neighborhood()
        return reply + [(self._forward_target(x), Build(x))]

    def handle_remove(self, x: NodeRef):
        if x.id in self.nh:
            self._drop(x.id)

    def next_hop(self, target: NodeRef) -> int | None:
        """Next node on the way to ``target``; ``None`` once it is reached."""
        if target.id == self.id:
            return None
        view = self.view()
        if not self.nh:
            raise NoRoute(f"node {self.id} has no neighbours")
        length = min(view.level, self.common_prefix(target))
        b = target.rs.bit(length)
        w = view.first_pred[length][b] or view.first_succ[length][b]
        if w is None:
            raise NoRoute(f"node {self.id} has no neighbour toward {target.id} at level {length}")
        return w.id

    def handle_lookup(self, msg: Lookup) -> list:
        trace = msg.trace + (self.id,)
        nxt = self.next_hop(msg.target)
        if nxt is None:
            return []
        return [(nxt, Lookup(msg.target, trace, msg.volume))]

    # -- external operations -------------------------------------------------

    def join(self, contact: NodeRef) -> list:
        self.nh.clear()
        self._view = None
        return [(contact.id, Build(self.ref()))]

    def leave(self) -> list:
        msg = Remove(self.ref())
        out = [(w, msg) for w in sorted(self.nh)]
        self.removes += len(self.nh)
        self.nh.clear()
        self._view = None
        self.departed = True
        return out

    def change_bandwidth(self, bw: float):
        if not bw > 0:
            raise InvalidBandwidth(f"bandwidth must be positive, got {bw}")
        self.bw = bw
        self.version += 1
        self._ref = None
        self._view = None

