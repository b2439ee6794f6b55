"""Simulated message-passing world with FIFO channels and two schedulers.

``step_round`` implements the synchronous rounds used for measurements:
every live node, in ascending id order, processes everything that was in its
channels at the start of the round and then runs its periodic action once.
Messages emitted during a round are held back until the round ends.

``step_async`` executes one enabled action per call (deliver the head of one
channel, or run one node's periodic action), choosing at random but forcing
the longest-waiting action once it has waited three quarters of the fairness
window.
"""

from __future__ import annotations

import copy
import heapq
import random
from collections import Counter
from dataclasses import dataclass, field

from hskip.core import DEFAULT_CAP, BitStream, HSkipError
from hskip.oracle import GlobalView, LegalityReport, TargetEdgeSet, ViewNode, is_legal, target_edges
from hskip.protocol import Build, Lookup, NodeRef, NodeState, NoRoute

PERIODIC = "periodic"
REACTIVE = "reactive"


class UnknownNode(HSkipError):
    pass


class QueueOverflow(HSkipError):
    """More messages are queued than the configured ceiling allows."""


class FifoViolation(HSkipError):
    pass


@dataclass
class LookupRecord:
    source: int
    target: int
    trace: tuple
    volume: float

    @property
    def hops(self) -> int:
        return len(self.trace) - 1


@dataclass
class MetricsSink:
    totals: Counter = field(default_factory=Counter)
    rounds: list = field(default_factory=list)
    traffic: Counter = field(default_factory=Counter)
    lookups: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    isolations: list = field(default_factory=list)

    @property
    def messages(self) -> int:
        return self.totals["periodic"] + self.totals["reactive"]


class World:
    """Live nodes, FIFO channels, scheduler state and metrics.

    ``inbox[dst]`` holds ``(src, message, seq)`` entries for every channel
    into ``dst`` in arrival order, so each channel ``src -> dst`` is the
    subsequence with that ``src`` and keeps FIFO order.
    """

    def __init__(self, seed: int = 0, *, cap: int = DEFAULT_CAP, queue_limit: int = 10**7,
                 trace=None, check_fifo: bool = False):
        self.seed = seed
        self.cap = cap
        self.live: dict[int, NodeState] = {}
        self.departed: set[int] = set()
        self.inbox: dict[int, list] = {}
        self.clock = 0
        self.steps = 0
        self.rng = random.Random(seed)
        self.metrics = MetricsSink()
        self.queue_limit = queue_limit
        self.trace = trace
        self.check_fifo = check_fifo
        self._last_seq: dict[tuple[int, int], int] = {}
        self._seq = 0
        self._next = None
        self._version = 0
        self._target = None
        self._target_version = -1
        self._retired_changes = 0
        # asynchronous scheduler state; rebuilt lazily after synchronous rounds
        self._async_ready = False
        self._pairs: Counter = Counter()
        self._since: dict = {}
        self._actions: list = []
        self._slot: dict = {}
        self._heap: list = []

    # -- membership -----------------------------------------------------------

    def add_node(self, node_id: int, bw: float, rs: BitStream | None = None) -> NodeState:
        if node_id in self.live or node_id in self.departed:
            raise ValueError(f"node id {node_id} already used")
        node = NodeState(node_id, bw, rs if rs is not None else BitStream.for_node(node_id, self.cap))
        self.live[node_id] = node
        self._version += 1
        if self._async_ready:
            self._enable(("node", node_id))
        return node

    def node(self, node_id: int) -> NodeState:
        try:
            return self.live[node_id]
        except KeyError:
            raise UnknownNode(node_id) from None

    def ref(self, node_id: int) -> NodeRef:
        return self.node(node_id).ref()

    def _retire(self, node_id):
        node = self.live.pop(node_id)
        self._retired_changes += node.adds + node.removes
        self.departed.add(node_id)
        dropped = self.inbox.pop(node_id, ())
        self.metrics.totals["dropped"] += len(dropped)
        if self._async_ready:
            for src, _, _ in dropped:
                self._pairs[(src, node_id)] = 0
                self._disable(("chan", src, node_id))
            self._disable(("node", node_id))
        self._version += 1

    def join(self, node_id: int, bw: float, contact: int, rs: BitStream | None = None) -> NodeState:
        contact_ref = self.ref(contact)
        node = self.add_node(node_id, bw, rs)
        self._emit(node_id, node.join(contact_ref), REACTIVE)
        return node

    def leave(self, node_id: int):
        node = self.node(node_id)
        out = node.leave()
        self.metrics.totals["remove"] += len(out)
        self._emit(node_id, out, REACTIVE)
        self._retire(node_id)

    def crash(self, victims):
        victims = set(victims)
        unknown = victims - self.live.keys()
        if unknown:
            raise UnknownNode(sorted(unknown))
        for v in sorted(victims):
            self._retire(v)

    def change(self, node_id: int, bw: float):
        self.node(node_id).change_bandwidth(bw)
        self._version += 1

    def is_live(self, node_id: int) -> bool:
        return node_id in self.live

    def detect_and_purge(self, node_id: int) -> list[int]:
        """Failure detection: forget neighbours that are no longer live."""
        node = self.live[node_id]
        dead = node.purge(self.live.__contains__)
        if dead and not node.nh:
            self.metrics.isolations.append((self.clock, node_id))
        return dead

    # -- messaging --------------------------------------------------------------

    def send(self, src: int, dst: int, msg, origin: str = REACTIVE):
        if msg.kind != "build":
            self.metrics.totals[msg.kind] += 1
        self._emit(src, [(dst, msg)], origin)

    def _emit(self, src, out, origin):
        if not out:
            return
        self.metrics.totals[origin] += len(out)
        if self.trace is not None:
            clock = self.clock
            self.trace.writelines(
                f"{clock},{src},{dst},{msg.kind},{msg.ref.id},{origin}\n" for dst, msg in out
            )
        boxes = self._next if self._next is not None else self.inbox
        live = self.live
        seq = self._seq
        for dst, msg in out:
            if dst not in live:
                self.metrics.totals["dropped"] += 1
                continue
            box = boxes.get(dst)
            if box is None:
                box = boxes[dst] = []
            box.append((src, msg, seq))
            seq += 1
        self._seq = seq
        if self._async_ready:
            for dst, _ in out:
                if dst not in live:
                    continue
                pair = (src, dst)
                self._pairs[pair] += 1
                if self._pairs[pair] == 1:
                    self._enable(("chan", src, dst))

    def queued(self) -> int:
        n = sum(len(box) for box in self.inbox.values())
        if self._next is not None:
            n += sum(len(box) for box in self._next.values())
        return n

    def _deliver(self, node: NodeState, src: int, msg, seq):
        if self.check_fifo:
            last = self._last_seq.get((src, node.id), -1)
            if seq <= last:
                raise FifoViolation(f"channel {src}->{node.id} delivered {seq} after {last}")
            self._last_seq[(src, node.id)] = seq
        if self.departed and msg.ref.id not in self.live:
            self.metrics.totals["dead_payload"] += 1
            return
        if msg.__class__ is Build:
            out = node.handle_build(msg.ref, msg.seen)
            if out:
                self._emit(node.id, out, REACTIVE)
        elif msg.__class__ is Lookup:
            self._handle_lookup(node, msg)
        else:
            node.handle_remove(msg.ref)

    def _handle_lookup(self, node, msg):
        try:
            out = node.handle_lookup(msg)
        except NoRoute as exc:
            self.metrics.failures.append((msg.trace[0] if msg.trace else node.id, msg.target.id, str(exc)))
            return
        if not out:
            trace = msg.trace + (node.id,)
            self.metrics.lookups.append(LookupRecord(trace[0], node.id, trace, msg.volume))
            return
        self.metrics.traffic[node.id] += msg.volume
        self.metrics.totals["lookup"] += 1
        self._emit(node.id, out, REACTIVE)

    def start_lookup(self, src: int, target: int, volume: float = 0.0):
        """Hand a fresh lookup for ``target`` to ``src``."""
        self._handle_lookup(self.node(src), Lookup(self.ref(target), (), volume))

    # -- synchronous rounds --------------------------------------------------

    def step_round(self, on_turn=None):
        """One synchronous round; ``on_turn(world, node_id)`` runs after each node's turn."""
        self._async_ready = False
        self._next = {}
        live = self.live
        try:
            for v in sorted(live):
                node = live.get(v)
                if node is None:
                    continue
                if self.departed:
                    self.detect_and_purge(v)
                box = self.inbox.pop(v, None)
                if box:
                    for src, msg, seq in box:
                        self._deliver(node, src, msg, seq)
                self._emit(v, node.periodic_action(), PERIODIC)
                if on_turn is not None:
                    on_turn(self, v)
        finally:
            nxt, self._next = self._next, None
            leftover = self.inbox
            self.inbox = nxt
            for dst, box in leftover.items():
                if dst in live:
                    nxt.setdefault(dst, [])[0:0] = box
            dropped = [dst for dst in nxt if dst not in live]
            for dst in dropped:
                self.metrics.totals["dropped"] += len(nxt.pop(dst))
        self.clock += 1
        queued = self.queued()
        if queued > self.queue_limit:
            raise QueueOverflow(f"{queued} queued messages exceed limit {self.queue_limit}")
        self._record_round()

    def _record_round(self):
        totals = self.metrics.totals
        self.metrics.rounds.append({
            "round": self.clock,
            "messages": totals["periodic"] + totals["reactive"],
            "periodic": totals["periodic"],
            "reactive": totals["reactive"],
            "edge_changes": self.edge_changes(),
            "live": len(self.live),
        })

    def edge_changes(self) -> int:
        return self._retired_changes + sum(n.adds + n.removes for n in self.live.values())

    # -- asynchronous scheduler --------------------------------------------------

    def _prepare_async(self):
        self._pairs = Counter()
        self._since, self._actions, self._slot, self._heap = {}, [], {}, []
        for v in sorted(self.live):
            self._enable(("node", v))
        for dst in sorted(self.inbox):
            for src, _, _ in self.inbox[dst]:
                self._pairs[(src, dst)] += 1
                self._enable(("chan", src, dst))
        self._async_ready = True

    def _enable(self, action):
        if action in self._slot:
            return
        self._slot[action] = len(self._actions)
        self._actions.append(action)
        self._touch(action)

    def _disable(self, action):
        idx = self._slot.pop(action, None)
        if idx is None:
            return
        last = self._actions.pop()
        if idx < len(self._actions):
            self._actions[idx] = last
            self._slot[last] = idx
        self._since.pop(action, None)

    def _touch(self, action):
        self._since[action] = self.steps
        heapq.heappush(self._heap, (self.steps, action))

    def fairness_window(self) -> int:
        """Steps within which every enabled action is guaranteed to run."""
        if not self._async_ready:
            self._prepare_async()
        return 4 * len(self._actions)

    def action_age(self, action) -> int | None:
        since = self._since.get(action)
        return None if since is None else self.steps - since

    def step_async(self):
        """Execute exactly one enabled action and return it."""
        if not self._async_ready:
            self._prepare_async()
        if not self._actions:
            return None
        window = self.fairness_window()
        action = None
        while self._heap:
            since, candidate = self._heap[0]
            if self._since.get(candidate) != since:
                heapq.heappop(self._heap)
                continue
            if self.steps - since >= window - len(self._actions):
                action = candidate
            break
        if action is None:
            action = self._actions[self.rng.randrange(len(self._actions))]
        self.steps += 1
        if action[0] == "node":
            v = action[1]
            if self.departed:
                self.detect_and_purge(v)
            self._emit(v, self.live[v].periodic_action(), PERIODIC)
            self._touch(action)
        else:
            _, src, dst = action
            box = self.inbox[dst]
            idx = next(k for k, entry in enumerate(box) if entry[0] == src)
            _, msg, seq = box.pop(idx)
            if not box:
                del self.inbox[dst]
            self._pairs[(src, dst)] -= 1
            if self._pairs[(src, dst)]:
                self._touch(action)
            else:
                del self._pairs[(src, dst)]
                self._disable(action)
            self._deliver(self.live[dst], src, msg, seq)
        return action

    # -- global observation -------------------------------------------------------

    def global_view(self, nodes=None) -> GlobalView:
        ids = self.live if nodes is None else nodes
        return GlobalView(ViewNode(v, self.live[v].rs, self.live[v].bw) for v in ids)

    def target(self) -> TargetEdgeSet:
        if self._target_version != self._version:
            self._target = target_edges(self.global_view())
            self._target_version = self._version
        return self._target

    def explicit_edges(self) -> set[tuple[int, int]]:
        return {(v, w) for v, node in self.live.items() for w in node.nh}

    def cached_info(self) -> dict[tuple[int, int], float]:
        return {(v, w): ref.bw for v, node in self.live.items() for w, ref in node.nh.items()}

    def legality(self) -> LegalityReport:
        return is_legal(self.global_view(), self.explicit_edges(), self.cached_info(), self.target())

    def is_legal(self) -> bool:
        """Fast equivalent of ``legality().legal``."""
        levels = self.target().levels
        live = self.live
        for v, node in live.items():
            nh = node.nh
            if nh.keys() != levels[v].keys():
                return False
            for w, ref in nh.items():
                if live[w].bw != ref.bw:
                    return False
        return True

    def implicit_edges(self):
        for boxes in (self.inbox, self._next or {}):
            for dst, box in boxes.items():
                for _, msg, _ in box:
                    yield dst, msg.ref.id

    def components(self) -> list[set[int]]:
        """Weakly connected components over explicit and implicit edges."""
        parent = {v: v for v in self.live}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        def union(a, b):
            if a in parent and b in parent:
                ra, rb = find(a), find(b)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)

        for v, node in self.live.items():
            for w in node.nh:
                union(v, w)
        for v, w in self.implicit_edges():
            union(v, w)
        groups: dict[int, set[int]] = {}
        for v in self.live:
            groups.setdefault(find(v), set()).add(v)
        return sorted(groups.values(), key=lambda g: (-len(g), min(g)))

    def connectivity_check(self) -> bool:
        return len(self.components()) <= 1

    def max_degree(self) -> int:
        return max((len(n.nh) for n in self.live.values()), default=0)

    def clone(self) -> World:
        """Independent copy sharing only immutable references and bit streams."""
        twin = copy.copy(self)
        twin.live = {v: n.copy() for v, n in self.live.items()}
        twin.departed = set(self.departed)
        twin.inbox = {d: list(box) for d, box in self.inbox.items()}
        twin.rng = random.Random()
        twin.rng.setstate(self.rng.getstate())
        twin.metrics = copy.deepcopy(self.metrics)
        twin._last_seq = dict(self._last_seq)
        twin._async_ready = False
        twin.trace = None
        return twin
