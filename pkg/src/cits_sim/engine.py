"""Deterministic discrete-event core.

Events are ordered by ``(time, seq)``; ``seq`` is a per-engine counter so
two events scheduled for the same millisecond fire in insertion order. All
randomness comes from one ``random.Random(seed)`` owned by the engine.
"""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

from .errors import DecodeError, NoInterfaceAvailable, NoRoute, PastTime, UnknownNodeIndex
from .messages import msg_name
from .pdu import DEFAULT_ORDER, DispatchPolicy, Frame, IdTable, Pdu, Preferred, decode_pdu, hybrid_multiplex
from .topology import Link, Topology


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    horizon_ms: int = 60_000
    tick_ms: int = 1000
    preemption_latency: int = 2
    staleness_ms: int = 5000

    def __post_init__(self):
        if not (self.horizon_ms >= self.tick_ms >= 1):
            raise ValueError("require horizon_ms >= tick_ms >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.preemption_latency < 1 or self.staleness_ms < 1:
            raise ValueError("preemption_latency and staleness_ms must be positive")


# -- event kinds -------------------------------------------------------------

@dataclass(frozen=True)
class FrameDelivery:
    frame: Frame
    link: Link
    sender: str
    receiver: str
    policy: DispatchPolicy


@dataclass(frozen=True)
class Timer:
    node: str
    tag: str
    data: Any = None


@dataclass(frozen=True)
class AttackStepDue:
    step: int


@dataclass(order=True)
class Event:
    time: int
    seq: int
    kind: Any = field(compare=False)


@dataclass(frozen=True)
class TraceRecord:
    time: int
    node: str
    direction: str  # send | recv | internal
    msg: str
    summary: str
    alarm: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "time": self.time,
            "node": self.node,
            "direction": self.direction,
            "msg": self.msg,
            "summary": self.summary,
            "alarm": self.alarm,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))


@dataclass
class RunSummary:
    events_processed: int = 0
    final_clock: int = 0
    frames_sent: int = 0
    frames_delivered: int = 0
    frames_duplicate: int = 0
    frames_dropped: int = 0
    frames_in_flight: int = 0

    def reconciles(self) -> bool:
        return self.frames_sent == self.frames_delivered + self.frames_dropped + self.frames_in_flight

    def to_dict(self) -> dict:
        return dict(self.__dict__)


ReceiveHandler = Callable[["Engine", Pdu, Link], None]
TimerHandler = Callable[["Engine", Timer], None]


class Engine:
    """Single-threaded event loop over an immutable :class:`Topology`."""

    def __init__(self, topology: Topology, config: Optional[SimConfig] = None,
                 id_table: Optional[IdTable] = None):
        self.topology = topology
        self.config = config or SimConfig()
        self.id_table = id_table or IdTable.from_ids(topology.node_ids)
        self.rng = random.Random(self.config.seed)
        self.now = 0
        self.trace: List[TraceRecord] = []
        self._queue: List[Event] = []
        self._seq = 0
        self._pdu_seq: Dict[str, int] = {}
        self._seen: set = set()
        self._receivers: Dict[str, ReceiveHandler] = {}
        self._timers: Dict[str, TimerHandler] = {}
        self._attack_handler: Optional[Callable[["Engine", int], None]] = None
        self._events_processed = 0
        self._frames_sent = 0
        self._frames_delivered = 0
        self._frames_duplicate = 0
        self._frames_dropped = 0

    # -- registration --------------------------------------------------------

    def on_receive(self, node: str, handler: ReceiveHandler) -> None:
        self.topology.node(node)
        self._receivers[node] = handler

    def on_timer(self, tag: str, handler: TimerHandler) -> None:
        self._timers[tag] = handler

    def on_attack_step(self, handler: Callable[["Engine", int], None]) -> None:
        self._attack_handler = handler

    # -- scheduling ----------------------------------------------------------

    def schedule(self, at: int, kind) -> int:
        if at < self.now:
            raise PastTime(f"cannot schedule at {at} < now {self.now}")
        self._seq += 1
        heapq.heappush(self._queue, Event(int(at), self._seq, kind))
        return self._seq

    def jitter(self, max_ms: int) -> int:
        """Uniform integer in ``[0, max_ms]`` from the run's seeded generator."""
        return self.rng.randint(0, max_ms) if max_ms > 0 else 0

    def record(self, node: str, direction: str, msg: str, summary: str,
               alarm: Optional[str] = None) -> TraceRecord:
        rec = TraceRecord(self.now, node, direction, msg, summary, alarm)
        self.trace.append(rec)
        return rec

    # -- messaging -----------------------------------------------------------

    def send(self, src: str, dst: str, pdu: Pdu, policy: Optional[DispatchPolicy] = None) -> List[int]:
        """Originate ``pdu`` at ``src`` toward ``dst``; returns first-hop event ids."""
        self.topology.node(src)
        self.topology.node(dst)
        if src == dst:
            raise NoRoute(f"{src} cannot send to itself")
        if self.topology.next_hop(src, dst) is None:
            raise NoRoute(f"no route from {src} to {dst}")
        seq = self._pdu_seq.get(src, 0) + 1
        self._pdu_seq[src] = seq
        pdu = Pdu(msg_type=pdu.msg_type, source=src, dest=dst, payload=pdu.payload,
                  sequence=seq, version=pdu.version)
        policy = policy or Preferred(DEFAULT_ORDER)
        self._seen.add((src, src, pdu.msg_type, seq))
        ids = self._transmit(src, pdu, policy)
        self.record(src, "send", msg_name(pdu.msg_type), f"to {dst}")
        return ids

    def _transmit(self, node: str, pdu: Pdu, policy: DispatchPolicy) -> List[int]:
        nxt = self.topology.next_hop(node, pdu.dest)
        if nxt is None:
            raise NoRoute(f"no route from {node} to {pdu.dest}")
        links = {l.protocol: l for l in self.topology.links_between(node, nxt)}
        try:
            frames = hybrid_multiplex(pdu, links, policy, self.id_table)
        except NoInterfaceAvailable:
            frames = hybrid_multiplex(pdu, links, Preferred(DEFAULT_ORDER), self.id_table)
        ids = []
        for frame in frames:
            link = links[frame.interface]
            ids.append(self.schedule(self.now + link.latency_ms,
                                     FrameDelivery(frame, link, node, nxt, policy)))
        self._frames_sent += len(frames)
        return ids

    def _deliver(self, ev: FrameDelivery) -> None:
        try:
            pdu = decode_pdu(ev.frame, self.id_table)
        except (DecodeError, UnknownNodeIndex) as exc:
            self._frames_dropped += 1
            self.record(ev.receiver, "internal", "DROP", f"undecodable frame from {ev.sender}: {exc}")
            return
        self._frames_delivered += 1
        key = (ev.receiver, pdu.source, pdu.msg_type, pdu.sequence)
        if key in self._seen:
            self._frames_duplicate += 1
            return
        self._seen.add(key)
        name = msg_name(pdu.msg_type)
        if ev.receiver == pdu.dest:
            self.record(ev.receiver, "recv", name, f"from {pdu.source} via {ev.link.protocol.value}")
            handler = self._receivers.get(ev.receiver)
            if handler is not None:
                handler(self, pdu, ev.link)
            return
        self.record(ev.receiver, "internal", name, f"forward {pdu.source}->{pdu.dest}")
        try:
            self._transmit(ev.receiver, pdu, ev.policy)
        except NoRoute as exc:
            self.record(ev.receiver, "internal", "DROP", str(exc))

    # -- main loop -----------------------------------------------------------

    def run(self, until: Optional[int] = None) -> RunSummary:
        until = self.config.horizon_ms if until is None else until
        if until > self.config.horizon_ms:
            raise ValueError(f"until {until} beyond horizon {self.config.horizon_ms}")
        queue = self._queue
        while queue and queue[0].time <= until:
            ev = heapq.heappop(queue)
            self.now = ev.time
            self._events_processed += 1
            kind = ev.kind
            if isinstance(kind, FrameDelivery):
                self._deliver(kind)
            elif isinstance(kind, Timer):
                handler = self._timers.get(kind.tag)
                if handler is not None:
                    handler(self, kind)
            elif isinstance(kind, AttackStepDue):
                if self._attack_handler is not None:
                    self._attack_handler(self, kind.step)
        self.now = max(self.now, until)
        return self.summary()

    def summary(self) -> RunSummary:
        in_flight = sum(1 for ev in self._queue if isinstance(ev.kind, FrameDelivery))
        return RunSummary(
            events_processed=self._events_processed,
            final_clock=self.now,
            frames_sent=self._frames_sent,
            frames_delivered=self._frames_delivered,
            frames_duplicate=self._frames_duplicate,
            frames_dropped=self._frames_dropped,
            frames_in_flight=in_flight,
        )

    def pending(self) -> int:
        return len(self._queue)

    def trace_jsonl(self) -> str:
        return "".join(rec.to_json() + "\n" for rec in self.trace)


def route_latency(topology: Topology, src: str, dst: str) -> Tuple[List[str], int]:
    """Static route and its summed minimum per-hop latency (helper for tests/reports)."""
    path = topology.route(src, dst)
    if path is None:
        raise NoRoute(f"no route from {src} to {dst}")
    total = 0
    for a, b in zip(path, path[1:]):
        total += min(l.latency_ms for l in topology.links_between(a, b))
    return path, total
