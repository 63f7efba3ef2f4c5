"""Deterministic discrete-event engine.

Simulated time is an integer number of microseconds since the start of the
run.  All randomness flows from a single seeded ``numpy.random.Generator``
owned by the engine, so a (scenario, seed) pair always replays to the same
event log.
"""
from __future__ import annotations

import enum
import heapq
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

import numpy as np

US_PER_S = 1_000_000


def us(seconds: float) -> int:
    """Convert seconds to integer microseconds."""
    return int(round(seconds * US_PER_S))


def to_seconds(t_us: int) -> float:
    return t_us / US_PER_S


_UNITS = {"us": 1e-6, "ms": 1e-3, "s": 1.0, "m": 60.0, "min": 60.0, "h": 3600.0, "d": 86400.0}


def parse_duration(value: Any) -> float:
    """Parse ``300``, ``"300s"``, ``"2.6h"``, ``"545d"`` into seconds."""
    if isinstance(value, bool):
        raise ValueError(f"not a duration: {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    text = str(value).strip()
    for unit in sorted(_UNITS, key=len, reverse=True):
        if text.endswith(unit):
            number = text[: -len(unit)].strip()
            try:
                return float(number) * _UNITS[unit]
            except ValueError:
                break
    try:
        return float(text)
    except ValueError:
        raise ValueError(f"not a duration: {value!r}") from None


class PacketKind(str, enum.Enum):
    DNS_QUERY = "dns-query"
    DNS_RESPONSE = "dns-response"
    TCP_SYN = "tcp-syn"
    TCP_SYNACK = "tcp-synack"
    APP_REQUEST = "app-request"
    APP_RESPONSE = "app-response"


@dataclass(frozen=True)
class Packet:
    src: str
    dst: str
    kind: PacketKind
    payload: Any = None
    size_bytes: int = 64
    transport: str = "udp"
    true_origin: str = ""

    def __post_init__(self):
        if self.size_bytes <= 0:
            raise ValueError("size_bytes must be positive")


# -- latency models -------------------------------------------------------

@dataclass(frozen=True)
class FixedLatency:
    seconds: float = 0.010

    def sample(self, rng: np.random.Generator) -> int:
        return us(self.seconds)

    def to_dict(self) -> dict:
        return {"kind": "fixed", "value": self.seconds}


@dataclass(frozen=True)
class UniformLatency:
    low: float
    high: float

    def __post_init__(self):
        if not 0 <= self.low <= self.high:
            raise ValueError("uniform latency needs 0 <= low <= high")

    def sample(self, rng: np.random.Generator) -> int:
        return us(rng.uniform(self.low, self.high))

    def to_dict(self) -> dict:
        return {"kind": "uniform", "low": self.low, "high": self.high}


def latency_from_dict(spec: dict | None):
    if spec is None:
        return FixedLatency()
    kind = spec.get("kind", "fixed")
    if kind == "fixed":
        return FixedLatency(parse_duration(spec.get("value", 0.010)))
    if kind == "uniform":
        return UniformLatency(parse_duration(spec["low"]), parse_duration(spec["high"]))
    raise ValueError(f"unknown latency kind {kind!r}")


# -- event log ------------------------------------------------------------

class EventLog:
    """Line-delimited structured records ``{time, node, event_kind, detail}``.

    ``packets=False`` drops per-packet records and ``enabled=False`` drops
    everything, which keeps long Monte Carlo runs cheap.
    """

    PACKET_KINDS = frozenset({"packet_delivered", "packet_ratelimited", "packet_blackholed"})

    def __init__(self, packets: bool = True, enabled: bool = True):
        self.records: list[dict] = []
        self.packets = packets
        self.enabled = enabled

    def emit(self, t_us: int, node: str, event_kind: str, detail: dict | None = None):
        if not self.enabled:
            return
        if not self.packets and event_kind in self.PACKET_KINDS:
            return
        self.records.append(
            {"time": to_seconds(t_us), "node": node, "event_kind": event_kind, "detail": detail or {}}
        )

    def __len__(self):
        return len(self.records)

    def lines(self, start: int = 0) -> Iterable[str]:
        for rec in self.records[start:]:
            yield json.dumps(rec, sort_keys=True, separators=(",", ":"), default=_json_default)

    def dumps(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for line in self.lines():
                fh.write(line + "\n")

    def of_kind(self, kind: str) -> list[dict]:
        return [r for r in self.records if r["event_kind"] == kind]


def _json_default(obj):
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (set, frozenset)):
        return sorted(obj, key=str)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return str(obj)


# -- events and nodes -----------------------------------------------------

@dataclass(order=True)
class Event:
    fire_at: int
    seq: int
    target: str = field(compare=False)
    action: Callable = field(compare=False, repr=False)
    args: tuple = field(compare=False, default=(), repr=False)
    cancelled: bool = field(compare=False, default=False)

    def cancel(self) -> None:
        self.cancelled = True


class Node:
    """Anything that owns an address on the simulated network.

    ``receive`` returns ``False`` when the node's ingress rate limiter dropped
    the packet; the engine records that as the packet's outcome.
    """

    can_spoof = False

    def __init__(self, node_id: str, address: str):
        self.node_id = node_id
        self.address = address
        self.engine: Engine | None = None

    def attach(self, engine: "Engine") -> None:
        self.engine = engine

    def receive(self, packet: Packet) -> bool:
        return True

    def accept_flood(self, flood) -> None:
        raise TypeError(f"{self.node_id} has no rate limiter to flood")

    # convenience wrappers
    @property
    def now(self) -> int:
        return self.engine.now

    def send(self, dst: str, kind: PacketKind, payload=None, *, src: str | None = None,
             size_bytes: int = 64, transport: str = "udp", latency=None) -> Packet:
        pkt = Packet(src=src or self.address, dst=dst, kind=kind, payload=payload,
                     size_bytes=size_bytes, transport=transport, true_origin=self.node_id)
        self.engine.send(pkt, latency)
        return pkt

    def log(self, event_kind: str, **detail) -> None:
        self.engine.log.emit(self.engine.now, self.node_id, event_kind, detail)


class SimulationStopped(Exception):
    pass


class Engine:
    def __init__(self, seed: int = 0, log: EventLog | None = None, latency=None):
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.log = log if log is not None else EventLog()
        self.latency = latency or FixedLatency()
        self.now = 0
        self.nodes: dict[str, Node] = {}
        self.by_id: dict[str, Node] = {}
        self._queue: list[Event] = []
        self._seq = itertools.count()
        self._stopped = False
        self.processed = 0
        self.packet_hooks: list[Callable] = []  # called as hook(node, packet, accepted)

    # registration ---------------------------------------------------------
    def register(self, node: Node) -> Node:
        if node.address in self.nodes:
            raise ValueError(f"address {node.address} already registered")
        self.nodes[node.address] = node
        self.by_id[node.node_id] = node
        node.attach(self)
        return node

    def node(self, node_id: str) -> Node:
        return self.by_id[node_id]

    # scheduling -----------------------------------------------------------
    def schedule(self, fire_at: int, target: str, action: Callable, *args) -> Event:
        if fire_at < self.now:
            raise ValueError(f"cannot schedule at {fire_at} before now={self.now}")
        ev = Event(int(fire_at), next(self._seq), target, action, args)
        heapq.heappush(self._queue, ev)
        return ev

    def call_in(self, delay_s: float, target: str, action: Callable, *args) -> Event:
        return self.schedule(self.now + us(delay_s), target, action, *args)

    def stop(self) -> None:
        self._stopped = True

    def pending(self) -> int:
        return sum(1 for ev in self._queue if not ev.cancelled)

    def run_until(self, t_us: int) -> list[dict]:
        """Process every event with ``fire_at <= t_us``; returns the log segment."""
        if t_us < self.now:
            raise ValueError("run_until target lies in the past")
        mark = len(self.log.records)
        self._stopped = False
        queue = self._queue
        while queue and queue[0].fire_at <= t_us and not self._stopped:
            ev = heapq.heappop(queue)
            if ev.cancelled:
                continue
            self.now = ev.fire_at
            ev.action(*ev.args)
            self.processed += 1
        if not self._stopped:
            self.now = t_us
        return self.log.records[mark:]

    def run_for(self, seconds: float) -> list[dict]:
        return self.run_until(self.now + us(seconds))

    # packets ----------------------------------------------------------------
    def _check_spoof(self, packet: Packet) -> None:
        origin = self.by_id.get(packet.true_origin)
        if origin is not None and packet.src != origin.address and not origin.can_spoof:
            raise PermissionError(f"{origin.node_id} cannot spoof source {packet.src}")

    def send(self, packet: Packet, latency=None) -> None:
        self._check_spoof(packet)
        node = self.nodes.get(packet.dst)
        if node is None:
            self.log.emit(self.now, packet.true_origin, "packet_blackholed",
                          {"src": packet.src, "dst": packet.dst, "kind": packet.kind.value})
            return
        delay = (latency or self.latency).sample(self.rng)
        self.schedule(self.now + delay, node.node_id, self._deliver, node, packet)

    def _deliver(self, node: Node, packet: Packet) -> None:
        accepted = node.receive(packet)
        for hook in self.packet_hooks:
            hook(node, packet, accepted is not False)
        kind = "packet_delivered" if accepted is not False else "packet_ratelimited"
        self.log.emit(self.now, node.node_id, kind,
                      {"src": packet.src, "dst": packet.dst, "kind": packet.kind.value,
                       "transport": packet.transport})

    def inject_flood(self, sender: Node, src: str, dst: str, rate: float,
                     start_us: int, end_us: int, kind: PacketKind) -> "Flood":
        """Aggregate stream of spoofed packets from ``sender`` towards ``dst``.

        The stream is a Poisson process of intensity ``rate`` over
        ``[start, end)``; its nominal size ``round(rate * window)`` is what the
        sender emits and what gets accounted.
        """
        if src != sender.address and not sender.can_spoof:
            raise PermissionError(f"{sender.node_id} cannot spoof source {src}")
        if end_us <= start_us or rate < 0:
            raise ValueError("flood needs a positive window and non-negative rate")
        flood = Flood(src=src, dst=dst, rate=float(rate), start_us=int(start_us),
                      end_us=int(end_us), kind=kind, origin=sender.node_id)
        node = self.nodes.get(dst)
        self.log.emit(max(self.now, start_us), sender.node_id, "flood",
                      {"src": src, "dst": dst, "rate": rate, "start": to_seconds(start_us),
                       "end": to_seconds(end_us), "packets": flood.packets, "kind": kind.value})
        if node is None:
            self.log.emit(self.now, sender.node_id, "packet_blackholed",
                          {"src": src, "dst": dst, "kind": kind.value, "count": flood.packets})
            return flood
        if rate > 0:
            node.accept_flood(flood)
        return flood


@dataclass(frozen=True)
class Flood:
    src: str
    dst: str
    rate: float
    start_us: int
    end_us: int
    kind: PacketKind
    origin: str = ""

    @property
    def window(self) -> float:
        return to_seconds(self.end_us - self.start_us)

    @property
    def packets(self) -> int:
        return int(round(self.rate * self.window))

    @property
    def start(self) -> float:
        return to_seconds(self.start_us)

    @property
    def end(self) -> float:
        return to_seconds(self.end_us)

