"""Publication-point servers: TCP handshake with SYN limiting, and fetch serving.

A fetch returns a snapshot of everything published at one domain: for each
certificate whose repository lives there, its manifest and the objects it
issued.  RRDP and rsync differ only in the transport label.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

from .engine import Engine, Node, Packet, PacketKind, to_seconds, us
from .ratelimit import RateLimiter
from .rpki import RepositoryTree, content_hash, maintain_manifest

MB = 1_000_000
MIB = 1024 * 1024
DEFAULT_BANDWIDTH = 10 * MB


def object_size(obj) -> int:
    """Deterministic size in the 10-100 KB range derived from the content hash."""
    return 10_000 + int(content_hash(obj)[:8], 16) % 90_001


@dataclass(frozen=True)
class Normal:
    bandwidth: float = DEFAULT_BANDWIDTH
    name = "normal"

    def timing(self, size: int) -> tuple[float, float]:
        """(delay to first byte, total duration) for ``size`` bytes."""
        return 0.0, size / self.bandwidth


@dataclass(frozen=True)
class StallIdle:
    hold: float
    bandwidth: float = DEFAULT_BANDWIDTH
    name = "stall_idle"

    def __post_init__(self):
        if self.hold <= 0:
            raise ValueError("hold must be positive")

    def timing(self, size: int) -> tuple[float, float]:
        return self.hold, self.hold + size / self.bandwidth


@dataclass(frozen=True)
class Throttle:
    bandwidth: float
    inflate_to: int
    name = "throttle"

    def __post_init__(self):
        if self.bandwidth <= 0 or self.inflate_to <= 0:
            raise ValueError("bandwidth and inflate_to must be positive")

    def timing(self, size: int) -> tuple[float, float]:
        return 0.0, max(size, self.inflate_to) / self.bandwidth


@dataclass
class Selective:
    """Content and behavior chosen by client address."""
    views: dict  # client address -> (RepositoryTree, behavior)
    default: tuple  # (RepositoryTree, behavior)
    name = "selective"

    def pick(self, client: str) -> tuple:
        return self.views.get(client, self.default)


@dataclass
class FetchSession:
    client: str
    domain: str
    started_at: float
    bytes_total: int
    behavior: str
    bytes_sent: int = 0
    state: str = "handshake"
    events: list = field(default_factory=list, repr=False)

    _ORDER = ("handshake", "serving", "done", "timed_out")

    def advance(self, state: str) -> None:
        if self._ORDER.index(state) <= self._ORDER.index(self.state) or self.state in ("done", "timed_out"):
            raise ValueError(f"session cannot go from {self.state} to {state}")
        self.state = state


def snapshot(tree: RepositoryTree, domain: str) -> dict:
    """Copies of the manifest and issued objects of every CA published at ``domain``."""
    out = {}
    for cid in tree.certs_at(domain):
        out[cid] = {
            "cert": copy.deepcopy(tree.certs[cid]),
            "manifest": copy.deepcopy(tree.manifests[cid]),
            "objects": [copy.deepcopy(o) for o in tree.issued_by(cid)],
        }
    return out


class PublicationPoint(Node):
    """Server for one or more publication-point domains.

    ``tree`` is the live repository; benign servers re-sign manifests of the
    CAs they host every ``check_interval`` seconds per the manifest's own
    threshold and period.
    """

    def __init__(self, node_id: str, address: str, tree: RepositoryTree | None, domains=(),
                 behavior=None, syn_rate_limit: float | None = None, transport: str = "rrdp",
                 maintain: bool = True, check_interval: float = 3600.0, syn_burst: int | None = None):
        super().__init__(node_id, address)
        self.tree = tree
        self.domains = list(domains)
        self.behavior = behavior or Normal()
        self.syn_rate_limit = syn_rate_limit
        self.syn_burst = syn_burst
        self.transport = transport
        self.maintain = maintain
        self.check_interval = check_interval
        self.syn_rl: RateLimiter | None = None
        self.sessions: dict[tuple, FetchSession] = {}
        self.history: list[FetchSession] = []
        self.request_hooks: list = []

    def attach(self, engine: Engine) -> None:
        super().attach(engine)
        if self.syn_rate_limit is not None:
            self.syn_rl = RateLimiter(self.syn_rate_limit, engine.rng, burst=self.syn_burst)
        if self.maintain and self.tree is not None:
            engine.schedule(0, self.node_id, self._maintain)

    def _maintain(self) -> None:
        now = to_seconds(self.engine.now)
        for dom in self.domains:
            for cid in self.tree.certs_at(dom):
                m = self.tree.manifests[cid]
                renewed = maintain_manifest(m, now)
                if renewed is not m:
                    self.tree.manifests[cid] = renewed
                    self.log("manifest_renewed", cert=cid, valid_until=renewed.valid_until)
        self.engine.call_in(self.check_interval, self.node_id, self._maintain)

    # handshake ------------------------------------------------------------
    def handle_syn(self, packet: Packet) -> bool:
        if self.syn_rl is not None and not self.syn_rl.allow(packet.src, self.engine.now):
            return False
        self.send(packet.src, PacketKind.TCP_SYNACK, packet.payload, transport="tcp")
        return True

    def accept_flood(self, flood) -> None:
        if flood.kind is PacketKind.TCP_SYN and self.syn_rl is not None:
            self.syn_rl.add_flood(flood)
        elif flood.kind is not PacketKind.TCP_SYN:
            super().accept_flood(flood)

    def receive(self, packet: Packet) -> bool:
        if packet.kind is PacketKind.TCP_SYN:
            return self.handle_syn(packet)
        if packet.kind is PacketKind.APP_REQUEST:
            req = packet.payload
            if req.get("op") == "close":
                self._close(packet.src, req["conn"])
            else:
                self.serve_fetch(packet.src, req)
        return True

    # serving ----------------------------------------------------------------
    def view_for(self, client: str) -> tuple:
        if isinstance(self.behavior, Selective):
            return self.behavior.pick(client)
        return self.tree, self.behavior

    def serve_fetch(self, client: str, req: dict) -> FetchSession:
        for hook in self.request_hooks:
            hook(self, client, req)
        domain = req["domain"]
        tree, behavior = self.view_for(client)
        snap = snapshot(tree, domain) if tree is not None else {}
        size = sum(object_size(v["manifest"]) + sum(object_size(o) for o in v["objects"])
                   for v in snap.values()) or 1
        first, total = behavior.timing(size)
        if isinstance(behavior, Throttle):
            size = max(size, behavior.inflate_to)
        now = self.engine.now
        sess = FetchSession(client, domain, to_seconds(now), size, behavior.name)
        sess.advance("serving")
        key = (client, req["conn"])
        self.sessions[key] = sess
        self.history.append(sess)
        conn = req["conn"]
        sess.events.append(self.engine.schedule(now + us(first), self.node_id, self._first_byte, client, conn))
        sess.events.append(self.engine.schedule(now + us(total), self.node_id, self._complete,
                                                client, conn, snap))
        return sess

    def _first_byte(self, client, conn) -> None:
        sess = self.sessions.get((client, conn))
        if sess is not None and sess.state == "serving":
            self.send(client, PacketKind.APP_RESPONSE, {"conn": conn, "phase": "first_byte"}, transport="tcp")

    def _complete(self, client, conn, snap) -> None:
        sess = self.sessions.pop((client, conn), None)
        if sess is None or sess.state != "serving":
            return
        sess.bytes_sent = sess.bytes_total
        sess.advance("done")
        dur = to_seconds(self.engine.now) - sess.started_at
        self.log("pp_session", client=client, domain=sess.domain, behavior=sess.behavior,
                 duration=round(dur, 6), outcome="done")
        self.send(client, PacketKind.APP_RESPONSE,
                  {"conn": conn, "phase": "done", "domain": sess.domain, "snapshot": snap},
                  size_bytes=sess.bytes_total, transport="tcp")

    def _close(self, client, conn) -> None:
        sess = self.sessions.pop((client, conn), None)
        if sess is None or sess.state != "serving":
            return
        for ev in sess.events:
            ev.cancel()
        elapsed = to_seconds(self.engine.now) - sess.started_at
        if isinstance(self.view_for(client)[1], Throttle):
            sess.bytes_sent = min(sess.bytes_total, int(elapsed * self.view_for(client)[1].bandwidth))
        sess.advance("timed_out")
        self.log("pp_session", client=client, domain=sess.domain, behavior=sess.behavior,
                 duration=round(elapsed, 6), outcome="timed_out")

