"""Relying-party model: periodic sequential refresh, caching and VRP export.

One refresh resolves every known repository domain in a single bulk at its
start, scans the local cache, then walks the tree breadth first from the trust
anchor, one publication point at a time: wait for DNS, connect with the OS SYN
retry schedule, fetch under the profile's idle and throttling timeouts.  A
failed publication point keeps its cached objects.  Validation then rebuilds
the VRP set from the cache; subtrees under expired manifests are dropped.
"""
from __future__ import annotations

import copy
import itertools
from collections import deque
from dataclasses import dataclass, field, replace

from .dns import StubClient
from .engine import Node, Packet, PacketKind, to_seconds, us
from .rpki import Certificate, Manifest, Roa, content_hash

DEPTH_GUARD = 10_000


def linux_syn_schedule(retries: int = 6) -> tuple[tuple, float]:
    """SYN send offsets and the connect timeout for Linux exponential backoff."""
    offsets = tuple(float(2 ** i - 1) for i in range(retries))
    return offsets, float(2 ** retries - 1)


@dataclass(frozen=True)
class Mitigations:
    randomize_sleep: float | None = None
    enforce_depth_cap: int | None = None
    strict_invalid_on_missing: bool = False


@dataclass(frozen=True)
class RelyingPartyProfile:
    name: str
    t_sleep: float
    idle_timeout: float
    throttled_timeout: float | None
    max_depth: int | None
    rsync_throttled_timeout: float | None = None
    local_scan_time: float = 5.0
    tcp_syn_retries: int = 6
    validation_time: tuple = (12.5, 27.5)
    mitigations: Mitigations = field(default_factory=Mitigations)

    def __post_init__(self):
        if self.t_sleep <= 0 or self.idle_timeout <= 0:
            raise ValueError("t_sleep and timeouts must be positive")
        if self.throttled_timeout is not None and self.throttled_timeout < 0:
            raise ValueError("throttled timeout must be non-negative")

    @property
    def depth_limit(self) -> int | None:
        caps = [d for d in (self.max_depth, self.mitigations.enforce_depth_cap) if d is not None]
        return min(caps) if caps else None

    def throttle_budget(self, transport: str) -> float | None:
        """Seconds allowed for a transfer once data flows; ``None`` is unbounded."""
        t = self.throttled_timeout
        if transport == "rsync" and self.rsync_throttled_timeout is not None:
            t = self.rsync_throttled_timeout
        if t == 0:
            # an immediate cut-off would also break benign transfers; a second suffices for them
            return 1.0
        return t

    def stall_per_level(self, transport: str = "rrdp") -> float | None:
        """Longest time one publication point can hold this RP; ``None`` if unbounded."""
        budget = self.throttle_budget(transport)
        if budget is None:
            return None
        if self.throttled_timeout == 0:
            budget = 0.0
        return max(self.idle_timeout, budget)

    def to_dict(self) -> dict:
        m = self.mitigations
        return {"name": self.name, "t_sleep": self.t_sleep, "idle_timeout": self.idle_timeout,
                "throttled_timeout": self.throttled_timeout, "max_depth": self.max_depth,
                "rsync_throttled_timeout": self.rsync_throttled_timeout,
                "local_scan_time": self.local_scan_time, "tcp_syn_retries": self.tcp_syn_retries,
                "validation_time": list(self.validation_time),
                "mitigations": {"randomize_sleep": m.randomize_sleep,
                                "enforce_depth_cap": m.enforce_depth_cap,
                                "strict_invalid_on_missing": m.strict_invalid_on_missing}}


PROFILES = {
    "routinator": RelyingPartyProfile("routinator", 600.0, 300.0, 300.0, 32),
    "fort": RelyingPartyProfile("fort", 3600.0, 24.0, None, 31),
    "octorpki": RelyingPartyProfile("octorpki", 1200.0, 60.0, 60.0, 30, rsync_throttled_timeout=1200.0),
    "ripe-validator": RelyingPartyProfile("ripe-validator", 120.0, 60.0, 0.0, None),
}


def rp_profile(name: str, **overrides) -> RelyingPartyProfile:
    try:
        base = PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown relying-party profile {name!r}") from None
    if "mitigations" in overrides and isinstance(overrides["mitigations"], dict):
        overrides["mitigations"] = Mitigations(**overrides["mitigations"])
    if "validation_time" in overrides:
        overrides["validation_time"] = tuple(overrides["validation_time"])
    return replace(base, **overrides) if overrides else base


@dataclass(frozen=True)
class VrpSet:
    entries: frozenset = frozenset()
    version: int = 0

    def __len__(self):
        return len(self.entries)

    def covering(self, prefix) -> list:
        return [e for e in self.entries if e[0].version == prefix.version and prefix.subnet_of(e[0])]


@dataclass
class _Fetch:
    domain: str
    depth: int
    started: int
    conn: int = 0
    phase: str = "dns"
    timers: list = field(default_factory=list)
    address: str | None = None
    transport: str = "rrdp"


class RelyingParty(Node):
    """A validator instance fed by one trust anchor.

    ``tal`` is the trust anchor certificate (its repository domain is where
    traversal starts).  Routers call ``subscribe`` to receive VRP sets.
    """

    def __init__(self, node_id: str, address: str, profile: RelyingPartyProfile, tal: Certificate,
                 resolver_address: str, dns_timeout: float = 12.0, vrp_delay: float = 2.0,
                 first_refresh_at: float = 0.0):
        super().__init__(node_id, address)
        self.profile = profile
        self.tal = copy.deepcopy(tal)
        self.resolver_address = resolver_address
        self.dns_timeout = dns_timeout
        self.vrp_delay = vrp_delay
        self.first_refresh_at = first_refresh_at
        self.certs: dict[str, Certificate] = {}
        self.manifests: dict[str, Manifest] = {}
        self.roas: dict[str, Roa] = {}
        # cache indexes: parent -> child certs, issuer -> ROAs, domain -> certs
        self._kids: dict[str, dict] = {}
        self._roas_of: dict[str, dict] = {}
        self._at: dict[str, dict] = {}
        self._store_cert(self.tal)
        self.last_successful_fetch: dict[str, float] = {}
        self.vrps = VrpSet()
        self.subscribers: list = []
        self.refresh_listeners: list = []
        self.reports: list[dict] = []
        self.refresh_index = 0
        self.in_flight = 0
        self.max_in_flight = 0
        self._conns = itertools.count(1)
        self._dns: dict[str, object] = {}
        self._dns_waiters: dict[str, list] = {}
        self._current: _Fetch | None = None
        self._queue: deque = deque()
        self._visited: set = set()
        self._outcomes: list = []
        self._refresh_started = 0
        self._guard_tripped = False
        self.stub: StubClient | None = None

    def attach(self, engine) -> None:
        super().attach(engine)
        self.stub = StubClient(self, self.resolver_address, self.dns_timeout)
        engine.schedule(us(self.first_refresh_at), self.node_id, self.start_refresh)

    def subscribe(self, router) -> None:
        self.subscribers.append(router)

    # -- refresh --------------------------------------------------------------
    def known_domains(self) -> list[str]:
        return list(dict.fromkeys(c.pp_uri.domain for c in self.certs.values()))

    def start_refresh(self) -> None:
        self.refresh_index += 1
        self._refresh_started = self.engine.now
        self._dns = {}
        self._dns_waiters = {}
        self._outcomes = []
        self._visited = set()
        self._guard_tripped = False
        self.log("refresh_start", refresh_index=self.refresh_index)
        for domain in self.known_domains():
            self._resolve(domain)
        self.engine.call_in(self.profile.local_scan_time, self.node_id, self._begin_traversal)

    def _resolve(self, domain: str) -> None:
        if domain in self._dns:
            return
        self._dns[domain] = None
        self.stub.query(domain, lambda out, d=domain: self._dns_done(d, out))

    def _dns_done(self, domain: str, outcome) -> None:
        self._dns[domain] = outcome
        for cb in self._dns_waiters.pop(domain, []):
            cb(outcome)

    def _begin_traversal(self) -> None:
        self._queue = deque([(self.tal.pp_uri.domain, 0, self.tal.pp_uri.transport.value)])
        self._visited = {self.tal.pp_uri.domain}
        self._next_pp()

    def _next_pp(self) -> None:
        if not self._queue:
            self._finish_traversal()
            return
        domain, depth, transport = self._queue.popleft()
        f = _Fetch(domain, depth, self.engine.now, transport=transport)
        self._current = f
        self.in_flight += 1
        self.max_in_flight = max(self.max_in_flight, self.in_flight)
        self._resolve(domain)
        outcome = self._dns[domain]
        if outcome is None:
            self._dns_waiters.setdefault(domain, []).append(lambda out, f=f: self._after_dns(f, out))
        else:
            self._after_dns(f, outcome)

    def _after_dns(self, f: _Fetch, outcome) -> None:
        if f is not self._current:
            return
        if outcome.result != "answer":
            self._pp_failed(f, "dns_timeout")
            return
        f.address = outcome.address
        f.phase = "connect"
        f.conn = next(self._conns)
        offsets, timeout = linux_syn_schedule(self.profile.tcp_syn_retries)
        now = self.engine.now
        for off in offsets:
            f.timers.append(self.engine.schedule(now + us(off), self.node_id, self._send_syn, f))
        f.timers.append(self.engine.schedule(now + us(timeout), self.node_id, self._pp_failed, f,
                                             "connect_timeout"))

    def _send_syn(self, f: _Fetch) -> None:
        if f is self._current and f.phase == "connect":
            self.send(f.address, PacketKind.TCP_SYN, {"conn": f.conn}, transport="tcp")

    def _cancel(self, f: _Fetch) -> None:
        for ev in f.timers:
            ev.cancel()
        f.timers = []

    def receive(self, packet: Packet) -> bool:
        kind = packet.kind
        if kind is PacketKind.DNS_RESPONSE:
            self.stub.on_response(packet)
            return True
        f = self._current
        if f is None or not isinstance(packet.payload, dict) or packet.payload.get("conn") != f.conn:
            return True
        if kind is PacketKind.TCP_SYNACK and f.phase == "connect":
            self._cancel(f)
            f.phase = "fetch"
            self.send(f.address, PacketKind.APP_REQUEST,
                      {"conn": f.conn, "domain": f.domain, "op": "fetch"}, transport="tcp")
            f.timers.append(self.engine.call_in(self.profile.idle_timeout, self.node_id,
                                                self._fetch_timeout, f))
        elif kind is PacketKind.APP_RESPONSE and f.phase == "fetch":
            if packet.payload["phase"] == "first_byte":
                self._cancel(f)
                f.phase = "transfer"
                budget = self.profile.throttle_budget(f.transport)
                if budget is not None:
                    f.timers.append(self.engine.call_in(budget, self.node_id, self._fetch_timeout, f))
            elif packet.payload["phase"] == "done":
                self._fetch_done(f, packet.payload["snapshot"])
        elif kind is PacketKind.APP_RESPONSE and f.phase == "transfer" and packet.payload["phase"] == "done":
            self._fetch_done(f, packet.payload["snapshot"])
        return True

    def _fetch_timeout(self, f: _Fetch) -> None:
        if f is not self._current:
            return
        self.send(f.address, PacketKind.APP_REQUEST, {"conn": f.conn, "op": "close"}, transport="tcp")
        self._pp_failed(f, "fetch_timeout")

    def _pp_failed(self, f: _Fetch, reason: str) -> None:
        if f is not self._current:
            return
        self._cancel(f)
        self._record(f, reason)
        self._enqueue_children(f, self._cached_children(f.domain))
        self._advance()

    def _fetch_done(self, f: _Fetch, snap: dict) -> None:
        self._cancel(f)
        self._ingest(snap)
        self.last_successful_fetch[f.domain] = to_seconds(self.engine.now)
        self._record(f, "ok")
        self._enqueue_children(f, self._cached_children(f.domain))
        self._advance()

    def _record(self, f: _Fetch, outcome: str) -> None:
        dur = to_seconds(self.engine.now - f.started)
        self._outcomes.append({"domain": f.domain, "depth": f.depth, "outcome": outcome,
                               "started": to_seconds(f.started), "duration": round(dur, 6)})
        self.log("pp_fetch", domain=f.domain, depth=f.depth, outcome=outcome, duration=round(dur, 6))

    def _advance(self) -> None:
        self._current = None
        self.in_flight -= 1
        self._next_pp()

    def _cached_children(self, domain: str) -> list[Certificate]:
        return [self.certs[k] for cid in self._at.get(domain, ()) for k in self._kids.get(cid, ())]

    def _store_cert(self, cert: Certificate) -> None:
        old = self.certs.get(cert.id)
        if old is not None:
            self._unindex(old)
        self.certs[cert.id] = cert
        self._kids.setdefault(cert.parent, {})[cert.id] = None
        self._at.setdefault(cert.pp_uri.domain, {})[cert.id] = None

    def _unindex(self, cert: Certificate) -> None:
        self._kids.get(cert.parent, {}).pop(cert.id, None)
        self._at.get(cert.pp_uri.domain, {}).pop(cert.id, None)

    def _store_roa(self, roa: Roa) -> None:
        old = self.roas.get(roa.id)
        if old is not None:
            self._roas_of.get(old.issuer, {}).pop(roa.id, None)
        self.roas[roa.id] = roa
        self._roas_of.setdefault(roa.issuer, {})[roa.id] = None

    def _drop_roa(self, rid: str) -> None:
        roa = self.roas.pop(rid)
        self._roas_of.get(roa.issuer, {}).pop(rid, None)

    def _enqueue_children(self, f: _Fetch, children) -> None:
        limit = self.profile.depth_limit
        child_depth = f.depth + 1
        for cert in children:
            dom = cert.pp_uri.domain
            if dom in self._visited:
                continue
            if limit is not None and child_depth > limit:
                continue
            if limit is None and child_depth > DEPTH_GUARD:
                if not self._guard_tripped:
                    self._guard_tripped = True
                    self.log("unbounded_traversal", depth=child_depth)
                continue
            self._visited.add(dom)
            self._queue.append((dom, child_depth, cert.pp_uri.transport.value))

    def _ingest(self, snap: dict) -> None:
        for cid, entry in snap.items():
            manifest = entry["manifest"]
            self.manifests[cid] = manifest
            if cid not in self.certs:
                self._store_cert(entry["cert"])
            listed = manifest.listed
            fresh_ids = set()
            for obj in entry["objects"]:
                if listed.get(obj.id) != content_hash(obj):
                    continue
                fresh_ids.add(obj.id)
                if isinstance(obj, Roa):
                    self._store_roa(obj)
                else:
                    self._store_cert(obj)
            # objects the CA no longer publishes leave the cache
            for rid in [r for r in self._roas_of.get(cid, ()) if r not in fresh_ids]:
                self._drop_roa(rid)
            for xid in [x for x in self._kids.get(cid, ()) if x not in fresh_ids]:
                self._drop_cert(xid)

    def _drop_cert(self, cid: str) -> None:
        for child in list(self._kids.get(cid, ())):
            self._drop_cert(child)
        for rid in list(self._roas_of.get(cid, ())):
            self._drop_roa(rid)
        cert = self.certs.pop(cid, None)
        if cert is not None:
            self._unindex(cert)
        self.manifests.pop(cid, None)

    def _finish_traversal(self) -> None:
        low, high = self.profile.validation_time
        self.engine.call_in(float(self.engine.rng.uniform(low, high)), self.node_id, self._complete_refresh)

    def _complete_refresh(self) -> None:
        now = self.engine.now
        changed = self.recompute_states(to_seconds(now))
        report = {"rp": self.node_id, "refresh_index": self.refresh_index,
                  "started": to_seconds(self._refresh_started), "ended": to_seconds(now),
                  "per_pp": self._outcomes, "vrp_version": self.vrps.version}
        self.reports.append(report)
        self.log("refresh_report", **report)
        if changed:
            self.engine.call_in(self.vrp_delay, self.node_id, self.emit_vrp_delta, self.vrps)
        for cb in self.refresh_listeners:
            cb(self, report)
        delay = self.profile.t_sleep
        jitter = self.profile.mitigations.randomize_sleep
        if jitter:
            delay = max(1.0, delay + float(self.engine.rng.uniform(-jitter, jitter)))
        self.engine.call_in(delay, self.node_id, self.start_refresh)

    # -- validation -------------------------------------------------------------
    def compute_vrps(self, now: float) -> tuple[frozenset, list]:
        """VRP entries from the cache, plus ROAs dropped under expired manifests."""
        entries, dropped = set(), {}
        limit = self.profile.depth_limit

        def subtree_roas(root):
            todo, seen = [root], set()
            while todo:
                cid = todo.pop()
                if cid in seen:
                    continue
                seen.add(cid)
                for rid in self._roas_of.get(cid, ()):
                    dropped[rid] = self.roas[rid]
                todo.extend(self._kids.get(cid, ()))

        stack = [(self.tal.id, 0)]
        seen = set()
        while stack:
            cid, depth = stack.pop()
            if cid in seen:
                continue
            seen.add(cid)
            m = self.manifests.get(cid)
            if m is None:
                continue
            if m.valid_until < now:
                subtree_roas(cid)
                continue
            for r in (self.roas[rid] for rid in self._roas_of.get(cid, ())):
                if m.listed.get(r.id) == content_hash(r) and r.valid_until >= now:
                    entries.add(r.vrp)
            for c in (self.certs[k] for k in self._kids.get(cid, ())):
                if limit is not None and depth + 1 > limit:
                    continue
                if c.not_after >= now and m.listed.get(c.id) == content_hash(c):
                    stack.append((c.id, depth + 1))
        return frozenset(entries), list(dropped.values())

    def recompute_states(self, now: float) -> bool:
        """Rebuild the VRP set; returns True when it changed (version bumped)."""
        entries, dropped = self.compute_vrps(now)
        if self.profile.mitigations.strict_invalid_on_missing and dropped:
            deny = {(r.prefix, r.prefix.max_prefixlen, 0) for r in dropped}
            entries = frozenset(entries | deny)
        if entries != self.vrps.entries:
            self.vrps = VrpSet(entries, self.vrps.version + 1)
            self.log("vrp_update", version=self.vrps.version, entries=len(entries))
            return True
        return False

    def emit_vrp_delta(self, vrps: VrpSet) -> None:
        for router in self.subscribers:
            router.receive_vrps(self.node_id, vrps, self.engine.now)
