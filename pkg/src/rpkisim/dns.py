"""Authoritative nameservers with response-rate limiting, and recursive resolvers.

A nameserver keeps two per-client token buckets.  The response bucket
(``drop_limit``) is checked first: without a token the query is silently
dropped.  The answer bucket (``slip_limit``) comes second: without a token the
client gets an empty truncated reply (TC bit) instead of an answer.  Queries
over TCP bypass both, so truncation is harmless to clients that fall back.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field

from .engine import Engine, FixedLatency, Node, PacketKind, Packet, parse_duration, to_seconds, us
from .ratelimit import RateLimiter

HOUR = 3600.0


@dataclass(frozen=True)
class Record:
    name: str
    value: str
    ttl: float = 300.0
    type: str = "A"


@dataclass
class NameserverConfig:
    zone: dict = field(default_factory=dict)  # name -> Record
    slip_limit: float | None = None
    drop_limit: float | None = None
    bucket_window: float = 0.2

    def __post_init__(self):
        if self.slip_limit is not None and self.drop_limit is not None and self.slip_limit > self.drop_limit:
            raise ValueError("slip_limit must not exceed drop_limit")
        for lim in (self.slip_limit, self.drop_limit):
            if lim is not None and lim <= 0:
                raise ValueError("rate limits must be positive")


class Nameserver(Node):
    """Authoritative server for the names in its zone."""

    def __init__(self, node_id: str, address: str, config: NameserverConfig):
        super().__init__(node_id, address)
        self.config = config
        self.drop_rl: RateLimiter | None = None
        self.slip_rl: RateLimiter | None = None
        self.query_hooks: list = []
        self.stats = {"answer": 0, "truncated": 0, "dropped": 0, "tcp": 0}

    def attach(self, engine: Engine) -> None:
        super().attach(engine)
        cfg = self.config
        if cfg.drop_limit is not None:
            self.drop_rl = RateLimiter(cfg.drop_limit, engine.rng, window=cfg.bucket_window)
        if cfg.slip_limit is not None:
            self.slip_rl = RateLimiter(cfg.slip_limit, engine.rng, window=cfg.bucket_window)

    def handle_query(self, packet: Packet) -> str:
        """Decide ``answer``, ``truncated`` or ``dropped`` for one query."""
        if packet.transport == "tcp":
            self.stats["tcp"] += 1
            return "answer"
        now = self.engine.now
        if self.drop_rl is not None and not self.drop_rl.allow(packet.src, now):
            return "dropped"
        if self.slip_rl is not None and not self.slip_rl.allow(packet.src, now):
            return "truncated"
        return "answer"

    def receive(self, packet: Packet) -> bool:
        if packet.kind is not PacketKind.DNS_QUERY:
            return True
        for hook in self.query_hooks:
            hook(self, packet)
        q = packet.payload
        outcome = self.handle_query(packet)
        self.stats[outcome] += 1
        if outcome == "dropped":
            self.log("dns_drop", client=packet.src, name=q["name"])
            return False
        rec = self.config.zone.get(q["name"])
        reply = {"qid": q["qid"], "name": q["name"]}
        if outcome == "truncated":
            reply["result"] = "truncated"
        elif rec is None:
            reply.update(result="nxdomain")
        else:
            reply.update(result="answer", address=rec.value, ttl=rec.ttl)
        self.log("dns_" + reply["result"], client=packet.src, name=q["name"], transport=packet.transport)
        self.send(packet.src, PacketKind.DNS_RESPONSE, reply, transport=packet.transport)
        return True

    def accept_flood(self, flood) -> None:
        # the response bucket sees the whole flood; the answer bucket only the
        # part the response bucket lets through (approximated as capped at its rate)
        if self.drop_rl is not None:
            self.drop_rl.add_flood(flood)
        if self.slip_rl is not None:
            rate = flood.rate if self.drop_rl is None else min(flood.rate, self.drop_rl.rate)
            self.slip_rl.add_flood(flood, rate)


# -- resolvers -------------------------------------------------------------

class ResolverKind(str, enum.Enum):
    BIND9 = "bind9"
    UNBOUND = "unbound"
    PUBLIC_GOOGLE = "public-google"
    PUBLIC_CLOUDFLARE = "public-cloudflare"


@dataclass(frozen=True)
class BlockedState:
    threshold: int = 16
    block_duration: float = 900.0
    probe_timeout: float = 3.0


@dataclass(frozen=True)
class ResolverProfile:
    kind: ResolverKind
    retry_schedule: tuple
    overall_timeout: float
    blocked_state: BlockedState | None = None
    cache_max_ttl: float = 8 * HOUR
    client_slip_limit: float | None = None
    client_drop_limit: float | None = None
    tcp_fallback: bool = True

    def __post_init__(self):
        s = self.retry_schedule
        if not s or s[0] < 0:
            raise ValueError("retry schedule needs non-negative offsets")
        if any(b <= a for a, b in zip(s, s[1:])):
            raise ValueError("retry offsets must be strictly increasing")
        if s[-1] >= self.overall_timeout:
            raise ValueError("retry offsets must lie within the overall timeout")

    @property
    def n_queries(self) -> int:
        return len(self.retry_schedule)

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value, "retry_schedule": list(self.retry_schedule),
             "overall_timeout": self.overall_timeout, "cache_max_ttl": self.cache_max_ttl,
             "tcp_fallback": self.tcp_fallback}
        if self.blocked_state is not None:
            b = self.blocked_state
            d["blocked_state"] = {"threshold": b.threshold, "block_duration": b.block_duration,
                                  "probe_timeout": b.probe_timeout}
        if self.client_slip_limit is not None:
            d["client_slip_limit"] = self.client_slip_limit
        if self.client_drop_limit is not None:
            d["client_drop_limit"] = self.client_drop_limit
        return d


BIND9_SCHEDULE = (0.0, 0.8, 1.6, 2.4, 4.0, 7.2)
UNBOUND_SCHEDULE = (0.0, 0.4, 0.8, 1.2, 2.0, 2.8, 3.6, 4.4, 6.0, 7.6, 9.2, 10.8, 14.0, 17.2, 20.4, 23.6)

PROFILES = {
    "bind9": ResolverProfile(ResolverKind.BIND9, BIND9_SCHEDULE, 10.0),
    "unbound": ResolverProfile(ResolverKind.UNBOUND, UNBOUND_SCHEDULE, 30.0, BlockedState()),
    "public-google": ResolverProfile(ResolverKind.PUBLIC_GOOGLE, BIND9_SCHEDULE, 10.0,
                                     client_slip_limit=500.0, client_drop_limit=1500.0),
    "public-cloudflare": ResolverProfile(ResolverKind.PUBLIC_CLOUDFLARE, BIND9_SCHEDULE, 10.0,
                                         client_drop_limit=1000.0),
}


def resolver_profile(name: str, **overrides) -> ResolverProfile:
    try:
        base = PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown resolver profile {name!r}") from None
    if not overrides:
        return base
    d = {**base.__dict__, **overrides}
    if isinstance(d.get("blocked_state"), dict):
        d["blocked_state"] = BlockedState(**d["blocked_state"])
    d["retry_schedule"] = tuple(float(x) for x in d["retry_schedule"])
    return ResolverProfile(**d)


def cache_store(ttl: float, now: float, profile: ResolverProfile) -> float | None:
    """Expiry time for a record, or ``None`` when it must not be cached."""
    if ttl < 0:
        raise ValueError("ttl must be non-negative")
    if ttl == 0:
        return None
    return now + min(ttl, profile.cache_max_ttl)


@dataclass
class DnsOutcome:
    result: str  # answer | truncated | servfail | timeout
    resolved_at: float
    queries_sent: int
    address: str | None = None

    def __post_init__(self):
        if self.result == "answer" and self.address is None:
            raise ValueError("answer outcome needs an address")


@dataclass
class _Pending:
    name: str
    ns: list
    started: int
    waiters: list = field(default_factory=list)
    qids: set = field(default_factory=set)
    events: list = field(default_factory=list)
    sent: int = 0
    done: bool = False
    probe: bool = False


class Resolver(Node):
    """Recursive resolver following one implementation's retry profile.

    ``delegations`` maps zone suffixes to nameserver addresses; the longest
    matching suffix wins and retries rotate over its servers.
    """

    def __init__(self, node_id: str, address: str, profile: ResolverProfile,
                 delegations: dict | None = None):
        super().__init__(node_id, address)
        self.profile = profile
        self.delegations = dict(delegations or {})
        self.cache: dict[str, tuple] = {}  # name -> (address, expiry_us)
        self.pending: dict[str, _Pending] = {}
        self.qid_map: dict[int, _Pending] = {}
        self._qids = itertools.count(1)
        self.failures: dict[str, int] = {}  # ns address -> consecutive timeouts
        self.blocked: dict[str, int] = {}  # ns address -> time of last probe
        self.client_drop: RateLimiter | None = None
        self.client_slip: RateLimiter | None = None
        self.outcomes: list[DnsOutcome] = []

    def attach(self, engine: Engine) -> None:
        super().attach(engine)
        p = self.profile
        if p.client_drop_limit is not None:
            self.client_drop = RateLimiter(p.client_drop_limit, engine.rng)
        if p.client_slip_limit is not None:
            self.client_slip = RateLimiter(p.client_slip_limit, engine.rng)

    def nameservers_for(self, name: str) -> list:
        best = None
        for zone in self.delegations:
            if name == zone or name.endswith("." + zone) or zone == ".":
                if best is None or len(zone) > len(best):
                    best = zone
        if best is None:
            raise KeyError(f"no nameserver configured for {name}")
        ns = self.delegations[best]
        return list(ns) if isinstance(ns, (list, tuple)) else [ns]

    # client side ----------------------------------------------------------
    def receive(self, packet: Packet) -> bool:
        if packet.kind is PacketKind.DNS_QUERY:
            return self._client_query(packet)
        if packet.kind is PacketKind.DNS_RESPONSE:
            self._upstream_reply(packet)
        return True

    def _client_query(self, packet: Packet) -> bool:
        now = self.engine.now
        truncated = False
        if packet.transport != "tcp":
            if self.client_drop is not None and not self.client_drop.allow(packet.src, now):
                self.log("dns_drop", client=packet.src, name=packet.payload["name"])
                return False
            if self.client_slip is not None and not self.client_slip.allow(packet.src, now):
                truncated = True
        q = packet.payload
        if truncated:
            self.send(packet.src, PacketKind.DNS_RESPONSE, {"qid": q["qid"], "name": q["name"],
                                                            "result": "truncated"})
            return True

        def reply(outcome: DnsOutcome, src=packet.src, qid=q["qid"], transport=packet.transport):
            body = {"qid": qid, "name": q["name"], "result": outcome.result}
            if outcome.address is not None:
                body["address"] = outcome.address
            self.send(src, PacketKind.DNS_RESPONSE, body, transport=transport)

        self.resolve(q["name"], reply)
        return True

    def accept_flood(self, flood) -> None:
        if self.client_drop is not None:
            self.client_drop.add_flood(flood)
        if self.client_slip is not None:
            rate = flood.rate if self.client_drop is None else min(flood.rate, self.client_drop.rate)
            self.client_slip.add_flood(flood, rate)
        if self.client_drop is None and self.client_slip is None:
            super().accept_flood(flood)

    # resolution -------------------------------------------------------------
    def resolve(self, name: str, callback) -> None:
        """Resolve ``name`` and call ``callback(DnsOutcome)`` when done."""
        now = self.engine.now
        hit = self.cache.get(name)
        if hit is not None and hit[1] > now:
            out = DnsOutcome("answer", to_seconds(now), 0, hit[0])
            self.outcomes.append(out)
            callback(out)
            return
        if name in self.pending:
            self.pending[name].waiters.append(callback)
            return
        ns = self.nameservers_for(name)
        blk = self.profile.blocked_state
        if blk is not None and ns[0] in self.blocked:
            self._blocked_query(name, ns, callback)
            return
        pend = _Pending(name, ns, now, [callback])
        self.pending[name] = pend
        for i, offset in enumerate(self.profile.retry_schedule):
            ev = self.engine.schedule(now + us(offset), self.node_id, self._send_try, pend, i)
            pend.events.append(ev)
        pend.events.append(self.engine.schedule(now + us(self.profile.overall_timeout), self.node_id,
                                                self._timeout, pend))

    def _blocked_query(self, name, ns, callback) -> None:
        blk = self.profile.blocked_state
        now = self.engine.now
        server = ns[0]
        probe_sent = 0
        if now - self.blocked[server] >= us(blk.block_duration) and name not in self.pending:
            self.blocked[server] = now
            pend = _Pending(name, ns, now, [], probe=True)
            self.pending[name] = pend
            self._send_try(pend, 0)
            pend.events.append(self.engine.schedule(now + us(blk.probe_timeout), self.node_id,
                                                    self._timeout, pend))
            probe_sent = 1
        self.log("dns_servfail_blocked", name=name, nameserver=server, probe=probe_sent)
        out = DnsOutcome("servfail", to_seconds(now), probe_sent)
        self.outcomes.append(out)
        callback(out)

    def _send_try(self, pend: _Pending, i: int, transport: str = "udp") -> None:
        if pend.done:
            return
        qid = next(self._qids)
        pend.qids.add(qid)
        self.qid_map[qid] = pend
        pend.sent += 1
        server = pend.ns[i % len(pend.ns)]
        self.send(server, PacketKind.DNS_QUERY, {"qid": qid, "name": pend.name, "type": "A"},
                  transport=transport)

    def _upstream_reply(self, packet: Packet) -> None:
        r = packet.payload
        pend = self.qid_map.pop(r["qid"], None)
        if pend is None or pend.done:
            return
        if r["result"] == "truncated":
            if self.profile.tcp_fallback:
                self._send_try(pend, 0, transport="tcp")
            return
        now = self.engine.now
        self.failures[packet.src] = 0
        self.blocked.pop(packet.src, None)
        if r["result"] == "answer":
            expiry = cache_store(r["ttl"], to_seconds(now), self.profile)
            if expiry is not None:
                self.cache[pend.name] = (r["address"], us(expiry))
            self._finish(pend, DnsOutcome("answer", to_seconds(now), pend.sent, r["address"]))
        else:
            self._finish(pend, DnsOutcome("servfail", to_seconds(now), pend.sent))

    def _timeout(self, pend: _Pending) -> None:
        if pend.done:
            return
        blk = self.profile.blocked_state
        for server in set(pend.ns):
            self.failures[server] = self.failures.get(server, 0) + pend.sent
            if blk is not None and self.failures[server] >= blk.threshold and server not in self.blocked:
                self.blocked[server] = self.engine.now
                self.log("dns_server_blocked", nameserver=server)
        self._finish(pend, DnsOutcome("timeout", to_seconds(self.engine.now), pend.sent))

    def _finish(self, pend: _Pending, outcome: DnsOutcome) -> None:
        pend.done = True
        for ev in pend.events:
            ev.cancel()
        for qid in pend.qids:
            self.qid_map.pop(qid, None)
        self.pending.pop(pend.name, None)
        self.log("dns_resolution", name=pend.name, result=outcome.result, queries=outcome.queries_sent)
        if not pend.probe:
            self.outcomes.append(outcome)
        for cb in pend.waiters:
            cb(outcome)


class StubClient:
    """Client side of a resolver: one query, one timeout.  Used by relying parties."""

    def __init__(self, node: Node, resolver_address: str, timeout: float):
        self.node = node
        self.resolver_address = resolver_address
        self.timeout = timeout
        self._qids = itertools.count(1)
        self.waiting: dict[int, tuple] = {}

    def query(self, name: str, callback) -> None:
        qid = next(self._qids)
        ev = self.node.engine.call_in(self.timeout, self.node.node_id, self._expire, qid)
        self.waiting[qid] = (name, callback, ev)
        self.node.send(self.resolver_address, PacketKind.DNS_QUERY, {"qid": qid, "name": name, "type": "A"})

    def _expire(self, qid: int) -> None:
        item = self.waiting.pop(qid, None)
        if item is not None:
            item[1](DnsOutcome("timeout", to_seconds(self.node.engine.now), 1))

    def on_response(self, packet: Packet) -> None:
        r = packet.payload
        item = self.waiting.get(r["qid"])
        if item is None:
            return
        if r["result"] == "truncated":
            # retry over TCP, same query id
            self.node.send(self.resolver_address, PacketKind.DNS_QUERY,
                           {"qid": r["qid"], "name": item[0], "type": "A"}, transport="tcp")
            return
        del self.waiting[r["qid"]]
        item[2].cancel()
        now = to_seconds(self.node.engine.now)
        if r["result"] == "answer":
            item[1](DnsOutcome("answer", now, 1, r["address"]))
        else:
            item[1](DnsOutcome(r["result"] if r["result"] in ("servfail", "timeout") else "servfail", now, 1))


# -- probing ---------------------------------------------------------------

class _Prober(Node):
    def __init__(self, node_id, address):
        super().__init__(node_id, address)
        self.responses = 0
        self.answers = 0

    def receive(self, packet: Packet) -> bool:
        if packet.kind is PacketKind.DNS_RESPONSE:
            self.responses += 1
            if packet.payload.get("result") in ("answer", "nxdomain"):
                self.answers += 1
        elif packet.kind is PacketKind.TCP_SYNACK:
            self.responses += 1
            self.answers += 1
        return True


DEFAULT_PROBE_RATES = (1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000, 5000, 10000)
MIN_PROBE_PACKETS = 100  # fewer and integer rounding alone looks like loss


def _measure(make_target, kind: PacketKind, rate: float, duration: float, seed: int, name: str):
    engine = Engine(seed=seed, latency=FixedLatency(0.010))
    engine.log.packets = False
    engine.log.enabled = False
    target = engine.register(make_target())
    prober = engine.register(_Prober("prober", "198.51.100.250"))
    duration = max(duration, MIN_PROBE_PACKETS / rate)
    n = int(round(rate * duration))
    gap = 1.0 / rate
    for i in range(n):
        payload = {"qid": i, "name": name, "type": "A"} if kind is PacketKind.DNS_QUERY else {"conn": i}
        engine.schedule(us(i * gap), prober.node_id, prober.send, target.address, kind, payload)
    engine.run_until(us(duration + 1.0))
    return prober.responses / duration, prober.answers / duration


def _plateau(rows, measure, onset, column):
    """Served rate once the limiter saturates: at twice the first lossy rate."""
    for row in rows:
        if row["rate"] >= 2 * onset:
            return row[column]
    row = measure(2 * onset)
    rows.append(row)
    return row[column]


def probe_rate_limit(make_target, rates=DEFAULT_PROBE_RATES, duration: float = 6.0,
                     name: str | None = None, seed: int = 0, threshold: float = 0.9) -> dict:
    """Probe a nameserver at increasing query rates.

    ``make_target`` builds a fresh nameserver node for each rate.  Loss onset
    is the first rate whose response rate falls under ``threshold`` of the
    query rate (drop) or whose answer rate falls under ``threshold`` of the
    response rate (slip).  The reported limit is the rate still served at
    twice the onset, where the bucket is saturated and refill jitter no
    longer matters.
    """
    if name is None:
        zone = make_target().config.zone
        name = next(iter(zone)) if zone else "probe.invalid"
    counter = iter(range(seed, seed + 10_000))

    def measure(rate):
        resp, ans = _measure(make_target, PacketKind.DNS_QUERY, rate, duration, next(counter), name)
        return {"rate": rate, "responses_per_s": resp, "answers_per_s": ans}

    rows = []
    slip_at = drop_at = None
    for rate in rates:
        row = measure(rate)
        rows.append(row)
        if slip_at is None and row["answers_per_s"] < threshold * row["responses_per_s"]:
            slip_at = rate
        if row["responses_per_s"] < threshold * rate:
            drop_at = rate
            break
    drop = None if drop_at is None else _plateau(rows, measure, drop_at, "responses_per_s")
    slip = None if slip_at is None else _plateau(rows, measure, slip_at, "answers_per_s")
    return {"rows": rows, "slip_limit": slip, "drop_limit": drop}


def probe_syn_limit(make_target, rates=DEFAULT_PROBE_RATES, duration: float = 6.0,
                    seed: int = 0, threshold: float = 0.9) -> dict:
    """Probe a publication point with SYNs; same onset and plateau rule on the SYN-ACK rate."""
    counter = iter(range(seed, seed + 10_000))

    def measure(rate):
        resp, _ = _measure(make_target, PacketKind.TCP_SYN, rate, duration, next(counter), "")
        return {"rate": rate, "responses_per_s": resp, "answers_per_s": resp}

    rows = []
    onset = None
    for rate in rates:
        row = measure(rate)
        rows.append(row)
        if row["responses_per_s"] < threshold * rate:
            onset = rate
            break
    limit = None if onset is None else _plateau(rows, measure, onset, "responses_per_s")
    return {"rows": rows, "limit": limit}


def nameserver_from_dict(node_id: str, d: dict) -> Nameserver:
    zone = {}
    for r in d.get("zone", []):
        zone[r["name"]] = Record(r["name"], r["value"], parse_duration(r.get("ttl", 300)), r.get("type", "A"))
    cfg = NameserverConfig(zone, d.get("slip_limit"), d.get("drop_limit"),
                           parse_duration(d.get("bucket_window", 0.2)))
    return Nameserver(node_id, d["address"], cfg)
