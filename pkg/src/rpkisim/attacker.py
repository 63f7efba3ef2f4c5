"""Attack orchestration.

The attacker watches its own nameserver to learn when the victim relying
party starts a refresh (every refresh resolves all repository domains at
once), predicts the next start, and fires a short spoofed burst at the
victim's rate-limited server only inside the predicted window.  Optionally it
grows a delegation chain under its own CA, served slowly and only to the
victim, to stretch one refresh past the lifetime of the victim's manifest.
"""
from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field

import numpy as np

from .bgp import Announcement, Topology
from .dns import Record
from .engine import Engine, Node, PacketKind, to_seconds, us
from .pubpoint import MIB, Normal, PublicationPoint, Selective, StallIdle, Throttle
from .rpki import RepositoryTree, Roa, build_delegation_chain, parse_prefix

STALL_MARGIN = 0.5  # hold just under the victim's idle timeout so every level still completes


class Target(str, enum.Enum):
    PP_SYN = "pp_syn"
    NS_DNS = "ns_dns"
    PUBLIC_RESOLVER = "public_resolver"


class StopCondition(str, enum.Enum):
    MANIFEST_EXPIRED = "manifest_expired"
    MAX_DURATION = "max_duration"


FLOOD_KIND = {Target.PP_SYN: PacketKind.TCP_SYN, Target.NS_DNS: PacketKind.DNS_QUERY,
              Target.PUBLIC_RESOLVER: PacketKind.DNS_QUERY}


class IntervalPredictor:
    """Refresh-start predictor from query arrivals at an attacker-run server.

    Arrivals closer than ``cluster_gap`` belong to the same refresh.  The
    period is a trimmed mean of the last ``history`` gaps between refreshes.
    Optional end-of-traversal sightings (``observe_end``) anchor the next
    start on the last end plus the usual end-to-start lead, which stays
    stable even when the attack itself changes how long a refresh takes.
    """

    def __init__(self, window_halfwidth: float = 15.0, offset: float = 0.0, cluster_gap: float = 60.0,
                 history: int = 30):
        if window_halfwidth <= 0 or cluster_gap <= 0 or history < 1:
            raise ValueError("window_halfwidth, cluster_gap and history must be positive")
        self.window_halfwidth = window_halfwidth
        self.offset = offset
        self.cluster_gap = cluster_gap
        self.history = history
        self.observations: list[float] = []
        self.ends: list[float] = []
        self._last_arrival: float | None = None

    def observe(self, t: float) -> bool:
        """Record one arrival; True when it starts a new refresh cluster."""
        new = self._last_arrival is None or t - self._last_arrival > self.cluster_gap
        self._last_arrival = t
        if new:
            self.observations.append(t)
        return new

    def observe_end(self, t: float) -> None:
        """Record a sighting near the end of a traversal."""
        self.ends.append(t)

    def _trimmed_mean(self, values) -> float:
        values = np.asarray(values[-self.history:], dtype=float)
        if len(values) >= 5:
            values = np.sort(values)[1:-1]
        return float(np.mean(values))

    @property
    def estimated_period(self) -> float | None:
        obs = self.observations
        if len(obs) < 2:
            return None
        return self._trimmed_mean(list(np.diff(obs)))

    @property
    def estimated_lead(self) -> float | None:
        """Mean time from the last end sighting of a refresh to the next start."""
        leads = []
        for prev, start in zip(self.observations, self.observations[1:]):
            between = [e for e in self.ends if prev < e < start]
            if between:
                leads.append(start - between[-1])
        return self._trimmed_mean(leads) if leads else None

    def next_start(self, after: float | None = None) -> float | None:
        period = self.estimated_period
        if period is None:
            return None
        lead = self.estimated_lead
        if lead is not None and self.ends and self.ends[-1] > self.observations[-1]:
            t = self.ends[-1] + lead
        else:
            t = self.observations[-1] + period
        if after is not None:
            while t + self.offset - self.window_halfwidth < after:
                t += period
        return t

    def predict(self, after: float | None = None) -> tuple[float, float] | None:
        """Next burst window ``(start, end)``, or None before two refreshes were seen."""
        t = self.next_start(after)
        if t is None:
            return None
        c = t + self.offset
        return c - self.window_halfwidth, c + self.window_halfwidth


@dataclass
class StallorisPlan:
    depth: int
    width: int = 1
    per_level_hold: float | None = None  # None: just under the victim's idle timeout
    throttle_bandwidth: float = 100_000.0
    inflate_to: int = 100 * MIB

    def __post_init__(self):
        if self.depth < 1 or self.width < 1:
            raise ValueError("stalloris depth and width must be at least 1")


@dataclass
class AttackPlan:
    target: Target
    target_address: str
    spoof_src: str
    r_attacker: float
    window_halfwidth: float = 15.0
    window_offset: float = 0.0
    warmup_refreshes: int = 2
    stalloris: StallorisPlan | None = None
    stop_condition: StopCondition = StopCondition.MANIFEST_EXPIRED
    max_duration: float = 48 * 3600.0
    bursts: list = field(default_factory=list)

    def __post_init__(self):
        self.target = Target(self.target)
        self.stop_condition = StopCondition(self.stop_condition)
        if self.r_attacker < 0:
            raise ValueError("r_attacker must be non-negative")
        if self.window_halfwidth <= 0:
            raise ValueError("window_halfwidth must be positive")
        if self.warmup_refreshes < 2:
            raise ValueError("the predictor needs at least two observed refreshes")

    def add_burst(self, start: float, end: float) -> None:
        if end <= start:
            raise ValueError("burst window must have positive length")
        if self.bursts and start < self.bursts[-1][1]:
            raise ValueError("burst windows must be ordered and non-overlapping")
        self.bursts.append((start, end))


@dataclass
class BurstRecord:
    window_start: float
    window_end: float
    packets: int
    victim_attempts_denied: int = 0
    victim_attempts_served: int = 0


class Attacker(Node):
    """Off-path attacker able to spoof source addresses."""

    can_spoof = True

    def __init__(self, node_id: str, address: str, plan: AttackPlan, predictor: IntervalPredictor | None = None):
        super().__init__(node_id, address)
        self.plan = plan
        self.predictor = predictor or IntervalPredictor(plan.window_halfwidth, plan.window_offset)
        self.records: list[BurstRecord] = []
        self.refresh_callbacks: list = []
        self.end_callbacks: list = []

    def attach(self, engine: Engine) -> None:
        super().attach(engine)
        engine.packet_hooks.append(self._count_victim_packet)

    def watch(self, nameserver, name: str) -> None:
        """Observe queries for ``name`` arriving at a nameserver the attacker runs."""

        def hook(ns, packet, name=name):
            if packet.payload.get("name") == name and self.predictor.observe(to_seconds(self.engine.now)):
                for cb in self.refresh_callbacks:
                    cb(to_seconds(self.engine.now))

        nameserver.query_hooks.append(hook)

    def watch_pp(self, pp, client_address: str) -> None:
        """Observe ``client_address`` fetching from a publication point the attacker runs."""

        def hook(_pp, client, req):
            if client == client_address:
                t = to_seconds(self.engine.now)
                self.predictor.observe_end(t)
                for cb in self.end_callbacks:
                    cb(t)

        pp.request_hooks.append(hook)

    def execute_burst(self, start: float, end: float) -> BurstRecord:
        """Spoofed stream at ``r_attacker`` across ``[start, end)`` towards the plan's target."""
        if us(start) < self.engine.now:
            raise ValueError("burst window must not start in the past")
        plan = self.plan
        plan.add_burst(start, end)
        packets = 0
        if plan.r_attacker > 0:
            flood = self.engine.inject_flood(self, plan.spoof_src, plan.target_address, plan.r_attacker,
                                             us(start), us(end), FLOOD_KIND[plan.target])
            packets = flood.packets
        rec = BurstRecord(start, end, packets)
        self.records.append(rec)
        self.log("attack_burst", window_start=start, window_end=end, packets=packets)
        return rec

    def _count_victim_packet(self, node, packet, accepted: bool) -> None:
        plan = self.plan
        if packet.src != plan.spoof_src or packet.dst != plan.target_address:
            return
        if packet.transport == "tcp" and plan.target is not Target.PP_SYN:
            return  # DNS over TCP bypasses rate limiting
        if packet.kind is not FLOOD_KIND[plan.target] or not self.records:
            return
        t = to_seconds(self.engine.now)
        rec = self.records[-1]
        if rec.window_start <= t < rec.window_end:
            if accepted:
                rec.victim_attempts_served += 1
            else:
                rec.victim_attempts_denied += 1

    @property
    def packets_sent(self) -> int:
        return sum(r.packets for r in self.records)


# -- stalloris ----------------------------------------------------------------

def stall_behavior(profile, plan: StallorisPlan, transport: str = "rrdp"):
    """Per-level stall bounded by the victim profile's timeouts."""
    if profile.throttle_budget(transport) is None:
        # no limit once data flows: trickle an inflated file
        return Throttle(plan.throttle_bandwidth, plan.inflate_to)
    hold = plan.per_level_hold if plan.per_level_hold is not None else profile.idle_timeout - STALL_MARGIN
    return StallIdle(hold)


def deploy_stalloris(pp: PublicationPoint, attacker_cert: str, victim_address: str, profile,
                     plan: StallorisPlan, nameserver=None) -> RepositoryTree:
    """Serve a delegation chain under ``attacker_cert`` to the victim only.

    ``plan.depth`` counts the stalled publication points along one path,
    the attacker CA's own included.  Other clients keep seeing the CA
    without children.  Chain domains are added to ``nameserver``'s zone.
    """
    base = pp.tree
    cert = base.certs[attacker_cert]
    stalled = base.copy()
    if plan.depth > 1:
        frag = build_delegation_chain(plan.depth - 1, plan.width, cert.pp_uri.domain, cert.resources,
                                      address=pp.address, prefix=f"{attacker_cert}-chain")
        stalled.graft(frag, attacker_cert)
        known = set(pp.domains)
        pp.domains.extend(d for d in frag.domain_map if d not in known)
        if nameserver is not None:
            ttl = nameserver.config.zone[cert.pp_uri.domain].ttl
            for d in frag.domain_map:
                nameserver.config.zone[d] = Record(d, pp.address, ttl)
    pp.behavior = Selective({victim_address: (stalled, stall_behavior(profile, plan))}, (base, Normal()))
    pp.log("stalloris_deployed", victim=victim_address, depth=plan.depth, width=plan.width)
    return stalled


# -- downgrade ------------------------------------------------------------------

@dataclass
class AttackReport:
    success: bool
    iterations: int
    packets_sent: int
    attack_start: float | None
    downgraded_at: float | None
    hijack_outcome: str | None
    victim_reachability: int | None
    refreshes_observed: int
    stall_deployed_at: float | None
    bursts: list

    @property
    def time_to_downgrade(self) -> float | None:
        if self.downgraded_at is None or self.attack_start is None:
            return None
        return self.downgraded_at - self.attack_start

    def summary(self) -> dict:
        return {"success": self.success, "iterations": self.iterations, "packets_sent": self.packets_sent,
                "attack_start": self.attack_start, "downgraded_at": self.downgraded_at,
                "time_to_downgrade": self.time_to_downgrade, "hijack_outcome": self.hijack_outcome,
                "victim_reachability": self.victim_reachability,
                "refreshes_observed": self.refreshes_observed, "stall_deployed_at": self.stall_deployed_at}

    def bursts_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["window_start", "packets", "victim_attempts_denied"])
        for b in self.bursts:
            w.writerow([f"{b.window_start:.6f}", b.packets, b.victim_attempts_denied])
        return buf.getvalue()


@dataclass
class HijackSetup:
    topology: Topology
    announcement: Announcement
    observer_asn: int
    observer_address: str
    victim_address: str


class DowngradeCampaign:
    """Wires an attacker to a victim relying party and drives the attack.

    Phases: let refreshes succeed until the period is known, then burst every
    predicted window (with Stalloris, deploy the chain as soon as the first
    burst-covered refresh starts and stop bursting while it stalls), until the
    victim ROA leaves the relying party's VRP set or ``max_duration`` passes.
    """

    def __init__(self, engine: Engine, attacker: Attacker, rp, victim_roa: Roa,
                 stall_pp: PublicationPoint | None = None, attacker_cert: str | None = None,
                 stall_nameserver=None, hijack: HijackSetup | None = None):
        self.engine = engine
        self.attacker = attacker
        self.rp = rp
        self.victim_vrp = victim_roa.vrp
        self.stall_pp = stall_pp
        self.attacker_cert = attacker_cert
        self.stall_nameserver = stall_nameserver
        self.hijack = hijack
        self.attack_start: float | None = None
        self.downgraded_at: float | None = None
        self.stall_deployed_at: float | None = None
        self._stall_refresh: int | None = None
        self.hijack_outcome: str | None = None
        self.victim_reachability: int | None = None
        self.finished = False
        self._scheduled_until = -1.0
        self._scheduled_start = -1.0
        attacker.refresh_callbacks.append(self._on_refresh_start)
        attacker.end_callbacks.append(self._on_traversal_end)
        rp.refresh_listeners.append(self._on_refresh_done)

    @property
    def plan(self) -> AttackPlan:
        return self.attacker.plan

    def _on_refresh_start(self, t: float) -> None:
        if self.finished:
            return
        pred = self.attacker.predictor
        if self.attack_start is None and len(pred.observations) < self.plan.warmup_refreshes:
            return
        if self.plan.stalloris is not None and self.attack_start is not None and self.stall_deployed_at is None:
            last = self.attacker.records[-1] if self.attacker.records else None
            if last is not None and last.window_start <= t <= last.window_end:
                self._deploy_stall(t)
                return
        if self.stall_deployed_at is not None and self._stall_active():
            return
        if pred.estimated_lead is None:
            self._schedule_next(t)

    def _on_traversal_end(self, t: float) -> None:
        # a better anchor than the refresh start once end-to-start leads are known
        pred = self.attacker.predictor
        lead = pred.estimated_lead
        if self.finished or lead is None or self._scheduled_start > t + lead / 2:
            return
        if self.attack_start is None and len(pred.observations) < self.plan.warmup_refreshes:
            return
        if self.stall_deployed_at is not None and self._stall_active():
            return
        self._schedule_next(t)

    def _stall_active(self) -> bool:
        return self.rp._current is not None and self.rp.refresh_index == self._stall_refresh

    def _deploy_stall(self, t: float) -> None:
        self.stall_deployed_at = t
        self._stall_refresh = self.rp.refresh_index
        deploy_stalloris(self.stall_pp, self.attacker_cert, self.rp.address, self.rp.profile,
                         self.plan.stalloris, self.stall_nameserver)

    def _schedule_next(self, now: float) -> None:
        window = self.attacker.predictor.predict(after=max(now, self._scheduled_until))
        if window is None:
            return
        start, end = window
        if self.attack_start is None:
            self.attack_start = start
            self.engine.schedule(us(start + self.plan.max_duration), self.attacker.node_id, self._timeout)
        self._scheduled_until = end
        self._scheduled_start = start
        self.engine.schedule(us(start), self.attacker.node_id, self._fire, start, end)

    def _fire(self, start: float, end: float) -> None:
        if not self.finished:
            self.attacker.execute_burst(start, end)

    def _on_refresh_done(self, rp, report) -> None:
        if self.finished or self.attack_start is None or self.downgraded_at is not None:
            return
        if self.victim_vrp not in rp.vrps.entries:
            self.downgraded_at = to_seconds(self.engine.now)
            rp.log("downgrade_observed", vrp=list(map(str, self.victim_vrp)))
            # routers see the new VRP set after the relying party's export delay
            self.engine.call_in(rp.vrp_delay + 1.0, self.attacker.node_id, self._conclude)

    def _conclude(self) -> None:
        if self.hijack is not None:
            h = self.hijack
            self.hijack_outcome = h.topology.hijack_outcome(h.announcement.prefix, h.announcement,
                                                            h.observer_asn)
            self.victim_reachability = h.topology.reachability(h.observer_address, h.victim_address)
        self.finished = True
        self.engine.stop()

    def _timeout(self) -> None:
        if self.finished or self.downgraded_at is not None:
            return
        self.finished = True
        if self.hijack is not None:
            self._evaluate_without_downgrade()
        self.engine.stop()

    def _evaluate_without_downgrade(self) -> None:
        h = self.hijack
        self.hijack_outcome = h.topology.hijack_outcome(h.announcement.prefix, h.announcement, h.observer_asn)
        self.victim_reachability = h.topology.reachability(h.observer_address, h.victim_address)

    def report(self) -> AttackReport:
        return AttackReport(success=self.downgraded_at is not None, iterations=len(self.attacker.records),
                            packets_sent=self.attacker.packets_sent, attack_start=self.attack_start,
                            downgraded_at=self.downgraded_at, hijack_outcome=self.hijack_outcome,
                            victim_reachability=self.victim_reachability,
                            refreshes_observed=len(self.attacker.predictor.observations),
                            stall_deployed_at=self.stall_deployed_at, bursts=list(self.attacker.records))


def run_downgrade(campaign: DowngradeCampaign, horizon: float) -> AttackReport:
    """Run the engine until the campaign concludes or ``horizon`` seconds have elapsed."""
    engine = campaign.engine
    engine.run_until(us(horizon))
    if not campaign.finished and campaign.hijack is not None and campaign.hijack_outcome is None:
        campaign._evaluate_without_downgrade()
    return campaign.report()


# -- victim identification --------------------------------------------------------

@dataclass
class VictimIdState:
    candidate_rps: list  # addresses
    sigma: RepositoryTree
    sigma_bar: RepositoryTree
    results: dict = field(default_factory=dict)

    def __post_init__(self):
        a = {r.id: r for r in self.sigma.roas.values()}
        b = {r.id: r for r in self.sigma_bar.roas.values()}
        if a.keys() != b.keys():
            raise ValueError("both ROA sets must contain the same ROAs")
        differing = [rid for rid in a if (a[rid].prefix, a[rid].max_len, a[rid].asn)
                     != (b[rid].prefix, b[rid].max_len, b[rid].asn)]
        if len(differing) != 1 or a[differing[0]].prefix != b[differing[0]].prefix \
                or a[differing[0]].max_len != b[differing[0]].max_len:
            raise ValueError("the ROA sets must differ only in the first ROA's origin ASN")


def roa_pair_trees(tree: RepositoryTree, issuer: str, p1, p2, attacker_asn: int, other_asn: int,
                   max_len: int | None = None) -> tuple[RepositoryTree, RepositoryTree]:
    """Trees publishing the agreeing ROA pair and the pair with the first origin swapped."""
    if other_asn == attacker_asn:
        raise ValueError("the swapped origin must differ from the attacker ASN")
    p1, p2 = parse_prefix(p1), parse_prefix(p2)
    trees = []
    for asn1 in (attacker_asn, other_asn):
        t = tree.copy()
        t.add_roa(Roa("vid-rho1", p1, asn1, max_len or p1.prefixlen, issuer))
        t.add_roa(Roa("vid-rho2", p2, attacker_asn, max_len or p2.prefixlen, issuer))
        trees.append(t)
    return trees[0], trees[1]


def classify_round(r1: int, r2: int) -> str:
    if (r1, r2) == (0, 1):
        return "match"
    if (r1, r2) == (1, 1):
        return "no-match"
    return "invalid"


def identify_victim_rp(engine: Engine, state: VictimIdState, pp: PublicationPoint, topology: Topology,
                       target_address: str, a1: str, a2: str, round_wait: float = 1800.0) -> dict:
    """Serve the swapped ROA pair to one candidate at a time and probe the target.

    A round is only trusted when no AS between the target and the attacker
    enforces ROV itself; otherwise it is marked invalid.
    """
    rounds = []
    for cand in state.candidate_rps:
        pp.behavior = Selective({cand: (state.sigma_bar, Normal())}, (state.sigma, Normal()))
        engine.run_for(round_wait)
        r1 = topology.reachability(a1, target_address)
        r2 = topology.reachability(a2, target_address)
        outcome = classify_round(r1, r2)
        path = topology.forward_path(topology.as_of(target_address), a2)
        if path is not None and any(topology.ases[h].rov_rp for h in path[1:-1]):
            outcome = "invalid"
        state.results[cand] = outcome
        rounds.append({"candidate": cand, "r1": r1, "r2": r2, "outcome": outcome,
                       "time": to_seconds(engine.now)})
        engine.log.emit(engine.now, "attacker", "victim_id_round", rounds[-1])
        if outcome == "match":
            pp.behavior = Normal()
            pp.tree = state.sigma
            return {"result": cand, "rounds": rounds}
    pp.behavior = Normal()
    pp.tree = state.sigma
    outcomes = set(state.results[c] for c in state.candidate_rps)
    return {"result": "no-match" if outcomes == {"no-match"} else "indeterminate", "rounds": rounds}
