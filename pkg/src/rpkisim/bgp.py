"""Minimal BGP with route-origin validation.

ASes originate prefixes and pass routes to their neighbors; an IXP route
server re-advertises member routes transparently and drops the ones its
relying party classifies invalid.  Routes learned from the route server are
not exported again, which keeps peers from preferring each other's copies.  Propagation runs to a fixpoint whenever a
decision is needed, so convergence is instantaneous between simulation events.
"""
from __future__ import annotations

import enum
import ipaddress
from dataclasses import dataclass, field

from .rpki import parse_prefix


class RouteState(str, enum.Enum):
    VALID = "valid"
    INVALID = "invalid"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class Announcement:
    prefix: object
    origin_asn: int
    as_path: tuple = ()
    learned_from: str = "direct-peer"
    local_pref: int = 100

    def __post_init__(self):
        object.__setattr__(self, "prefix", parse_prefix(self.prefix))
        path = tuple(self.as_path) or (self.origin_asn,)
        if path[-1] != self.origin_asn:
            raise ValueError("origin_asn must be the last AS on the path")
        object.__setattr__(self, "as_path", path)


def _entries(vrps):
    return getattr(vrps, "entries", vrps) or ()


def classify(ann: Announcement, vrps) -> RouteState:
    """Route origin validation of one announcement against a set of VRPs."""
    covered = False
    p = ann.prefix
    for prefix, max_len, asn in _entries(vrps):
        if prefix.version != p.version or not p.subnet_of(prefix):
            continue
        covered = True
        # AS0 never matches a real origin
        if asn != 0 and asn == ann.origin_asn and p.prefixlen <= max_len:
            return RouteState.VALID
    return RouteState.INVALID if covered else RouteState.UNKNOWN


def best_path(candidates) -> Announcement:
    """More specific first, then LOCAL_PREF, shorter AS path, lower origin ASN."""
    cands = list(candidates)
    if not cands:
        raise ValueError("best_path needs at least one candidate")
    return min(cands, key=lambda a: (-a.prefix.prefixlen, -a.local_pref, len(a.as_path),
                                     a.origin_asn, a.as_path))


@dataclass
class AutonomousSystem:
    asn: int
    prefixes: list = field(default_factory=list)  # originated
    addresses: list = field(default_factory=list)  # hosts actually living here
    neighbors: dict = field(default_factory=dict)  # asn -> (learned_from label, local_pref)
    rov_rp: str | None = None
    ixp_local_pref: int = 200

    def hosts(self, address) -> bool:
        a = ipaddress.ip_address(address)
        return any(ipaddress.ip_address(x) == a for x in self.addresses)


@dataclass
class RouteServer:
    members: list = field(default_factory=list)
    rp_source: str | None = None


class Topology:
    """ASes, links and an optional IXP route server, plus VRP sets per RP."""

    def __init__(self, log=None, clock=None):
        self.ases: dict[int, AutonomousSystem] = {}
        self.route_server: RouteServer | None = None
        self.vrps: dict[str, object] = {}
        self.extra: list[Announcement] = []
        self.log = log
        self.clock = clock or (lambda: 0)
        self._rib = None

    # construction ---------------------------------------------------------
    def add_as(self, asn: int, prefixes=(), addresses=(), rov_rp: str | None = None,
               ixp_local_pref: int = 200) -> AutonomousSystem:
        if asn in self.ases:
            raise ValueError(f"AS{asn} defined twice")
        a = AutonomousSystem(asn, [parse_prefix(p) for p in prefixes], list(addresses), {}, rov_rp,
                             ixp_local_pref)
        self.ases[asn] = a
        self._rib = None
        return a

    def link(self, a: int, b: int, label_ab: str = "direct-peer", pref_ab: int = 100,
             label_ba: str | None = None, pref_ba: int | None = None) -> None:
        """Bidirectional session; ``label_ab``/``pref_ab`` describe how ``a`` sees ``b``."""
        self.ases[a].neighbors[b] = (label_ab, pref_ab)
        self.ases[b].neighbors[a] = (label_ba or label_ab, pref_ba if pref_ba is not None else pref_ab)
        self._rib = None

    def set_route_server(self, members, rp_source: str | None) -> None:
        for m in members:
            if m not in self.ases:
                raise KeyError(f"route-server member AS{m} not defined")
        self.route_server = RouteServer(list(members), rp_source)
        self._rib = None

    def receive_vrps(self, rp_id: str, vrps, t=None) -> None:
        self.vrps[rp_id] = vrps
        self._rib = None

    def announce(self, ann: Announcement) -> None:
        self.extra.append(ann)
        self._rib = None

    def withdraw_extra(self) -> None:
        self.extra.clear()
        self._rib = None

    # route computation ----------------------------------------------------
    def vrps_for(self, rp_id: str | None):
        return self.vrps.get(rp_id, ()) if rp_id else ()

    def _accepts(self, asn: int, ann: Announcement) -> bool:
        rp = self.ases[asn].rov_rp
        return rp is None or classify(ann, self.vrps_for(rp)) is not RouteState.INVALID

    def _originated(self):
        for a in self.ases.values():
            for p in a.prefixes:
                yield a.asn, Announcement(p, a.asn, (a.asn,), "origin", 1000)
        for ann in self.extra:
            yield ann.origin_asn, Announcement(ann.prefix, ann.origin_asn, (ann.origin_asn,), "origin", 1000)

    def rib(self) -> dict:
        """Best route per (AS, prefix) after propagation to a fixpoint."""
        if self._rib is not None:
            return self._rib
        rib: dict[int, dict] = {asn: {} for asn in self.ases}
        for asn, ann in self._originated():
            cur = rib[asn].get(ann.prefix)
            rib[asn][ann.prefix] = ann if cur is None else best_path([cur, ann])
        rs = self.route_server
        for _ in range(4 * len(self.ases) + 8):
            changed = False
            offers: dict[int, dict] = {asn: {} for asn in self.ases}
            for asn, a in self.ases.items():
                for prefix, route in rib[asn].items():
                    if route.learned_from == "route-server":
                        # peering routes are not passed on to other peers
                        continue
                    for nb, _ in a.neighbors.items():
                        if nb in route.as_path:
                            continue
                        label, pref = self.ases[nb].neighbors[asn]
                        offers[nb].setdefault(prefix, []).append(
                            Announcement(prefix, route.origin_asn, (asn,) + route.as_path
                                         if route.learned_from != "origin" else route.as_path,
                                         label, pref))
            if rs is not None:
                rs_vrps = self.vrps_for(rs.rp_source)
                for m in rs.members:
                    for prefix, route in rib[m].items():
                        if route.learned_from == "route-server":
                            continue
                        path = route.as_path
                        if route.learned_from != "origin" and path[0] != m:
                            path = (m,) + path
                        ann = Announcement(prefix, route.origin_asn, path, "route-server", 0)
                        if rs.rp_source is not None and classify(ann, rs_vrps) is RouteState.INVALID:
                            continue
                        for other in rs.members:
                            if other == m or other in path:
                                continue
                            offers[other].setdefault(prefix, []).append(
                                Announcement(prefix, route.origin_asn, path, "route-server",
                                             self.ases[other].ixp_local_pref))
            new: dict[int, dict] = {}
            for asn in self.ases:
                table = {}
                for own_asn, ann in self._originated():
                    if own_asn == asn:
                        cur = table.get(ann.prefix)
                        table[ann.prefix] = ann if cur is None else best_path([cur, ann])
                for prefix, cands in offers[asn].items():
                    if prefix in table and table[prefix].learned_from == "origin":
                        continue
                    ok = [c for c in cands if self._accepts(asn, c)]
                    if ok:
                        table[prefix] = best_path(ok)
                new[asn] = table
                if table != rib[asn]:
                    changed = True
            rib = new
            if not changed:
                break
        else:
            raise RuntimeError("routing did not converge")
        self._rib = rib
        return rib

    def lookup(self, asn: int, address):
        """Longest-prefix-match route at ``asn`` for ``address``, or ``None``."""
        a = ipaddress.ip_address(address)
        best = None
        for prefix, route in self.rib()[asn].items():
            if a in prefix and (best is None or prefix.prefixlen > best.prefix.prefixlen):
                best = route
        return best

    def as_of(self, address) -> int:
        for asn, a in self.ases.items():
            if a.hosts(address):
                return asn
        raise KeyError(f"address {address} is not hosted by any AS")

    def forward_path(self, src_asn: int, address) -> list | None:
        """AS hops taken by a packet from ``src_asn`` to ``address``; ``None`` if it never arrives."""
        hops = [src_asn]
        cur = src_asn
        for _ in range(len(self.ases) + 1):
            if self.ases[cur].hosts(address):
                return hops
            route = self.lookup(cur, address)
            if route is None or route.learned_from == "origin":
                return None
            nxt = route.as_path[0]
            if nxt in hops:
                return None
            hops.append(nxt)
            cur = nxt
        return None

    def reachability(self, s, d) -> int:
        """1 iff packets flow both ways between addresses ``s`` and ``d``."""
        sa, da = self.as_of(s), self.as_of(d)
        if sa == da:
            return 1
        return int(self.forward_path(sa, d) is not None and self.forward_path(da, s) is not None)

    def route_state_at(self, asn: int, ann: Announcement) -> RouteState:
        """Validation state of ``ann`` as filtered on its way to ``asn``."""
        rp = self.ases[asn].rov_rp
        if rp is None and self.route_server is not None and asn in self.route_server.members:
            rp = self.route_server.rp_source
        return classify(ann, self.vrps_for(rp))

    def hijack_outcome(self, victim_prefix, adversary: Announcement, observer: int) -> str:
        """``hijacked``, ``filtered`` or ``not-preferred`` for ``observer``."""
        victim_prefix = parse_prefix(victim_prefix)
        self.announce(adversary)
        try:
            route = self.rib()[observer].get(adversary.prefix)
            state = self.route_state_at(observer, adversary)
            if route is not None and route.origin_asn == adversary.origin_asn:
                outcome = "hijacked"
            elif state is RouteState.INVALID:
                outcome = "filtered"
            else:
                outcome = "not-preferred"
            self._record(observer, adversary.prefix, route, state)
        finally:
            self.extra.remove(adversary)
            self._rib = None
        return outcome

    def _record(self, observer, prefix, route, state) -> None:
        if self.log is not None:
            self.log.emit(self.clock(), f"AS{observer}", "routing_decision",
                          {"observer": observer, "prefix": str(prefix),
                           "chosen_origin": route.origin_asn if route else None, "state": state.value})
