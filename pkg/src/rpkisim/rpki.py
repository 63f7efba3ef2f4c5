"""Abstract RPKI objects: certificates, manifests, ROAs and repository trees.

Objects carry validity windows and content hashes; signatures are not modeled.
All times are seconds of simulated time (floats).
"""
from __future__ import annotations

import copy
import enum
import hashlib
import ipaddress
from collections import deque
from dataclasses import dataclass, field, replace

HOUR = 3600.0
DAY = 86400.0
DEFAULT_MANIFEST_PERIOD = 24 * HOUR
DEFAULT_MANIFEST_THRESHOLD = 6 * HOUR
DEFAULT_ROA_VALIDITY = 545 * DAY
DEFAULT_CERT_VALIDITY = 365 * DAY


def parse_prefix(text) -> ipaddress.IPv4Network | ipaddress.IPv6Network:
    return ipaddress.ip_network(str(text), strict=True)


@dataclass(frozen=True)
class Resource:
    asn: int
    prefixes: tuple

    def __post_init__(self):
        if not self.prefixes:
            raise ValueError("resource needs at least one prefix")
        nets = tuple(sorted({parse_prefix(p) for p in self.prefixes}, key=lambda n: (n.version, n)))
        object.__setattr__(self, "prefixes", nets)

    def covers(self, other: "Resource") -> bool:
        return all(any(p.version == q.version and p.subnet_of(q) for q in self.prefixes)
                   for p in other.prefixes)

    def to_dict(self) -> dict:
        return {"asn": self.asn, "prefixes": [str(p) for p in self.prefixes]}

    @classmethod
    def from_dict(cls, d) -> "Resource":
        return cls(int(d["asn"]), tuple(d["prefixes"]))


class Transport(str, enum.Enum):
    RRDP = "rrdp"
    RSYNC = "rsync"


@dataclass(frozen=True)
class PpUri:
    domain: str
    transport: Transport = Transport.RRDP

    def __str__(self):
        scheme = "https" if self.transport is Transport.RRDP else "rsync"
        return f"{scheme}://{self.domain}/"


@dataclass
class Certificate:
    id: str
    resources: Resource
    pp_uri: PpUri
    parent: str | None = None
    children: list = field(default_factory=list)
    not_before: float = 0.0
    not_after: float = DEFAULT_CERT_VALIDITY

    def __post_init__(self):
        if not self.not_before < self.not_after:
            raise ValueError(f"certificate {self.id}: not_before must precede not_after")


@dataclass
class Manifest:
    covers: str
    listed: dict = field(default_factory=dict)
    valid_from: float = 0.0
    valid_until: float = DEFAULT_MANIFEST_PERIOD
    threshold: float = DEFAULT_MANIFEST_THRESHOLD
    period: float = DEFAULT_MANIFEST_PERIOD

    def __post_init__(self):
        if not self.valid_from < self.valid_until:
            raise ValueError(f"manifest for {self.covers}: valid_from must precede valid_until")

    @property
    def id(self) -> str:
        return f"mft:{self.covers}"


@dataclass
class Roa:
    id: str
    prefix: object
    asn: int
    max_len: int
    issuer: str
    valid_from: float = 0.0
    valid_until: float = DEFAULT_ROA_VALIDITY

    def __post_init__(self):
        self.prefix = parse_prefix(self.prefix)
        if self.max_len < self.prefix.prefixlen:
            raise ValueError(f"ROA {self.id}: max_len below prefix length")
        if self.max_len > self.prefix.max_prefixlen:
            raise ValueError(f"ROA {self.id}: max_len beyond address size")

    @property
    def vrp(self) -> tuple:
        return (self.prefix, self.max_len, self.asn)


class ObjectState(str, enum.Enum):
    CURRENT = "current"
    STALE = "stale"
    EXPIRED = "expired"


def content_hash(obj) -> str:
    if isinstance(obj, Certificate):
        text = f"cert|{obj.id}|{obj.resources.to_dict()}|{obj.pp_uri}|{obj.parent}|{obj.not_before}|{obj.not_after}"
    elif isinstance(obj, Roa):
        text = f"roa|{obj.id}|{obj.prefix}|{obj.asn}|{obj.max_len}|{obj.valid_until}"
    elif isinstance(obj, Manifest):
        text = f"mft|{obj.covers}|{sorted(obj.listed.items())}|{obj.valid_from}|{obj.valid_until}"
    else:
        raise TypeError(f"cannot hash {type(obj).__name__}")
    return hashlib.sha256(text.encode()).hexdigest()


def maintain_manifest(m: Manifest, now: float) -> Manifest:
    """Renew ``m`` to ``now + period`` once less than ``threshold`` remains."""
    if m.valid_until - now < m.threshold:
        return replace(m, valid_from=now, valid_until=now + m.period)
    return m


class RepositoryTree:
    """Certificates, manifests and ROAs rooted at a trust anchor.

    ``domain_map`` maps publication-point domains to the address of the node
    hosting them.  A tree without ``tal`` is a fragment meant to be grafted.
    """

    def __init__(self, tal: str | None = None):
        self.tal = tal
        self.certs: dict[str, Certificate] = {}
        self.manifests: dict[str, Manifest] = {}
        self.roas: dict[str, Roa] = {}
        self.domain_map: dict[str, str] = {}
        self.roots: list[str] = []

    # construction ---------------------------------------------------------
    def add_cert(self, cert: Certificate, manifest: Manifest | None = None) -> Certificate:
        if cert.id in self.certs:
            raise ValueError(f"duplicate certificate id {cert.id}")
        self.certs[cert.id] = cert
        if cert.parent is None:
            if self.tal is None and not self.roots:
                self.tal = cert.id
        elif cert.parent in self.certs:
            parent = self.certs[cert.parent]
            if cert.id not in parent.children:
                parent.children.append(cert.id)
        else:
            self.roots.append(cert.id)
        self.manifests[cert.id] = manifest or Manifest(covers=cert.id)
        self._relist(cert.parent)
        self._relist(cert.id)
        return cert

    def add_roa(self, roa: Roa) -> Roa:
        if roa.issuer not in self.certs:
            raise KeyError(f"ROA {roa.id}: unknown issuer {roa.issuer}")
        if roa.id in self.roas:
            raise ValueError(f"duplicate ROA id {roa.id}")
        self.roas[roa.id] = roa
        self._relist(roa.issuer)
        return roa

    def issued_by(self, cert_id: str) -> list:
        """Objects published at ``cert_id``'s publication point (besides its manifest)."""
        cert = self.certs[cert_id]
        out = [self.certs[c] for c in cert.children if c in self.certs]
        out += [r for r in self.roas.values() if r.issuer == cert_id]
        return out

    def _relist(self, cert_id: str | None) -> None:
        if cert_id is None or cert_id not in self.manifests:
            return
        m = self.manifests[cert_id]
        m.listed = {o.id: content_hash(o) for o in self.issued_by(cert_id)}

    def graft(self, fragment: "RepositoryTree", parent_id: str) -> None:
        """Attach a fragment's root certificates under ``parent_id``."""
        if parent_id not in self.certs:
            raise KeyError(f"unknown parent certificate {parent_id}")
        for cid in fragment.certs:
            if cid in self.certs:
                raise ValueError(f"duplicate certificate id {cid}")
        for cid, cert in fragment.certs.items():
            self.certs[cid] = cert
            self.manifests[cid] = fragment.manifests[cid]
        for root in fragment.roots:
            self.certs[root].parent = parent_id
            if root not in self.certs[parent_id].children:
                self.certs[parent_id].children.append(root)
        self.roas.update(fragment.roas)
        self.domain_map.update(fragment.domain_map)
        self._relist(parent_id)

    def copy(self) -> "RepositoryTree":
        return copy.deepcopy(self)

    # queries --------------------------------------------------------------
    def depth(self, cert_id: str) -> int:
        d, cur = 0, self.certs[cert_id]
        while cur.parent is not None and cur.parent in self.certs:
            d += 1
            cur = self.certs[cur.parent]
            if d > len(self.certs):
                raise ValueError("cycle in certificate tree")
        return d

    def pp_domains(self) -> list[str]:
        return list(dict.fromkeys(c.pp_uri.domain for c in self.certs.values()))

    def certs_at(self, domain: str) -> list[str]:
        # certificates are only ever added or removed, never re-homed, so the
        # index stays valid while the certificate count is unchanged
        index = getattr(self, "_at_index", None)
        if index is None or index[0] != len(self.certs):
            at: dict[str, list] = {}
            for cid, c in self.certs.items():
                at.setdefault(c.pp_uri.domain, []).append(cid)
            index = self._at_index = (len(self.certs), at)
        return list(index[1].get(domain, ()))

    def object_state(self, obj_id: str, now: float) -> ObjectState:
        if obj_id in self.roas:
            roa = self.roas[obj_id]
            if roa.valid_until < now:
                return ObjectState.EXPIRED
            return self._under_manifest(roa.issuer, now)
        if obj_id in self.certs:
            cert = self.certs[obj_id]
            if cert.not_after < now:
                return ObjectState.EXPIRED
            if cert.parent is None:
                return ObjectState.CURRENT
            return self._under_manifest(cert.parent, now)
        if obj_id.startswith("mft:") and obj_id[4:] in self.manifests:
            m = self.manifests[obj_id[4:]]
            return ObjectState.EXPIRED if m.valid_until < now else ObjectState.CURRENT
        raise KeyError(f"unknown object id {obj_id}")

    def _under_manifest(self, issuer: str, now: float) -> ObjectState:
        m = self.manifests.get(issuer)
        if m is None or m.valid_until < now:
            return ObjectState.STALE
        return ObjectState.CURRENT

    def validate(self) -> None:
        """Check acyclicity, reachability from the trust anchor and domain mapping."""
        if self.tal is None or self.tal not in self.certs:
            raise ValueError("tree has no trust anchor certificate")
        seen = set()
        queue = deque([self.tal])
        while queue:
            cid = queue.popleft()
            if cid in seen:
                raise ValueError(f"certificate {cid} reached twice (cycle or shared child)")
            seen.add(cid)
            cert = self.certs[cid]
            for child in cert.children:
                if child not in self.certs:
                    raise ValueError(f"certificate {cid} lists unknown child {child}")
                if not cert.resources.covers(self.certs[child].resources):
                    raise ValueError(f"certificate {child} holds resources outside its parent's")
                queue.append(child)
        missing = set(self.certs) - seen
        if missing:
            raise ValueError(f"certificates unreachable from trust anchor: {sorted(missing)}")
        for cert in self.certs.values():
            if cert.pp_uri.domain not in self.domain_map:
                raise ValueError(f"publication point {cert.pp_uri.domain} has no hosting node")

    # serialization ----------------------------------------------------------
    def to_dict(self) -> dict:
        certs = []
        for cid, c in self.certs.items():
            m = self.manifests[cid]
            certs.append({
                "id": cid, "parent": c.parent, "domain": c.pp_uri.domain,
                "transport": c.pp_uri.transport.value, **c.resources.to_dict(),
                "not_before": c.not_before, "not_after": c.not_after,
                "manifest": {"valid_from": m.valid_from, "valid_until": m.valid_until,
                             "threshold": m.threshold, "period": m.period},
            })
        roas = [{"id": r.id, "issuer": r.issuer, "prefix": str(r.prefix), "asn": r.asn,
                 "max_len": r.max_len, "valid_until": r.valid_until} for r in self.roas.values()]
        return {"tal": self.tal, "certs": certs, "roas": roas, "domain_map": dict(self.domain_map)}

    @classmethod
    def from_dict(cls, d: dict) -> "RepositoryTree":
        tree = cls(d.get("tal"))
        for c in d.get("certs", []):
            m = c.get("manifest", {})
            cert = Certificate(
                id=c["id"], resources=Resource(int(c["asn"]), tuple(c["prefixes"])),
                pp_uri=PpUri(c["domain"], Transport(c.get("transport", "rrdp"))),
                parent=c.get("parent"), not_before=float(c.get("not_before", 0.0)),
                not_after=float(c.get("not_after", DEFAULT_CERT_VALIDITY)))
            tree.add_cert(cert, Manifest(
                covers=c["id"], valid_from=float(m.get("valid_from", 0.0)),
                valid_until=float(m.get("valid_until", DEFAULT_MANIFEST_PERIOD)),
                threshold=float(m.get("threshold", DEFAULT_MANIFEST_THRESHOLD)),
                period=float(m.get("period", DEFAULT_MANIFEST_PERIOD))))
        for r in d.get("roas", []):
            tree.add_roa(Roa(r["id"], r["prefix"], int(r["asn"]), int(r["max_len"]), r["issuer"],
                             valid_until=float(r.get("valid_until", DEFAULT_ROA_VALIDITY))))
        tree.domain_map.update(d.get("domain_map", {}))
        return tree


def build_delegation_chain(depth: int, width: int, base_domain: str, hold_resources: Resource,
                           address: str | None = None, prefix: str = "chain",
                           not_after: float = DEFAULT_CERT_VALIDITY,
                           manifest_until: float = DEFAULT_MANIFEST_PERIOD) -> RepositoryTree:
    """``depth`` levels of certificates, each delegating the same resources to ``width`` children.

    Level ``i`` holds ``width**i`` certificates, each at its own subdomain
    ``l<i>-<k>.<base_domain>``; every subdomain maps to ``address`` when given.
    The level-1 certificates are the fragment's roots.
    """
    if depth < 1 or width < 1:
        raise ValueError("depth and width must be at least 1")
    frag = RepositoryTree()
    previous = [None]
    for level in range(1, depth + 1):
        current = []
        k = 0
        for parent in previous:
            for _ in range(width):
                cid = f"{prefix}-l{level}-{k}"
                domain = f"l{level}-{k}.{base_domain}"
                cert = Certificate(cid, hold_resources, PpUri(domain), parent=parent, not_after=not_after)
                frag.certs[cid] = cert
                frag.manifests[cid] = Manifest(covers=cid, valid_until=manifest_until)
                if parent is None:
                    frag.roots.append(cid)
                else:
                    frag.certs[parent].children.append(cid)
                if address is not None:
                    frag.domain_map[domain] = address
                current.append(cid)
                k += 1
        previous = current
    for cid in frag.certs:
        frag._relist(cid)
    return frag
