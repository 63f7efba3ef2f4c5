"""Scenario files: YAML grammar, validation, canonical round-trip and world building.

A scenario file is a YAML mapping with these top-level keys (all durations
accept plain seconds or strings such as ``"30 s"``, ``"10m"``, ``"24h"``)::

    name: str
    seed: int
    duration: duration              # simulated time to run
    latency: {kind: fixed, value: duration} | {kind: uniform, low: .., high: ..}
    rpki:
      trust_anchor: {id, domain, transport, resources: {asn, prefixes}}
      cas:  [{id, parent, domain, transport, resources, manifest: {valid_until, threshold, period}}]
      roas: [{id, issuer, prefix, asn, max_len}]
    publication_points: [{id, address, domains, syn_rate_limit, syn_burst, maintain, check_interval}]
    dns:
      nameservers: [{id, address, slip_limit, drop_limit, zone: [{name, value, ttl}]}]
      resolvers:   [{id, address, profile, overrides, delegations: {zone: nameserver id | [ids]}}]
    relying_parties: [{id, address, profile, resolver, first_refresh_at, overrides, mitigations}]
    topology:
      ases: [{asn, prefixes, addresses, rov_rp}]
      links: [{a, b, label, local_pref}]
      route_server: {members: [asn], rp: rp id}
    hijack: {origin, prefix, observer, observer_address, victim_address}
    victim_id: {pp, ca, p1, p2, attacker_asn, other_asn, target_address, a1, a2,
                candidates: [rp ids], round_wait, warmup}
    attacker:
      {id, address, target, target_node, spoof, rate, window_halfwidth, window_offset,
       warmup_refreshes, max_duration, observe: {nameserver, name},
       victim: {rp, roa}, stalloris: {pp, ca, depth, width, per_level_hold}}

``attacker.rate`` is either packets per second or
``{scenario, r_limit, p_target}``, which is turned into the exact rate
achieving ``p_target`` for that built-in cost scenario.
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from importlib import resources

import yaml

from . import analysis
from .attacker import (AttackPlan, Attacker, DowngradeCampaign, HijackSetup, StallorisPlan, VictimIdState,
                       identify_victim_rp, roa_pair_trees, run_downgrade)
from .bgp import Announcement, Topology, classify
from .dns import Nameserver, NameserverConfig, Record, Resolver, resolver_profile
from .engine import Engine, EventLog, latency_from_dict, parse_duration, to_seconds, us
from .pubpoint import PublicationPoint
from .relying_party import Mitigations, RelyingParty, rp_profile
from .rpki import (DEFAULT_MANIFEST_PERIOD, DEFAULT_MANIFEST_THRESHOLD, Certificate, Manifest, PpUri,
                   RepositoryTree, Resource, Roa, Transport, parse_prefix)


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


# -- field helpers --------------------------------------------------------------

def _req(d: dict, key: str, path: str):
    if not isinstance(d, dict):
        raise ConfigError(path, "expected a mapping")
    if key not in d:
        raise ConfigError(f"{path}.{key}" if path else key, "missing required key")
    return d[key]


def _dur(value, path: str) -> float:
    try:
        return parse_duration(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from None


def _num(value, path: str, positive=False, allow_none=False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    if positive and value <= 0:
        raise ConfigError(path, "must be positive")
    return value


def _prefix(value, path: str) -> str:
    try:
        return str(parse_prefix(value))
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None


def _list(d: dict, key: str, path: str) -> list:
    v = d.get(key, []) if isinstance(d, dict) else []
    if v is None:
        return []
    if not isinstance(v, list):
        raise ConfigError(f"{path}.{key}" if path else key, "expected a list")
    return v


def _unknown(d: dict, allowed: set, path: str) -> None:
    for k in d:
        if k not in allowed:
            raise ConfigError(f"{path}.{k}" if path else k, "unknown key")


def _resources(d, path):
    asn = _num(_req(d, "asn", path), f"{path}.asn")
    prefixes = [_prefix(p, f"{path}.prefixes[{i}]") for i, p in enumerate(_req(d, "prefixes", path))]
    return {"asn": int(asn), "prefixes": prefixes}


# -- normalisation --------------------------------------------------------------

def _norm_rpki(d: dict) -> dict:
    ta = _req(d, "trust_anchor", "rpki")
    out_ta = {"id": str(_req(ta, "id", "rpki.trust_anchor")),
              "domain": str(_req(ta, "domain", "rpki.trust_anchor")),
              "transport": Transport(ta.get("transport", "rrdp")).value,
              "resources": _resources(_req(ta, "resources", "rpki.trust_anchor"), "rpki.trust_anchor.resources")}
    ids = {out_ta["id"]}
    cas = []
    for i, ca in enumerate(_list(d, "cas", "rpki")):
        p = f"rpki.cas[{i}]"
        _unknown(ca, {"id", "parent", "domain", "transport", "resources", "manifest"}, p)
        cid = str(_req(ca, "id", p))
        parent = str(_req(ca, "parent", p))
        if parent not in ids:
            raise ConfigError(f"{p}.parent", f"unknown parent CA {parent!r}")
        if cid in ids:
            raise ConfigError(f"{p}.id", f"duplicate CA id {cid!r}")
        ids.add(cid)
        m = ca.get("manifest") or {}
        period = _dur(m.get("period", DEFAULT_MANIFEST_PERIOD), f"{p}.manifest.period")
        cas.append({"id": cid, "parent": parent, "domain": str(_req(ca, "domain", p)),
                    "transport": Transport(ca.get("transport", "rrdp")).value,
                    "resources": _resources(_req(ca, "resources", p), f"{p}.resources"),
                    "manifest": {"valid_until": _dur(m.get("valid_until", period), f"{p}.manifest.valid_until"),
                                 "threshold": _dur(m.get("threshold", DEFAULT_MANIFEST_THRESHOLD),
                                                   f"{p}.manifest.threshold"),
                                 "period": period}})
    roas = []
    for i, r in enumerate(_list(d, "roas", "rpki")):
        p = f"rpki.roas[{i}]"
        issuer = str(_req(r, "issuer", p))
        if issuer not in ids:
            raise ConfigError(f"{p}.issuer", f"unknown issuer {issuer!r}")
        prefix = _prefix(_req(r, "prefix", p), f"{p}.prefix")
        roas.append({"id": str(_req(r, "id", p)), "issuer": issuer, "prefix": prefix,
                     "asn": int(_num(_req(r, "asn", p), f"{p}.asn")),
                     "max_len": int(r.get("max_len", parse_prefix(prefix).prefixlen))})
    return {"trust_anchor": out_ta, "cas": cas, "roas": roas}


def _norm_zone(zone, path):
    out = []
    for i, rec in enumerate(zone or []):
        p = f"{path}[{i}]"
        out.append({"name": str(_req(rec, "name", p)), "value": str(_req(rec, "value", p)),
                    "ttl": _dur(rec.get("ttl", 300), f"{p}.ttl")})
    return out


def normalize(raw: dict) -> dict:
    """Validate ``raw`` and return the canonical configuration mapping."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "scenario must be a mapping")
    _unknown(raw, {"name", "seed", "duration", "latency", "rpki", "publication_points", "dns",
                   "relying_parties", "topology", "hijack", "attacker", "victim_id"}, "")
    cfg = {"name": str(raw.get("name", "scenario")),
           "seed": int(_num(raw.get("seed", 0), "seed")),
           "duration": _dur(_req(raw, "duration", ""), "duration")}
    lat = raw.get("latency") or {"kind": "fixed", "value": 0.01}
    try:
        latency_from_dict(lat)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError("latency", str(exc)) from None
    cfg["latency"] = {k: (_dur(v, f"latency.{k}") if k != "kind" else v) for k, v in lat.items()}
    cfg["rpki"] = _norm_rpki(_req(raw, "rpki", ""))
    domains = {cfg["rpki"]["trust_anchor"]["domain"]} | {c["domain"] for c in cfg["rpki"]["cas"]}
    node_ids: set = set()

    def claim(nid, path):
        if nid in node_ids:
            raise ConfigError(path, f"duplicate node id {nid!r}")
        node_ids.add(nid)

    pps = []
    served = set()
    for i, pp in enumerate(_list(raw, "publication_points", "")):
        p = f"publication_points[{i}]"
        _unknown(pp, {"id", "address", "domains", "syn_rate_limit", "syn_burst", "maintain",
                      "check_interval"}, p)
        nid = str(_req(pp, "id", p))
        claim(nid, f"{p}.id")
        doms = [str(x) for x in _req(pp, "domains", p)]
        for j, dom in enumerate(doms):
            if dom not in domains:
                raise ConfigError(f"{p}.domains[{j}]", f"no CA publishes at {dom!r}")
            served.add(dom)
        pps.append({"id": nid, "address": str(_req(pp, "address", p)), "domains": doms,
                    "syn_rate_limit": _num(pp.get("syn_rate_limit"), f"{p}.syn_rate_limit", True, True),
                    "syn_burst": pp.get("syn_burst"),
                    "maintain": bool(pp.get("maintain", True)),
                    "check_interval": _dur(pp.get("check_interval", 3600), f"{p}.check_interval")})
    for dom in sorted(domains - served):
        raise ConfigError("publication_points", f"domain {dom!r} is not served by any publication point")
    cfg["publication_points"] = pps

    dns = _req(raw, "dns", "")
    nss, resolvers = [], []
    for i, ns in enumerate(_list(dns, "nameservers", "dns")):
        p = f"dns.nameservers[{i}]"
        _unknown(ns, {"id", "address", "slip_limit", "drop_limit", "bucket_window", "zone"}, p)
        nid = str(_req(ns, "id", p))
        claim(nid, f"{p}.id")
        slip = _num(ns.get("slip_limit"), f"{p}.slip_limit", True, True)
        drop = _num(ns.get("drop_limit"), f"{p}.drop_limit", True, True)
        if slip is not None and drop is not None and slip > drop:
            raise ConfigError(f"{p}.slip_limit", "must not exceed drop_limit")
        nss.append({"id": nid, "address": str(_req(ns, "address", p)), "slip_limit": slip, "drop_limit": drop,
                    "bucket_window": _dur(ns.get("bucket_window", 0.2), f"{p}.bucket_window"),
                    "zone": _norm_zone(ns.get("zone"), f"{p}.zone")})
    ns_ids = {n["id"] for n in nss}
    for i, r in enumerate(_list(dns, "resolvers", "dns")):
        p = f"dns.resolvers[{i}]"
        _unknown(r, {"id", "address", "profile", "overrides", "delegations"}, p)
        nid = str(_req(r, "id", p))
        claim(nid, f"{p}.id")
        prof = str(r.get("profile", "bind9"))
        overrides = dict(r.get("overrides") or {})
        try:
            resolver_profile(prof, **overrides)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{p}.profile", str(exc)) from None
        dele = {}
        for zone, target in (_req(r, "delegations", p) or {}).items():
            targets = target if isinstance(target, list) else [target]
            for t in targets:
                if t not in ns_ids:
                    raise ConfigError(f"{p}.delegations.{zone}", f"unknown nameserver {t!r}")
            dele[str(zone)] = [str(t) for t in targets]
        resolvers.append({"id": nid, "address": str(_req(r, "address", p)), "profile": prof,
                          "overrides": overrides, "delegations": dele})
    cfg["dns"] = {"nameservers": nss, "resolvers": resolvers}
    res_ids = {r["id"] for r in resolvers}

    rps = []
    for i, rp in enumerate(_list(raw, "relying_parties", "")):
        p = f"relying_parties[{i}]"
        _unknown(rp, {"id", "address", "profile", "resolver", "first_refresh_at", "overrides", "mitigations"}, p)
        nid = str(_req(rp, "id", p))
        claim(nid, f"{p}.id")
        res = str(_req(rp, "resolver", p))
        if res not in res_ids:
            raise ConfigError(f"{p}.resolver", f"unknown resolver {res!r}")
        prof = str(rp.get("profile", "routinator"))
        overrides = dict(rp.get("overrides") or {})
        mit = dict(rp.get("mitigations") or {})
        try:
            rp_profile(prof, mitigations=Mitigations(**mit), **overrides)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{p}.profile", str(exc)) from None
        first = rp.get("first_refresh_at", 0)
        rps.append({"id": nid, "address": str(_req(rp, "address", p)), "profile": prof, "resolver": res,
                    "first_refresh_at": first if first == "random" else _dur(first, f"{p}.first_refresh_at"),
                    "overrides": overrides, "mitigations": mit})
    cfg["relying_parties"] = rps
    rp_ids = {r["id"] for r in rps}

    topo = raw.get("topology") or {}
    ases = []
    for i, a in enumerate(_list(topo, "ases", "topology")):
        p = f"topology.ases[{i}]"
        rov = a.get("rov_rp")
        if rov is not None and rov not in rp_ids:
            raise ConfigError(f"{p}.rov_rp", f"unknown relying party {rov!r}")
        ases.append({"asn": int(_num(_req(a, "asn", p), f"{p}.asn")),
                     "prefixes": [_prefix(x, f"{p}.prefixes") for x in a.get("prefixes", [])],
                     "addresses": [str(x) for x in a.get("addresses", [])], "rov_rp": rov})
    asns = {a["asn"] for a in ases}
    links = []
    for i, ln in enumerate(_list(topo, "links", "topology")):
        p = f"topology.links[{i}]"
        for k in ("a", "b"):
            if _req(ln, k, p) not in asns:
                raise ConfigError(f"{p}.{k}", f"unknown AS {ln[k]!r}")
        links.append({"a": ln["a"], "b": ln["b"], "label": str(ln.get("label", "direct-peer")),
                      "local_pref": int(ln.get("local_pref", 100))})
    rs = topo.get("route_server")
    if rs is not None:
        for j, m in enumerate(_req(rs, "members", "topology.route_server")):
            if m not in asns:
                raise ConfigError(f"topology.route_server.members[{j}]", f"unknown AS {m!r}")
        if rs.get("rp") is not None and rs["rp"] not in rp_ids:
            raise ConfigError("topology.route_server.rp", f"unknown relying party {rs['rp']!r}")
        rs = {"members": list(rs["members"]), "rp": rs.get("rp")}
    cfg["topology"] = {"ases": ases, "links": links, "route_server": rs}

    hj = raw.get("hijack")
    if hj is not None:
        for k in ("origin", "observer"):
            if _req(hj, k, "hijack") not in asns:
                raise ConfigError(f"hijack.{k}", f"unknown AS {hj[k]!r}")
        hj = {"origin": hj["origin"], "prefix": _prefix(_req(hj, "prefix", "hijack"), "hijack.prefix"),
              "observer": hj["observer"], "observer_address": str(_req(hj, "observer_address", "hijack")),
              "victim_address": str(_req(hj, "victim_address", "hijack"))}
    cfg["hijack"] = hj
    cfg["attacker"] = _norm_attacker(raw.get("attacker"), cfg, node_ids, claim)
    cfg["victim_id"] = _norm_victim_id(raw.get("victim_id"), cfg, asns)
    return cfg


def _norm_victim_id(v, cfg, asns):
    if v is None:
        return None
    p = "victim_id"
    _unknown(v, {"pp", "ca", "p1", "p2", "attacker_asn", "other_asn", "target_address", "a1", "a2",
                 "candidates", "round_wait", "warmup"}, p)
    if _req(v, "pp", p) not in {x["id"] for x in cfg["publication_points"]}:
        raise ConfigError(f"{p}.pp", f"unknown publication point {v['pp']!r}")
    if _req(v, "ca", p) not in {c["id"] for c in cfg["rpki"]["cas"]}:
        raise ConfigError(f"{p}.ca", f"unknown CA {v['ca']!r}")
    if _req(v, "attacker_asn", p) not in asns:
        raise ConfigError(f"{p}.attacker_asn", f"unknown AS {v['attacker_asn']!r}")
    other = int(_num(_req(v, "other_asn", p), f"{p}.other_asn"))
    if other == v["attacker_asn"]:
        raise ConfigError(f"{p}.other_asn", "must differ from attacker_asn")
    rp_ids = [r["id"] for r in cfg["relying_parties"]]
    cands = v.get("candidates") or rp_ids
    for j, c in enumerate(cands):
        if c not in rp_ids:
            raise ConfigError(f"{p}.candidates[{j}]", f"unknown relying party {c!r}")
    return {"pp": v["pp"], "ca": v["ca"], "p1": _prefix(_req(v, "p1", p), f"{p}.p1"),
            "p2": _prefix(_req(v, "p2", p), f"{p}.p2"), "attacker_asn": v["attacker_asn"],
            "other_asn": other, "target_address": str(_req(v, "target_address", p)),
            "a1": str(_req(v, "a1", p)), "a2": str(_req(v, "a2", p)), "candidates": list(cands),
            "round_wait": _dur(v.get("round_wait", "30m"), f"{p}.round_wait"),
            "warmup": _dur(v.get("warmup", "30m"), f"{p}.warmup")}


def _norm_attacker(at, cfg, node_ids, claim):
    if at is None:
        return None
    p = "attacker"
    _unknown(at, {"id", "address", "target", "target_node", "spoof", "rate", "window_halfwidth", "window_offset",
                  "warmup_refreshes", "max_duration", "observe", "victim", "stalloris"}, p)
    nid = str(at.get("id", "attacker"))
    claim(nid, f"{p}.id")
    target = str(_req(at, "target", p))
    if target not in ("pp_syn", "ns_dns", "public_resolver"):
        raise ConfigError(f"{p}.target", f"unknown target kind {target!r}")
    for k in ("target_node", "spoof"):
        if _req(at, k, p) not in node_ids:
            raise ConfigError(f"{p}.{k}", f"unknown node {at[k]!r}")
    rate = _req(at, "rate", p)
    if isinstance(rate, dict):
        sc = str(_req(rate, "scenario", f"{p}.rate"))
        if sc not in analysis.SCENARIOS:
            raise ConfigError(f"{p}.rate.scenario", f"unknown cost scenario {sc!r}")
        pt = _num(rate.get("p_target", 0.5), f"{p}.rate.p_target")
        if not 0 < pt < 1:
            raise ConfigError(f"{p}.rate.p_target", "must lie in (0, 1)")
        rate = {"scenario": sc, "r_limit": _num(_req(rate, "r_limit", f"{p}.rate"), f"{p}.rate.r_limit", True),
                "p_target": pt}
    else:
        rate = _num(rate, f"{p}.rate")
        if rate < 0:
            raise ConfigError(f"{p}.rate", "must be non-negative")
    obs = _req(at, "observe", p)
    if _req(obs, "nameserver", f"{p}.observe") not in {n["id"] for n in cfg["dns"]["nameservers"]}:
        raise ConfigError(f"{p}.observe.nameserver", f"unknown nameserver {obs['nameserver']!r}")
    victim = _req(at, "victim", p)
    if _req(victim, "rp", f"{p}.victim") not in {r["id"] for r in cfg["relying_parties"]}:
        raise ConfigError(f"{p}.victim.rp", f"unknown relying party {victim['rp']!r}")
    if _req(victim, "roa", f"{p}.victim") not in {r["id"] for r in cfg["rpki"]["roas"]}:
        raise ConfigError(f"{p}.victim.roa", f"unknown ROA {victim['roa']!r}")
    st = at.get("stalloris")
    if st is not None:
        if _req(st, "pp", f"{p}.stalloris") not in {x["id"] for x in cfg["publication_points"]}:
            raise ConfigError(f"{p}.stalloris.pp", f"unknown publication point {st['pp']!r}")
        if _req(st, "ca", f"{p}.stalloris") not in {c["id"] for c in cfg["rpki"]["cas"]}:
            raise ConfigError(f"{p}.stalloris.ca", f"unknown CA {st['ca']!r}")
        st = {"pp": st["pp"], "ca": st["ca"],
              "depth": int(_num(_req(st, "depth", f"{p}.stalloris"), f"{p}.stalloris.depth", True)),
              "width": int(_num(st.get("width", 1), f"{p}.stalloris.width", True)),
              "per_level_hold": _num(st.get("per_level_hold"), f"{p}.stalloris.per_level_hold", True, True)}
    warm = int(_num(at.get("warmup_refreshes", 2), f"{p}.warmup_refreshes"))
    if warm < 2:
        raise ConfigError(f"{p}.warmup_refreshes", "must be at least 2")
    return {"id": nid, "address": str(_req(at, "address", p)), "target": target,
            "target_node": at["target_node"], "spoof": at["spoof"], "rate": rate,
            "window_halfwidth": _dur(at.get("window_halfwidth", 15), f"{p}.window_halfwidth"),
            "window_offset": _dur(at.get("window_offset", 0), f"{p}.window_offset"),
            "warmup_refreshes": warm,
            "max_duration": _dur(at.get("max_duration", "48h"), f"{p}.max_duration"),
            "observe": {"nameserver": obs["nameserver"], "name": str(_req(obs, "name", f"{p}.observe"))},
            "victim": {"rp": victim["rp"], "roa": victim["roa"]}, "stalloris": st}


@dataclass
class ScenarioConfig:
    data: dict

    @property
    def name(self) -> str:
        return self.data["name"]

    @property
    def seed(self) -> int:
        return self.data["seed"]

    def with_overrides(self, **kw) -> "ScenarioConfig":
        d = copy.deepcopy(self.data)
        for dotted, value in kw.items():
            cur = d
            keys = dotted.split(".")
            keys = [int(k) if k.isdigit() else k for k in keys]
            for k in keys[:-1]:
                cur = cur[k]
            cur[keys[-1]] = value
        return ScenarioConfig(normalize(d))


def load_config(text: str) -> ScenarioConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<yaml>", str(exc)) from None
    return ScenarioConfig(normalize(raw))


def load_config_file(path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return load_config(fh.read())


def dump_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(cfg.data, sort_keys=False)


def bundled_names() -> list[str]:
    files = resources.files("rpkisim") / "scenarios"
    return sorted(f.name[:-5] for f in files.iterdir() if f.name.endswith(".yaml"))


def load_bundled(name: str) -> ScenarioConfig:
    f = resources.files("rpkisim") / "scenarios" / f"{name}.yaml"
    if not f.is_file():
        raise ConfigError("scenario", f"no bundled scenario named {name!r} (have: {', '.join(bundled_names())})")
    return load_config(f.read_text(encoding="utf-8"))


def resolve_config(ref: str) -> ScenarioConfig:
    """A bundled scenario name or a path to a YAML file."""
    if ref.endswith((".yaml", ".yml")) or "/" in ref:
        try:
            return load_config_file(ref)
        except FileNotFoundError:
            raise ConfigError("scenario", f"file not found: {ref}") from None
    return load_bundled(ref)


# -- world ------------------------------------------------------------------------

def build_tree(rpki: dict) -> RepositoryTree:
    ta = rpki["trust_anchor"]
    tree = RepositoryTree()
    tree.add_cert(Certificate(ta["id"], Resource.from_dict(ta["resources"]),
                              PpUri(ta["domain"], Transport(ta["transport"]))))
    for ca in rpki["cas"]:
        m = ca["manifest"]
        tree.add_cert(Certificate(ca["id"], Resource.from_dict(ca["resources"]),
                                  PpUri(ca["domain"], Transport(ca["transport"])), parent=ca["parent"]),
                      Manifest(ca["id"], valid_until=m["valid_until"], threshold=m["threshold"],
                               period=m["period"]))
    for r in rpki["roas"]:
        tree.add_roa(Roa(r["id"], r["prefix"], r["asn"], r["max_len"], r["issuer"]))
    return tree


@dataclass
class World:
    cfg: dict
    engine: Engine
    tree: RepositoryTree
    topology: Topology
    nodes: dict
    campaign: DowngradeCampaign | None = None
    hijack: HijackSetup | None = None


def attacker_rate_from(rate) -> float:
    if isinstance(rate, dict):
        sc = analysis.SCENARIOS[rate["scenario"]]
        n = analysis.n_attempts(sc.t_attack, sc.t_sleep, sc.n_retries)
        return analysis.attacker_rate(analysis.overwhelming_factor(n, rate["p_target"]), rate["r_limit"])
    return float(rate)


def build_world(cfg: ScenarioConfig | dict, seed: int | None = None, log: EventLog | None = None) -> World:
    d = cfg.data if isinstance(cfg, ScenarioConfig) else cfg
    engine = Engine(seed=d["seed"] if seed is None else seed, log=log, latency=latency_from_dict(d["latency"]))
    tree = build_tree(d["rpki"])
    nodes = {}
    for pp in d["publication_points"]:
        nodes[pp["id"]] = engine.register(PublicationPoint(
            pp["id"], pp["address"], tree, pp["domains"], syn_rate_limit=pp["syn_rate_limit"],
            syn_burst=pp["syn_burst"], maintain=pp["maintain"], check_interval=pp["check_interval"]))
    for ns in d["dns"]["nameservers"]:
        zone = {r["name"]: Record(r["name"], r["value"], r["ttl"]) for r in ns["zone"]}
        nodes[ns["id"]] = engine.register(Nameserver(ns["id"], ns["address"], NameserverConfig(
            zone, ns["slip_limit"], ns["drop_limit"], ns["bucket_window"])))
    for r in d["dns"]["resolvers"]:
        dele = {z: [nodes[n].address for n in ns] for z, ns in r["delegations"].items()}
        nodes[r["id"]] = engine.register(Resolver(r["id"], r["address"],
                                                  resolver_profile(r["profile"], **r["overrides"]), dele))
    ta = tree.certs[d["rpki"]["trust_anchor"]["id"]]
    for rp in d["relying_parties"]:
        prof = rp_profile(rp["profile"], mitigations=Mitigations(**rp["mitigations"]), **rp["overrides"])
        first = rp["first_refresh_at"]
        if first == "random":
            first = float(engine.rng.uniform(0, prof.t_sleep))
        nodes[rp["id"]] = engine.register(RelyingParty(rp["id"], rp["address"], prof, ta,
                                                       nodes[rp["resolver"]].address, first_refresh_at=first))
    topo = Topology(log=engine.log, clock=lambda: engine.now)
    for a in d["topology"]["ases"]:
        topo.add_as(a["asn"], a["prefixes"], a["addresses"], a["rov_rp"])
        if a["rov_rp"] is not None:
            nodes[a["rov_rp"]].subscribe(topo)
    for ln in d["topology"]["links"]:
        topo.link(ln["a"], ln["b"], ln["label"], ln["local_pref"])
    rs = d["topology"]["route_server"]
    if rs is not None:
        topo.set_route_server(rs["members"], rs["rp"])
        if rs["rp"] is not None and topo not in nodes[rs["rp"]].subscribers:
            nodes[rs["rp"]].subscribe(topo)
    hijack = None
    if d["hijack"] is not None:
        h = d["hijack"]
        hijack = HijackSetup(topo, Announcement(h["prefix"], h["origin"]), h["observer"],
                             h["observer_address"], h["victim_address"])
    world = World(d, engine, tree, topo, nodes, hijack=hijack)
    at = d["attacker"]
    if at is not None:
        target = nodes[at["target_node"]]
        st = at["stalloris"]
        plan = AttackPlan(at["target"], target.address, nodes[at["spoof"]].address, attacker_rate_from(at["rate"]),
                          window_halfwidth=at["window_halfwidth"], window_offset=at["window_offset"],
                          warmup_refreshes=at["warmup_refreshes"], max_duration=at["max_duration"],
                          stalloris=None if st is None else StallorisPlan(st["depth"], st["width"],
                                                                          st["per_level_hold"]))
        attacker = engine.register(Attacker(at["id"], at["address"], plan))
        nodes[at["id"]] = attacker
        attacker.watch(nodes[at["observe"]["nameserver"]], at["observe"]["name"])
        victim_rp = nodes[at["victim"]["rp"]]
        for node in nodes.values():
            if isinstance(node, PublicationPoint) and at["observe"]["name"] in node.domains:
                attacker.watch_pp(node, victim_rp.address)
        world.campaign = DowngradeCampaign(
            engine, attacker, nodes[at["victim"]["rp"]], tree.roas[at["victim"]["roa"]],
            stall_pp=nodes[st["pp"]] if st else None, attacker_cert=st["ca"] if st else None,
            stall_nameserver=nodes[at["observe"]["nameserver"]] if st else None, hijack=hijack)
    return world


@dataclass
class RunSummary:
    downgrade_achieved: bool
    time_to_unknown: float | None
    hijack_outcome: str | None
    packets_injected: int
    refreshes_observed: int
    victim_reachability: int | None = None
    attack_start: float | None = None
    bursts: int = 0
    sim_time: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def run_victim_identification(world: World) -> dict:
    """Warm up, then attribute the target's relying party one candidate at a time."""
    v = world.cfg["victim_id"]
    pp = world.nodes[v["pp"]]
    sigma, sigma_bar = roa_pair_trees(pp.tree, v["ca"], v["p1"], v["p2"], v["attacker_asn"], v["other_asn"])
    pp.tree = sigma
    world.engine.run_for(v["warmup"])
    cands = [world.nodes[c] for c in v["candidates"]]
    state = VictimIdState([c.address for c in cands], sigma, sigma_bar)
    out = identify_victim_rp(world.engine, state, pp, world.topology, v["target_address"], v["a1"], v["a2"],
                             v["round_wait"])
    by_address = {c.address: c.node_id for c in cands}
    out["result_rp"] = by_address.get(out["result"], out["result"])
    return out


def run_world(world: World) -> RunSummary:
    d = world.cfg
    engine = world.engine
    if d.get("victim_id") is not None and world.campaign is None:
        out = run_victim_identification(world)
        return RunSummary(False, None, None, 0, sum(len(n.reports) for n in world.nodes.values()
                                                    if isinstance(n, RelyingParty)),
                          sim_time=to_seconds(engine.now),
                          extra={"victim_id": out["result_rp"], "rounds": out["rounds"]})
    if world.campaign is not None:
        camp = world.campaign
        rep = run_downgrade(camp, d["duration"])
        prefix, _, origin = camp.victim_vrp
        state = classify(Announcement(prefix, origin), camp.rp.vrps)
        return RunSummary(rep.success, rep.time_to_downgrade, rep.hijack_outcome, rep.packets_sent,
                          rep.refreshes_observed, rep.victim_reachability, rep.attack_start, rep.iterations,
                          to_seconds(engine.now),
                          {"stall_deployed_at": rep.stall_deployed_at, "victim_route_state": state.value,
                           "bursts": [asdict(b) for b in rep.bursts]})
    engine.run_until(us(d["duration"]))
    outcome = reach = None
    if world.hijack is not None:
        h = world.hijack
        outcome = h.topology.hijack_outcome(h.announcement.prefix, h.announcement, h.observer_asn)
        reach = h.topology.reachability(h.observer_address, h.victim_address)
    refreshes = sum(len(n.reports) for n in world.nodes.values() if isinstance(n, RelyingParty))
    return RunSummary(False, None, outcome, 0, refreshes, reach, None, 0, to_seconds(engine.now))


def run_scenario(cfg: ScenarioConfig, seed: int | None = None, log: EventLog | None = None) -> tuple:
    """Build and run; returns ``(RunSummary, EventLog)``."""
    world = build_world(cfg, seed, log)
    return run_world(world), world.engine.log


def _trial(args) -> bool:
    data, seed = args
    summary, _ = run_scenario(ScenarioConfig(data), seed, EventLog(enabled=False))
    return summary.downgrade_achieved


def monte_carlo(cfg: ScenarioConfig, trials: int, base_seed: int | None = None, parallel: int | None = 1) -> dict:
    """Run ``trials`` independently seeded instances; mean success with a Wilson 95% interval."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    base = cfg.seed if base_seed is None else base_seed
    jobs = [(cfg.data, base + i) for i in range(trials)]
    if parallel is None or parallel > 1:
        import multiprocessing
        import os
        procs = parallel or os.cpu_count() or 1
        with multiprocessing.get_context("spawn" if os.name == "nt" else "fork").Pool(procs) as pool:
            outcomes = pool.map(_trial, jobs)
    else:
        outcomes = [_trial(j) for j in jobs]
    k = sum(outcomes)
    low, high = analysis.wilson_interval(k, trials)
    return {"trials": trials, "successes": k, "mean": k / trials, "ci_low": low, "ci_high": high,
            "outcomes": outcomes}


# -- stall measurement -------------------------------------------------------------

@dataclass
class StallMeasurement:
    profile: str
    stalled_pps: int  # attacker-hosted publication points the relying party visited
    stall_seconds: float  # summed fetch time spent on them in one refresh
    max_depth_reached: int
    guard_tripped: bool
    refresh_duration: float


def measure_stall(profile: str, depth: int | None = None, width: int = 1, seed: int = 0,
                  log: EventLog | None = None) -> StallMeasurement:
    """Run one refresh of ``profile`` against a Stalloris chain served from t = 0.

    ``depth`` defaults to a few levels past the profile's depth cap, or past
    the unbounded-traversal guard when the profile has none.
    """
    from .attacker import StallorisPlan, deploy_stalloris
    from .relying_party import DEPTH_GUARD

    prof = rp_profile(profile)
    if depth is None:
        depth = (prof.depth_limit or DEPTH_GUARD) + 5
    cfg = load_bundled("healthy-baseline").with_overrides(**{"relying_parties.0.profile": profile})
    world = build_world(cfg, seed, log if log is not None else EventLog(enabled=False))
    rp, pp = world.nodes["rp"], world.nodes["pp-attacker"]
    pp.maintain = False
    deploy_stalloris(pp, "attacker-ca", rp.address, prof, StallorisPlan(depth, width),
                     world.nodes["ns-attacker"])
    done = []

    def stop(_rp, report):
        done.append(report)
        world.engine.stop()

    rp.refresh_listeners.append(stop)
    world.engine.run_until(us(10 * 365 * 86400.0))
    if not done:
        raise RuntimeError("the refresh never completed")
    report = done[0]
    mine = set(pp.domains)
    fetched = [o for o in report["per_pp"] if o["domain"] in mine]
    return StallMeasurement(profile, len(fetched), sum(o["duration"] for o in fetched),
                            max((o["depth"] for o in fetched), default=0), rp._guard_tripped,
                            report["ended"] - report["started"])
