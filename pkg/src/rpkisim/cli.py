"""Command line: run scenarios, render the cost tables, Monte Carlo and probes.

Exit codes: 0 ok, 1 configuration or usage error, 2 runtime error.  Event
logs are JSONL; ``--log`` picks the file, otherwise ``$RPKISIM_LOG_DIR``
(when set) receives ``<scenario>-<seed>.jsonl``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import yaml

from . import analysis
from .dns import DEFAULT_PROBE_RATES, Nameserver, NameserverConfig, Record, probe_rate_limit, probe_syn_limit
from .engine import EventLog, parse_duration
from .pubpoint import PublicationPoint
from .relying_party import PROFILES
from .scenario import (ConfigError, bundled_names, measure_stall, monte_carlo, resolve_config,
                       run_scenario)

LOG_DIR_ENV = "RPKISIM_LOG_DIR"
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("rpkisim")


class _Parser(argparse.ArgumentParser):
    # usage mistakes count as configuration errors
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError("--set", f"expected KEY=VALUE, got {item!r}")
        out[key] = yaml.safe_load(value)
    return out


def _load(args):
    cfg = resolve_config(args.config)
    over = _overrides(getattr(args, "set", None))
    if over:
        try:
            cfg = cfg.with_overrides(**over)
        except (KeyError, IndexError, TypeError) as exc:
            raise ConfigError(next(iter(over)), f"cannot override: {exc}") from None
    return cfg


def _log_path(args, name: str, seed: int) -> Path | None:
    if args.log:
        return Path(args.log)
    base = os.environ.get(LOG_DIR_ENV)
    if base:
        return Path(base) / f"{name}-{seed}.jsonl"
    return None


def cmd_run(args) -> int:
    cfg = _load(args)
    seed = cfg.seed if args.seed is None else args.seed
    path = _log_path(args, cfg.name, seed)
    summary, elog = run_scenario(cfg, seed, EventLog(packets=args.packets, enabled=path is not None))
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        elog.write(path)
        log.info("wrote %d events to %s", len(elog), path)
    out = summary.to_dict()
    if not args.bursts:
        out["extra"].pop("bursts", None)
    print(json.dumps(out, indent=2, default=str))
    return EXIT_OK


def _param_row(params: dict) -> dict:
    known = {"t_attack", "t_sleep", "n_retries", "n", "p", "r_limit", "window"}
    for k in params:
        if k not in known:
            raise ConfigError(f"--params {k}", f"unknown parameter (know {', '.join(sorted(known))})")
    p = float(params.get("p", 0.5))
    if "n" in params:
        n = int(params["n"])
    else:
        try:
            n = analysis.n_attempts(parse_duration(params["t_attack"]), parse_duration(params["t_sleep"]),
                                    int(params["n_retries"]))
        except KeyError as exc:
            raise ConfigError(f"--params {exc.args[0]}", "need n or t_attack, t_sleep and n_retries") from None
    o = analysis.overwhelming_factor(n, p)
    row = {"n_attempts": n, "p_target": p, "o": round(o), "o_exact": round(o, 6)}
    if "r_limit" in params:
        r = float(params["r_limit"])
        window = parse_duration(params.get("window", 30))
        rate, total = analysis.packet_volume(round(o), r, window)
        row.update({"r_limit": r, "r_attacker": rate, "total_packets_per_update": total,
                    "p_success_exact_rate": round(analysis.p_success(r, analysis.attacker_rate(o, r), n), 6)})
    return row


def cmd_analyze(args) -> int:
    if args.params:
        params = dict(kv.partition("=")[::2] for kv in args.params)
        print(analysis.to_csv([_param_row(params)]), end="")
        return EXIT_OK
    t4, t5 = analysis.render_tables()
    if args.table in ("4", "both"):
        print(t4, end="")
    if args.table == "both":
        print()
    if args.table in ("5", "both"):
        print(t5, end="")
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    if args.trials < 1:
        raise ConfigError("--trials", "must be at least 1")
    cfg = _load(args)
    res = monte_carlo(cfg, args.trials, args.base_seed, args.parallel)
    if not args.outcomes:
        res.pop("outcomes")
    if args.closed_form and cfg.data.get("attacker"):
        rate = cfg.data["attacker"]["rate"]
        if isinstance(rate, dict):
            sc = analysis.SCENARIOS[rate["scenario"]]
            n = analysis.n_attempts(sc.t_attack, sc.t_sleep, sc.n_retries)
            o = analysis.overwhelming_factor(n, rate["p_target"])
            res["closed_form"] = analysis.p_success(rate["r_limit"], analysis.attacker_rate(o, rate["r_limit"]), n)
    print(json.dumps(res, indent=2))
    return EXIT_OK


def _probe_target(cfg, node_id: str, kind: str):
    d = cfg.data
    for ns in d["dns"]["nameservers"]:
        if ns["id"] == node_id:
            if kind != "dns":
                raise ConfigError("--kind", f"{node_id} is a nameserver; use --kind dns")
            zone = {r["name"]: Record(r["name"], r["value"], r["ttl"]) for r in ns["zone"]}
            return lambda: Nameserver(ns["id"], ns["address"], NameserverConfig(
                dict(zone), ns["slip_limit"], ns["drop_limit"], ns["bucket_window"]))
    for pp in d["publication_points"]:
        if pp["id"] == node_id:
            if kind != "syn":
                raise ConfigError("--kind", f"{node_id} is a publication point; use --kind syn")
            return lambda: PublicationPoint(pp["id"], pp["address"], None, pp["domains"],
                                            syn_rate_limit=pp["syn_rate_limit"], syn_burst=pp["syn_burst"],
                                            maintain=False)
    raise ConfigError("--target", f"no nameserver or publication point named {node_id!r}")


def cmd_probe(args) -> int:
    cfg = _load(args)
    make = _probe_target(cfg, args.target, args.kind)
    rates = [float(x) for x in args.rates.split(",")] if args.rates else DEFAULT_PROBE_RATES
    if args.kind == "dns":
        res = probe_rate_limit(make, rates, args.duration, seed=cfg.seed)
        limits = {"slip_limit": res["slip_limit"], "drop_limit": res["drop_limit"]}
    else:
        res = probe_syn_limit(make, rates, args.duration, seed=cfg.seed)
        limits = {"limit": res["limit"]}
    w = csv.DictWriter(sys.stdout, fieldnames=["rate", "responses_per_s", "answers_per_s"], lineterminator="\n")
    w.writeheader()
    w.writerows(res["rows"])
    for k, v in limits.items():
        print(f"# {k}: {'none found' if v is None else round(v, 3)}", file=sys.stderr)
    return EXIT_OK


def cmd_stall(args) -> int:
    m = measure_stall(args.profile, args.depth, args.width, args.seed)
    print(json.dumps(m.__dict__, indent=2))
    return EXIT_OK


def cmd_list(args) -> int:
    for name in bundled_names():
        print(name)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rpkisim", description="Simulate RPKI downgrade attacks and their costs.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def scenario_args(sp):
        sp.add_argument("config", help="bundled scenario name or path to a YAML file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config value by dotted path, e.g. attacker.rate=0")

    r = sub.add_parser("run", help="run one scenario")
    scenario_args(r)
    r.add_argument("--seed", type=int)
    r.add_argument("--log", help=f"JSONL event log path (default: ${LOG_DIR_ENV}/<name>-<seed>.jsonl)")
    r.add_argument("--packets", action="store_true", help="log individual packets too")
    r.add_argument("--bursts", action="store_true", help="include per-burst records in the summary")
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("analyze", help="closed-form cost tables")
    a.add_argument("--tables", dest="table", nargs="?", const="both", default="both", choices=["4", "5", "both"])
    a.add_argument("--params", nargs="+", metavar="KEY=VALUE",
                   help="t_attack, t_sleep and n_retries (or n, the attempt count directly), p, and optionally r_limit, window")
    a.set_defaults(func=cmd_analyze)

    m = sub.add_parser("montecarlo", help="success rate over independently seeded runs")
    scenario_args(m)
    m.add_argument("--trials", type=int, default=100)
    m.add_argument("--base-seed", type=int)
    m.add_argument("--parallel", type=int, default=None, help="worker processes (default: all cores)")
    m.add_argument("--outcomes", action="store_true", help="list every trial's outcome")
    m.add_argument("--closed-form", action="store_true", help="add the closed-form success probability")
    m.set_defaults(func=cmd_montecarlo)

    pr = sub.add_parser("probe", help="measure a rate limit by probing at increasing rates")
    scenario_args(pr)
    pr.add_argument("--target", required=True, help="nameserver or publication point id")
    pr.add_argument("--kind", choices=["dns", "syn"], required=True)
    pr.add_argument("--rates", help="comma-separated probe rates per second")
    pr.add_argument("--duration", type=float, default=6.0)
    pr.set_defaults(func=cmd_probe)

    s = sub.add_parser("stall", help="longest Stalloris stall one refresh of a profile tolerates")
    s.add_argument("profile", choices=sorted(PROFILES))
    s.add_argument("--depth", type=int)
    s.add_argument("--width", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_stall)

    ls = sub.add_parser("list", help="list bundled scenarios")
    ls.set_defaults(func=cmd_list)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # anything past validation is a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
