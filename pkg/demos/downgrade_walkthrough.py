"""
Downgrading a prefix to "unknown"
=================================

Routinator refreshes every ~625 s and resolves the victim's publication
point each time.  The attacker learns the rhythm from queries for its own
domain, then floods the victim's nameserver with spoofed queries only for
30 s around each predicted refresh.  After a day without a successful fetch
the victim manifest expires, the ROA disappears and the sub-prefix hijack
is no longer filtered at the route server.
"""

# %%
from rpkisim.engine import EventLog
from rpkisim.scenario import build_world, load_bundled, run_world

cfg = load_bundled("table4-scenario2")
world = build_world(cfg, None, EventLog(enabled=False))
summary = run_world(world)

print("downgrade achieved:", summary.downgrade_achieved)
print(f"attack started at {summary.attack_start:.0f} s, prefix unknown after {summary.time_to_unknown:.0f} s")
print("hijack outcome at the observer:", summary.hijack_outcome)
print("bursts:", summary.bursts, " packets:", f"{summary.packets_injected:,}")

# %%
# Every burst should swallow all six BIND retries of one refresh.
bursts = summary.extra["bursts"]
denied = [b["victim_attempts_denied"] for b in bursts]
served = [b["victim_attempts_served"] for b in bursts]
print("victim queries denied per burst (first 10):", denied[:10])
print("victim queries served inside a window:", sum(served))

# %%
# Strict mode treats a missing ROA as a deny entry: the hijack stays filtered,
# but so does the legitimate route, and the victim becomes unreachable.
strict = cfg.with_overrides(**{"relying_parties.0.mitigations": {"strict_invalid_on_missing": True}})
s = run_world(build_world(strict, None, EventLog(enabled=False)))
print("strict mode:", s.hijack_outcome, "reachability", s.victim_reachability,
      "victim route", s.extra["victim_route_state"])
