"""
Which relying party protects this network?
==========================================

The attacker publishes two ROAs for its own prefixes.  One candidate RP at a
time is shown a version in which the first ROA names a different origin.  If
the target AS filters with that RP, it drops the route to the first address
but keeps the second.
"""

# %%
from rpkisim.engine import EventLog
from rpkisim.scenario import load_bundled, run_scenario

cfg = load_bundled("victim-identification")
s, _ = run_scenario(cfg, 0, EventLog(enabled=False))
for r in s.extra["rounds"]:
    print(f"candidate {r['candidate']}: reach a1={r['r1']} a2={r['r2']} -> {r['outcome']}")
print("identified:", s.extra["victim_id"])

# %%
# A target without ROV answers every round with both addresses reachable.
plain = cfg.with_overrides(**{"topology.ases.0.rov_rp": None})
print("non-ROV target:", run_scenario(plain, 0, EventLog(enabled=False))[0].extra["victim_id"])
