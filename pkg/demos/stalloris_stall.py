"""
How long can one refresh be stalled?
====================================

A chain of delegated CAs, each at its own publication point, each answering
just before the relying party's idle timeout.  The stall is bounded by the
timeout times the depth the validator is willing to follow.
"""

# %%
from rpkisim.relying_party import PROFILES
from rpkisim.scenario import measure_stall

for name in ("routinator", "fort", "octorpki"):
    m = measure_stall(name)
    print(f"{name:<12} {m.stalled_pps:>3} PPs  stall {m.stall_seconds / 3600:5.2f} h  "
          f"refresh took {m.refresh_duration / 3600:5.2f} h")

# %%
# The RIPE NCC validator follows chains without a depth cap; the simulator
# stops it at a fixed guard and reports that instead of running forever.
m = measure_stall("ripe-validator")
print("ripe-validator guard tripped:", m.guard_tripped, "after", m.stalled_pps, "PPs")

# %%
# Fewer levels, shorter stall: the bound is linear in depth.
for depth in (4, 8, 16):
    print(depth, round(measure_stall("routinator", depth=depth).stall_seconds))
print("idle timeouts:", {k: p.idle_timeout for k, p in PROFILES.items()})
