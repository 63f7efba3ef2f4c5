"""
What a DNS-denial downgrade costs
=================================

The closed-form model counts how often a relying party retries while the
attack runs, then asks how hard the nameserver's rate limit has to be
overwhelmed for every one of those retries to fail.
"""

# %%
# The four built-in cost scenarios and their attempt counts.
import numpy as np

from rpkisim import analysis

t4, t5 = analysis.render_tables()
print(t4)

# %%
# Packets per 30 s refresh window for three nameserver limits.  One cell of
# the published table disagrees with its own inputs and is flagged.
print(t5)

# %%
# Success probability as the attacker rate grows, scenario (2) at 60 q/s.
n = analysis.n_attempts(24 * 3600, 600, 6)
rates = np.logspace(3, 6, 7)
for r in rates:
    print(f"r_attacker={r:>10.0f}  p_success={analysis.p_success(60, r, n):.4f}")

# %%
# The exact rate for a given target probability inverts the model.
for p in (0.1, 0.5, 0.9, 0.99):
    o = analysis.overwhelming_factor(n, p)
    rate = analysis.attacker_rate(o, 60)
    print(f"p_target={p:<5} o={o:>10.1f}  rate={rate:>11.0f}  check={analysis.p_success(60, rate, n):.6f}")
