"""
Measuring a rate limit from outside
===================================

Send queries (or SYNs) at increasing rates and watch where responses stop
keeping up.  The limit is read off at twice that onset rate, where the token
bucket is saturated.
"""

# %%
from rpkisim.dns import Nameserver, NameserverConfig, Record, probe_rate_limit, probe_syn_limit
from rpkisim.pubpoint import PublicationPoint

zone = {"victim-pp.example": Record("victim-pp.example", "192.0.2.2", 60.0)}
res = probe_rate_limit(lambda: Nameserver("ns", "192.0.2.54", NameserverConfig(dict(zone), 20, 60)),
                       [5, 10, 15, 25, 40, 60, 90, 150])
for row in res["rows"]:
    print(row)
print("slip limit ~", round(res["slip_limit"], 1), " drop limit ~", round(res["drop_limit"], 1))

# %%
syn = probe_syn_limit(lambda: PublicationPoint("pp", "192.0.2.2", None, syn_rate_limit=1288, maintain=False),
                      [300, 600, 1000, 1600, 3000])
print("SYN limit ~", round(syn["limit"]))
