"""Closed-form attack cost model: attempts, per-attempt service probability,
overall success, overwhelming factor and packet volumes.

``render_tables`` rebuilds the two published cost tables from four built-in
scenarios and flags every cell that disagrees with the printed value.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

HOUR = 3600.0


@dataclass(frozen=True)
class ScenarioParams:
    name: str
    t_attack: float  # seconds
    t_sleep: float  # seconds
    n_retries: int
    p_target: float = 0.5
    window: float = 30.0
    r_limits: tuple = (3, 60, 1288)

    def __post_init__(self):
        if min(self.t_attack, self.t_sleep, self.n_retries, self.window) <= 0:
            raise ValueError("scenario parameters must be strictly positive")
        if not 0 < self.p_target < 1:
            raise ValueError("p_target must lie in (0, 1)")


SCENARIOS = {
    "1": ScenarioParams("1", 6 * HOUR, 900.0, 1),
    "2": ScenarioParams("2", 24 * HOUR, 600.0, 6),
    "3": ScenarioParams("3", 48 * HOUR, 120.0, 16),
    "S": ScenarioParams("S", 24 * HOUR, 2.6 * HOUR, 6),
}

# values as printed in the published tables
PRINTED_TABLE4 = {"1": (24, 35), "2": (864, 1247), "3": (23040, 33240), "S": (55, 80)}
PRINTED_TABLE5 = {
    ("1", 3): (105, 3150), ("1", 60): (2100, 63000), ("1", 1288): (45080, 1352400),
    ("2", 3): (3741, 112230), ("2", 60): (74820, 2244600), ("2", 1288): (1606136, 48184080),
    ("3", 3): (99720, 2991600), ("3", 60): (1994400, 59832000), ("3", 1288): (42813120, 1284393600),
    ("S", 3): (240, 7200), ("S", 60): (4800, 103040), ("S", 1288): (103040, 3091200),
}


def n_attempts(t_attack: float, t_sleep: float, n_retries: int) -> int:
    """Connection attempts the victim makes while the attack runs (seconds in, count out)."""
    if t_attack <= 0 or t_sleep <= 0 or n_retries <= 0:
        raise ValueError("t_attack, t_sleep and n_retries must be positive")
    return int(round(t_attack / t_sleep * n_retries))


def p_connectonce(r_limit: float, r_attacker: float) -> float:
    """Probability that one victim attempt is served, clamped to 1."""
    if r_limit < 0 or r_attacker < 0:
        raise ValueError("rates must be non-negative")
    return min(1.0, r_limit / (1.0 + r_attacker))


def p_success(r_limit: float, r_attacker: float, n: int) -> float:
    """Probability that all ``n`` attempts are denied."""
    return (1.0 - p_connectonce(r_limit, r_attacker)) ** n


def overwhelming_factor(n: int, p_target: float) -> float:
    if n < 1:
        raise ValueError("n_attempts must be at least 1")
    if not 0 < p_target < 1:
        raise ValueError("p_target must lie in (0, 1)")
    # expm1/log keep precision when p_target ** (1/n) is close to 1
    return -1.0 / math.expm1(math.log(p_target) / n)


def attacker_rate(o: float, r_limit: float) -> float:
    """Exact attacker rate achieving factor ``o``: the inverse of o = (1 + r_attacker) / r_limit."""
    return o * r_limit - 1.0


def packet_volume(o: float, r_limit: float, window: float = 30.0) -> tuple[int, int]:
    """(attacker rate, packets per refresh window) as tabulated: rate = o * r_limit, rounded."""
    rate = int(round(o * r_limit))
    return rate, int(round(rate * window))


@dataclass(frozen=True)
class AnalysisRow:
    scenario: str
    n_attempts: int
    o: float
    r_limit: float
    r_attacker: int
    total_packets_per_update: int


def scenario_rows(params: ScenarioParams) -> list[AnalysisRow]:
    n = n_attempts(params.t_attack, params.t_sleep, params.n_retries)
    o = overwhelming_factor(n, params.p_target)
    rows = []
    for r in params.r_limits:
        rate, total = packet_volume(round(o), r, params.window)
        rows.append(AnalysisRow(params.name, n, o, r, rate, total))
    return rows


def wilson_interval(successes: int, trials: int, z: float = 1.959964) -> tuple[float, float]:
    if trials <= 0:
        raise ValueError("need at least one trial")
    p = successes / trials
    denom = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def _flag(computed, printed) -> str:
    if printed is None:
        return ""
    return "ok" if abs(computed - printed) <= 1 else f"differs (printed {printed})"


def table4(scenarios=None) -> list[dict]:
    out = []
    for key, params in (scenarios or SCENARIOS).items():
        n = n_attempts(params.t_attack, params.t_sleep, params.n_retries)
        o = overwhelming_factor(n, params.p_target)
        printed = PRINTED_TABLE4.get(key, (None, None))
        out.append({"scenario": key, "n_attempts": n, "t_attack_s": params.t_attack,
                    "t_sleep_s": params.t_sleep, "n_retries": params.n_retries,
                    "o": round(o), "o_exact": round(o, 3),
                    "flag": "; ".join(f for f in (_flag(n, printed[0]), _flag(round(o), printed[1]))
                                      if f and f != "ok") or ("ok" if printed[0] is not None else "")})
    return out


def table5(scenarios=None) -> list[dict]:
    out = []
    for key, params in (scenarios or SCENARIOS).items():
        for row in scenario_rows(params):
            printed = PRINTED_TABLE5.get((key, row.r_limit), (None, None))
            flags = [f for f in (_flag(row.r_attacker, printed[0]),
                                 _flag(row.total_packets_per_update, printed[1])) if f and f != "ok"]
            out.append({"scenario": key, "o": round(row.o), "r_limit": row.r_limit,
                        "r_attacker": row.r_attacker, "total_packets_per_update": row.total_packets_per_update,
                        "flag": "; ".join(flags) or ("ok" if printed[0] is not None else "")})
    return out


def to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def render_tables(scenarios=None) -> tuple[str, str]:
    """Both cost tables as CSV text, each row carrying a flag column."""
    return to_csv(table4(scenarios)), to_csv(table5(scenarios))
