"""Per-client token buckets, including aggregate spoofed floods.

Real packets are checked one at a time.  A spoofed flood is registered as a
Poisson stream over a window and its effect on the bucket is computed lazily
when the next real packet (or a window edge) arrives.

Token production follows a jittered lattice: token ``k`` appears at
``(k + U_k) / rate`` after the bucket was created, ``U_k`` uniform on [0, 1).
Counts over any interval are exact to within one token, as with a fluid bucket,
but the phase seen by a retry is random.  A fixed lattice phase-locks with
retry schedules that are multiples of the token period (0.8 s against 60/s, for
instance), so every retry of one query would see the same phase.  A token that
arrives while the bucket is full is discarded.

When the flood outpaces production, each token is taken by the first flood
arrival after it appears; by memorylessness that wait is ``Exp(flood_rate)``
and departures follow ``d_j = max(a_j, d_{j-1}) + E_j`` which numpy evaluates
in one pass.  The first discard (bucket full) ends the pass; the state there
is a valid restart point since the discard depends only on the past.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .engine import Flood, to_seconds

_CHUNK = 1024


def default_burst(rate: float, window: float = 0.2) -> int:
    """Bucket depth for a limit of ``rate`` per second over ``window`` seconds."""
    return max(1, int(math.ceil(rate * window)))


@dataclass
class _FloodWindow:
    rate: float
    start: float
    end: float


class TokenBucket:
    """Token bucket holding at most ``burst`` whole tokens.  Times in seconds."""

    def __init__(self, rate: float, burst: int, rng: np.random.Generator, now: float = 0.0):
        if rate <= 0:
            raise ValueError("rate must be positive")
        if burst < 1:
            raise ValueError("burst must be at least one token")
        self.rate = float(rate)
        self.burst = int(burst)
        self.tokens = self.burst
        self.last = float(now)
        self.rng = rng
        self.epoch = float(now)
        self.floods: list[_FloodWindow] = []
        self.flood_served = 0
        self.admitted = 0
        self.rejected = 0
        self._k = 0
        self._times = np.empty(0)

    @property
    def last_refill(self) -> float:
        return self.last

    def add_flood(self, rate: float, start: float, end: float) -> None:
        if start < self.last:
            raise ValueError("flood window starts before the bucket's current time")
        if rate > 0 and end > start:
            self.floods.append(_FloodWindow(float(rate), float(start), float(end)))

    def peek(self, t: float) -> int:
        self._advance(t)
        return self.tokens

    def try_consume(self, t: float) -> bool:
        self._advance(t)
        if self.tokens >= 1:
            self.tokens -= 1
            self.admitted += 1
            return True
        self.rejected += 1
        return False

    # -- token schedule -----------------------------------------------------
    def _token_times(self, u1: float) -> np.ndarray:
        """Pop scheduled token times up to and including ``u1``."""
        while len(self._times) == 0 or self._times[-1] <= u1:
            n = max(64, int((u1 - self.epoch) * self.rate) - self._k + 2)
            idx = np.arange(self._k, self._k + n)
            fresh = self.epoch + (idx + self.rng.random(n)) / self.rate
            self._times = np.concatenate([self._times, fresh])
            self._k += n
        cut = int(np.searchsorted(self._times, u1, side="right"))
        out, self._times = self._times[:cut], self._times[cut:]
        return out

    # -- evolution ----------------------------------------------------------
    def _advance(self, t: float) -> None:
        if t <= self.last:
            return
        cuts = {self.last, t}
        for f in self.floods:
            for edge in (f.start, f.end):
                if self.last < edge < t:
                    cuts.add(edge)
        edges = sorted(cuts)
        for u0, u1 in zip(edges, edges[1:]):
            lam = sum(f.rate for f in self.floods if f.start <= u0 < f.end)
            arrivals = self._token_times(u1)
            if lam <= 0:
                self.tokens = min(self.burst, self.tokens + len(arrivals))
            elif lam < 2.0 * self.rate:
                self._explicit_flood(u0, u1, lam, arrivals)
            else:
                self._lindley_flood(u0, u1, lam, arrivals)
            self.last = u1
        if self.floods:
            self.floods = [f for f in self.floods if f.end > t]

    def _explicit_flood(self, u0, u1, lam, arrivals) -> None:
        """Packet-by-packet flood, used when it is not much faster than refill."""
        n = int(self.rng.poisson(lam * (u1 - u0)))
        flood = np.sort(self.rng.uniform(u0, u1, n))
        counts = np.searchsorted(arrivals, flood, side="right")
        q, b, seen, served = self.tokens, self.burst, 0, 0
        for c in counts.tolist():
            if c > seen:
                q = min(b, q + c - seen)
                seen = c
            if q:
                q -= 1
                served += 1
        self.tokens = min(b, q + len(arrivals) - seen)
        self.flood_served += served

    def _lindley_flood(self, u0, u1, lam, arrivals) -> None:
        b = self.burst
        t0, q0, pos = u0, self.tokens, 0
        while True:
            chunk = arrivals[pos: pos + _CHUNK]
            last_chunk = pos + len(chunk) >= len(arrivals)
            horizon = u1 if last_chunk else float(chunk[-1])
            arr = np.concatenate([np.full(q0, t0), chunk])
            m = len(arr)
            if m == 0:
                self.tokens = 0
                return
            e = self.rng.exponential(1.0 / lam, m)
            s = np.cumsum(e)
            dep = s + np.maximum.accumulate(np.maximum(arr, t0) - (s - e))
            if m > b:
                ok = dep[: m - b] <= arr[b:]
                if not ok.all():
                    # arrival j finds the bucket full and is discarded
                    j = int(np.argmin(ok)) + b
                    tj = float(arr[j])
                    gone = int(np.searchsorted(dep[:j], tj, side="right"))
                    self.flood_served += gone
                    pos += j + 1 - q0
                    t0, q0 = tj, j - gone
                    continue
            gone = int(np.searchsorted(dep, horizon, side="right"))
            self.flood_served += gone
            if last_chunk:
                self.tokens = min(b, m - gone)
                return
            t0, q0 = horizon, m - gone
            pos += len(chunk)


class RateLimiter:
    """Token buckets keyed by exact client address (a /32 for IPv4)."""

    def __init__(self, rate: float, rng: np.random.Generator, burst: int | None = None,
                 window: float = 0.2):
        self.rate = float(rate)
        self.burst = burst if burst is not None else default_burst(rate, window)
        self.rng = rng
        self.buckets: dict[str, TokenBucket] = {}

    def bucket(self, key: str, t: float) -> TokenBucket:
        b = self.buckets.get(key)
        if b is None:
            b = self.buckets[key] = TokenBucket(self.rate, self.burst, self.rng, now=t)
        return b

    def allow(self, key: str, t_us: int) -> bool:
        t = to_seconds(t_us)
        return self.bucket(key, t).try_consume(t)

    def add_flood(self, flood: Flood, rate: float | None = None) -> None:
        start = to_seconds(flood.start_us)
        b = self.bucket(flood.src, start)
        b.add_flood(flood.rate if rate is None else rate, max(start, b.last), to_seconds(flood.end_us))
