"""Latency digests: exact sorted store by default, log-bucket histogram when configured.

Samples are integer picoseconds (the harness-wide time unit), so digests hash
and replay bit-identically. The exact store gives nearest-rank percentiles
that match a sort-based oracle; the histogram keeps relative error under 1%
via geometric buckets with growth factor 1.02 and geometric-mean representatives.
"""

from __future__ import annotations

import math

PS_PER_SECOND = 10**12


def to_ps(seconds: float) -> int:
    return round(seconds * PS_PER_SECOND)


def to_seconds(ps: int) -> float:
    return ps / PS_PER_SECOND


_GROWTH = 1.02
_LN_GROWTH = math.log(_GROWTH)


class LatencyDigest:
    """Collects latency samples in picoseconds and answers percentile queries."""

    def __init__(self, mode: str = "exact"):
        if mode not in ("exact", "histogram"):
            raise ValueError(f"unknown digest mode {mode!r}")
        self.mode = mode
        self.count = 0
        self.min_ps: int | None = None
        self.max_ps: int | None = None
        self.sum_ps = 0
        self._samples: list[int] = []          # exact mode
        self._buckets: dict[int, int] = {}     # histogram mode: bucket index -> count
        self._sorted = True

    @staticmethod
    def _bucket_of(ps: int) -> int:
        if ps <= 0:
            return -1  # dedicated zero/sub-ps bucket
        return int(math.log(ps) / _LN_GROWTH)

    @staticmethod
    def _bucket_rep(idx: int) -> int:
        if idx < 0:
            return 0
        # geometric mean of [g^idx, g^(idx+1)): relative error <= sqrt(g)-1 < 1%
        return round(_GROWTH ** (idx + 0.5))

    def add(self, ps: int):
        ps = int(ps)
        self.count += 1
        self.sum_ps += ps
        self.min_ps = ps if self.min_ps is None else min(self.min_ps, ps)
        self.max_ps = ps if self.max_ps is None else max(self.max_ps, ps)
        if self.mode == "exact":
            self._samples.append(ps)
            self._sorted = False
        else:
            idx = self._bucket_of(ps)
            self._buckets[idx] = self._buckets.get(idx, 0) + 1

    def extend(self, values):
        for v in values:
            self.add(v)

    def _ensure_sorted(self):
        if not self._sorted:
            self._samples.sort()
            self._sorted = True

    def percentile_ps(self, q: float) -> int:
        """Nearest-rank percentile: the sample at 1-based index ceil(q*n)."""
        if self.count == 0:
            raise ValueError("empty digest")
        if not (0.0 < q < 1.0):
            raise ValueError("q must be in (0, 1)")
        rank = max(1, math.ceil(q * self.count))
        if self.mode == "exact":
            self._ensure_sorted()
            return self._samples[rank - 1]
        cum = 0
        for idx in sorted(self._buckets):
            cum += self._buckets[idx]
            if cum >= rank:
                return self._bucket_rep(idx)
        return self.max_ps

    def percentile(self, q: float) -> float:
        return to_seconds(self.percentile_ps(q))

    @property
    def mean(self) -> float:
        if self.count == 0:
            raise ValueError("empty digest")
        return to_seconds(self.sum_ps / self.count)

    @property
    def min(self) -> float:
        if self.count == 0:
            raise ValueError("empty digest")
        return to_seconds(self.min_ps)

    @property
    def max(self) -> float:
        if self.count == 0:
            raise ValueError("empty digest")
        return to_seconds(self.max_ps)

    def cdf_rows(self) -> list[tuple[float, float]]:
        """Empirical CDF: one (value_seconds, i/n) row per sample."""
        if self.mode != "exact":
            rows = []
            cum = 0
            for idx in sorted(self._buckets):
                cum += self._buckets[idx]
                rows.append((to_seconds(self._bucket_rep(idx)), cum / self.count))
            return rows
        self._ensure_sorted()
        n = self.count
        return [(to_seconds(v), (i + 1) / n) for i, v in enumerate(self._samples)]

    def histogram_rows(self, num_bins: int = 50) -> list[tuple[float, float, int]]:
        """Density data (bin_lo_s, bin_hi_s, count) for plotting tools."""
        if self.count == 0:
            return []
        if self.mode == "histogram":
            return [(to_seconds(round(_GROWTH ** i)) if i >= 0 else 0.0,
                     to_seconds(round(_GROWTH ** (i + 1))) if i >= 0 else 0.0,
                     c) for i, c in sorted(self._buckets.items())]
        self._ensure_sorted()
        lo, hi = self._samples[0], self._samples[-1]
        width = max(1, (hi - lo + num_bins - 1) // num_bins)
        counts: dict[int, int] = {}
        for v in self._samples:
            counts[(v - lo) // width] = counts.get((v - lo) // width, 0) + 1
        return [(to_seconds(lo + b * width), to_seconds(lo + (b + 1) * width), c)
                for b, c in sorted(counts.items())]

    def to_doc(self) -> dict:
        doc = {"mode": self.mode, "count": self.count, "sum_ps": self.sum_ps,
               "min_ps": self.min_ps, "max_ps": self.max_ps}
        if self.mode == "exact":
            self._ensure_sorted()
            doc["samples_ps"] = list(self._samples)
        else:
            doc["buckets"] = {str(k): v for k, v in sorted(self._buckets.items())}
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "LatencyDigest":
        d = cls(doc["mode"])
        d.count = doc["count"]
        d.sum_ps = doc["sum_ps"]
        d.min_ps = doc["min_ps"]
        d.max_ps = doc["max_ps"]
        if d.mode == "exact":
            d._samples = [int(v) for v in doc["samples_ps"]]
            d._sorted = True
        else:
            d._buckets = {int(k): v for k, v in doc["buckets"].items()}
        return d
