import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from servebench.digest import LatencyDigest, to_ps, to_seconds


class TestExactDigest:
    def test_nearest_rank_on_1_to_100(self):
        d = LatencyDigest()
        d.extend(range(1, 101))
        assert d.percentile_ps(0.99) == 99
        assert d.percentile_ps(0.5) == 50
        assert d.percentile_ps(0.999) == 100

    def test_matches_sort_oracle_on_exponential_samples(self):
        rng = np.random.default_rng(4)
        samples = [to_ps(s) for s in rng.exponential(0.01, size=10_000)]
        d = LatencyDigest()
        d.extend(samples)
        ordered = sorted(samples)
        for q in (0.01, 0.25, 0.5, 0.9, 0.95, 0.99, 0.999):
            oracle = ordered[math.ceil(q * len(ordered)) - 1]
            assert d.percentile_ps(q) == oracle

    def test_empty_digest_raises(self):
        with pytest.raises(ValueError, match="empty"):
            LatencyDigest().percentile(0.5)

    def test_q_outside_unit_interval(self):
        d = LatencyDigest()
        d.add(1)
        for q in (0.0, 1.0, -0.1):
            with pytest.raises(ValueError):
                d.percentile(q)

    def test_summary_stats(self):
        d = LatencyDigest()
        d.extend([to_ps(0.001), to_ps(0.002), to_ps(0.003)])
        assert d.min == pytest.approx(0.001)
        assert d.max == pytest.approx(0.003)
        assert d.mean == pytest.approx(0.002)
        assert d.count == 3

    def test_cdf_rows(self):
        d = LatencyDigest()
        d.extend([to_ps(v) for v in (0.3, 0.1, 0.2)])
        rows = d.cdf_rows()
        assert len(rows) == 3
        assert rows[0] == (pytest.approx(0.1), pytest.approx(1 / 3))
        assert rows[-1] == (pytest.approx(0.3), pytest.approx(1.0))

    def test_doc_round_trip_is_exact(self):
        rng = np.random.default_rng(11)
        d = LatencyDigest()
        d.extend(int(v) for v in rng.integers(0, 10**12, size=500))
        back = LatencyDigest.from_doc(d.to_doc())
        assert back.to_doc() == d.to_doc()
        assert back.percentile_ps(0.99) == d.percentile_ps(0.99)


class TestHistogramDigest:
    @given(st.lists(st.floats(1e-6, 10.0, allow_nan=False), min_size=50, max_size=400),
           st.sampled_from([0.5, 0.9, 0.99]))
    @settings(max_examples=60, deadline=None)
    def test_relative_error_under_one_percent(self, values, q):
        samples = [to_ps(v) for v in values]
        exact = LatencyDigest("exact")
        hist = LatencyDigest("histogram")
        exact.extend(samples)
        hist.extend(samples)
        truth = exact.percentile(q)
        approx = hist.percentile(q)
        assert abs(approx - truth) / truth <= 0.01

    def test_histogram_on_10k_exponential(self):
        rng = np.random.default_rng(5)
        samples = [to_ps(s) for s in rng.exponential(0.01, size=10_000)]
        exact = LatencyDigest("exact")
        hist = LatencyDigest("histogram")
        exact.extend(samples)
        hist.extend(samples)
        for q in (0.5, 0.95, 0.99):
            assert abs(hist.percentile(q) - exact.percentile(q)) / exact.percentile(q) <= 0.01

    def test_zero_bucket(self):
        d = LatencyDigest("histogram")
        d.extend([0, 0, 0, to_ps(1.0)])
        assert d.percentile_ps(0.5) == 0

    def test_doc_round_trip(self):
        d = LatencyDigest("histogram")
        d.extend([to_ps(v) for v in (0.001, 0.01, 0.1, 0.1)])
        back = LatencyDigest.from_doc(d.to_doc())
        assert back.percentile_ps(0.9) == d.percentile_ps(0.9)


class TestTimeConversion:
    def test_ps_round_trip(self):
        assert to_seconds(to_ps(1.0)) == 1.0
        assert to_ps(0.001304224) == 1_304_224_000
        assert to_ps(0.0) == 0
