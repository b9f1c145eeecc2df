import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bmdl.errors import DimensionMismatch, Duplicate, OutOfRange
from bmdl.model import (
    ChangepointConfig,
    Hyperparams,
    Metadata,
    SeriesData,
    classify_counts,
    config_from_times,
    regime_lengths,
    regime_partition,
    season_of,
    times_of,
)


class TestConfigFromTimes:
    def test_empty(self):
        c = config_from_times([], 600, 3)
        assert c.m == 0
        assert c.indicators().sum() == 0
        assert c.indicators().shape == (597,)

    def test_three_shifts_regime_lengths(self):
        c = config_from_times([150, 300, 450], 600, 3)
        assert c.m == 3
        # oracle: count t in each regime directly
        t = np.arange(1, 601)
        counts = [np.sum(t < 150), np.sum((t >= 150) & (t < 300)),
                  np.sum((t >= 300) & (t < 450)), np.sum(t >= 450)]
        assert tuple(regime_lengths(c)) == tuple(counts) == (149, 150, 150, 151)

    def test_single_bit(self):
        c = config_from_times([4], 10, 3)
        np.testing.assert_array_equal(c.indicators(), [1, 0, 0, 0, 0, 0, 0])

    def test_unsorted_input_is_canonical(self):
        a = config_from_times([450, 150, 300], 600, 3)
        b = config_from_times([150, 300, 450], 600, 3)
        assert a == b and hash(a) == hash(b)

    @pytest.mark.parametrize("t", [0, 3, 11])
    def test_out_of_range(self, t):
        with pytest.raises(OutOfRange):
            config_from_times([t], 10, 3)

    def test_duplicate(self):
        with pytest.raises(Duplicate):
            config_from_times([5, 5], 10, 3)

    def test_nested_bivariate(self):
        c = config_from_times([[150], []], 600, 3)
        assert c.components == 2 and c.counts == (1, 0)
        assert config_from_times([], 600, 3, component_count=2).counts == (0, 0)
        with pytest.raises(DimensionMismatch):
            config_from_times([[150]], 600, 3, component_count=2)


class TestRegimePartition:
    def test_empty(self):
        assert regime_partition(config_from_times([], 10, 0)) == [(1, 10)]

    def test_three_shifts(self):
        c = config_from_times([150, 300, 450], 600, 3)
        assert regime_partition(c) == [(1, 149), (150, 299), (300, 449), (450, 600)]

    def test_adjacent_changepoints(self):
        c = config_from_times([4, 5], 10, 3)
        assert regime_partition(c) == [(1, 3), (4, 4), (5, 10)]


class TestClassifyCounts:
    def test_simulation_metadata(self):
        c = config_from_times([150, 300, 450], 600, 3)
        md = Metadata.from_times([75, 150, 250, 550], 600, 3)
        assert classify_counts(c, md) == (2, 1, 593, 4)

    def test_empty_metadata(self):
        c = config_from_times([150, 300], 600, 3)
        assert classify_counts(c, Metadata.empty(600, 3)) == (2, 0, 597, 0)
        assert classify_counts(c, None) == (2, 0, 597, 0)

    def test_all_documented(self):
        c = config_from_times([150], 600, 3)
        assert classify_counts(c, Metadata.from_times([150], 600, 3)) == (0, 1, 596, 1)

    def test_metadata_out_of_range(self):
        with pytest.raises(OutOfRange):
            Metadata.from_times([2], 600, 3)


@st.composite
def configs(draw, max_n=60):
    n = draw(st.integers(10, max_n))
    p = draw(st.integers(0, 3))
    c = draw(st.sampled_from([1, 2]))
    times = [sorted(draw(st.sets(st.integers(p + 1, n), max_size=8))) for _ in range(c)]
    return config_from_times(times if c == 2 else times[0], n, p, c)


class TestProperties:
    @settings(max_examples=200, deadline=None)
    @given(configs())
    def test_round_trip(self, c):
        assert config_from_times(times_of(c), c.n, c.p, c.components) == c

    @settings(max_examples=200, deadline=None)
    @given(configs())
    def test_partition_covers(self, c):
        for k in range(c.components):
            parts = regime_partition(c, k)
            assert len(parts) == len(c.times[k]) + 1
            assert sum(b - a + 1 for a, b in parts) == c.n
            assert parts[0][0] == 1 and parts[-1][1] == c.n
            assert all(parts[i][1] + 1 == parts[i + 1][0] for i in range(len(parts) - 1))

    @settings(max_examples=200, deadline=None)
    @given(configs(), st.data())
    def test_classify_sums(self, c, data):
        md = Metadata.from_times(data.draw(st.sets(st.integers(c.p + 1, c.n), max_size=6)),
                                 c.n, c.p)
        m1, m2, n1, n2 = classify_counts(c, md, 0)
        assert m1 + m2 == len(c.times[0])
        assert n1 + n2 == c.n - c.p
        assert m1 <= n1 and m2 <= n2


class TestSeriesData:
    def test_season_wraps(self):
        assert season_of(13, 12) == 1
        assert season_of(12, 12) == 12

    def test_rejects_missing(self):
        with pytest.raises(ValueError):
            SeriesData(np.r_[np.ones(30), np.nan], 12, 0)

    def test_rejects_short(self):
        with pytest.raises(ValueError):
            SeriesData(np.ones(25), 12, 2)

    def test_rejects_three_components(self):
        with pytest.raises(DimensionMismatch):
            SeriesData(np.ones((40, 3)), 12, 0)

    def test_label(self):
        d = SeriesData(np.zeros(1368), 12, 2, start=(1901, 1))
        assert d.label(1) == (1901, 1)
        assert d.label(1368) == (2014, 12)


class TestHyperparams:
    def test_prior_rates(self):
        hp = Hyperparams()
        assert round(hp.prior_rate(False), 4) == 0.0042
        assert round(hp.prior_rate(True), 4) == 0.0208
        assert round(Hyperparams.six_per_century().prior_rate(), 4) == 0.005

    def test_rejects_non_positive(self):
        with pytest.raises(ValueError):
            Hyperparams(nu=0)
        with pytest.raises(ValueError):
            Hyperparams(alpha_doc=(1, 1, 1, 0))
