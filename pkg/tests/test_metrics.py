import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from gnnverify.errors import SnapshotMismatchError
from gnnverify.explain import AttributionMap, RuleSet, Rule
from gnnverify.graph import ForgetSet
from gnnverify.metrics import (
    MetricVector, esd, ged_delta, grs, heatmap_shift, mi_auc, residual_attribution,
)


def pairwise_auc(member, nonmember):
    """O(n^2) reference: member score -loss beats non-member score."""
    wins = ties = 0
    for a in member:
        for b in nonmember:
            if -a > -b:
                wins += 1
            elif -a == -b:
                ties += 1
    return (wins + 0.5 * ties) / (len(member) * len(nonmember))


def rules(n):
    return RuleSet(tuple(Rule((), 0, 1) for _ in range(n)), 3)


vectors = st.integers(1, 30).flatmap(
    lambda n: st.tuples(
        st.lists(st.floats(0, 100, allow_nan=False), min_size=n, max_size=n),
        st.lists(st.floats(0, 100, allow_nan=False), min_size=n, max_size=n),
    )
)


class TestResidualAttribution:
    def test_deleted_targets(self):
        att = AttributionMap([0.0, 0.0, 1.0, 2.0])
        assert residual_attribution(att, [0, 1], [2, 3]) == 0.0

    def test_uniform(self):
        att = np.ones(100)
        assert residual_attribution(att, range(5), range(100)) == pytest.approx(5.0, rel=1e-15)

    def test_hand_vector(self):
        att = np.array([0.0, 2.0, 3.0, 5.0])
        assert residual_attribution(att, [1], [1, 2, 3]) == pytest.approx(20.0, rel=1e-15)

    def test_degenerate_denominator_flagged(self):
        flags = []
        assert residual_attribution(np.zeros(3), [0], [0, 1, 2], flags) == 0.0
        assert flags == ["ra-degenerate"]

    @settings(max_examples=1000, deadline=None)
    @given(st.integers(2, 60), st.data())
    def test_uniform_case_general(self, n_surv, data):
        m = data.draw(st.integers(1, n_surv))
        c = data.draw(st.floats(1e-3, 1e3))
        att = np.full(n_surv, c)
        got = residual_attribution(att, range(m), range(n_surv))
        assert got == pytest.approx(100.0 * m / n_surv, rel=1e-12)

    @settings(max_examples=1000, deadline=None)
    @given(vectors, st.data())
    def test_range(self, vs, data):
        a = np.array(vs[0])
        f = data.draw(st.sets(st.integers(0, len(a) - 1)))
        assert 0.0 <= residual_attribution(a, f, range(len(a))) <= 100.0 + 1e-9


class TestHeatmapShift:
    def test_examples(self):
        assert heatmap_shift([1.0, 2.0], [1.0, 2.0]) == 0
        assert heatmap_shift([0, 0, 3.0], [0, 1.0, 0], 3) == pytest.approx(4 / 3, rel=1e-15)

    def test_domain_mismatch(self):
        with pytest.raises(ValueError):
            heatmap_shift([1.0], [1.0, 2.0])

    @settings(max_examples=1000, deadline=None)
    @given(vectors, st.floats(0, 10))
    def test_algebra(self, vs, c):
        a, b = np.array(vs[0]), np.array(vs[1])
        h = heatmap_shift(a, b)
        assert h >= 0
        assert h == heatmap_shift(b, a)
        assert (h == 0) == np.array_equal(a, b)
        assert heatmap_shift(c * a, c * b) == pytest.approx(c * h, rel=1e-9, abs=1e-300)


class TestESD:
    def test_examples(self):
        pre = np.array([0.0, 0.4, 0.6])
        post = np.array([0.0, 0.1, 0.2])
        assert esd(pre, post, [1, 2]) == pytest.approx(0.35, rel=1e-15)
        assert esd(pre, pre, [1, 2]) == 0

    def test_deletion_equals_pre_mean(self):
        pre = np.array([0.2, 0.5, 0.9])
        post = np.array([0.0, 0.7, 0.0])
        assert esd(pre, post, [0, 2]) == pytest.approx(0.55, rel=1e-15)

    def test_empty_forget_set(self):
        with pytest.raises(ValueError):
            esd([1.0], [1.0], [])

    @settings(max_examples=1000, deadline=None)
    @given(vectors, st.floats(0, 10), st.data())
    def test_algebra(self, vs, c, data):
        a, b = np.array(vs[0]), np.array(vs[1])
        f = sorted(data.draw(st.sets(st.integers(0, len(a) - 1), min_size=1)))
        e = esd(a, b, f)
        assert e >= 0 and e == esd(b, a, f)
        assert (e == 0) == np.array_equal(a[f], b[f])
        assert esd(c * a, c * b, f) == pytest.approx(c * e, rel=1e-9, abs=1e-300)


class TestGED:
    def test_examples(self):
        p = {(0, 1), (1, 2), (2, 3)}
        assert ged_delta(p, p) == 0
        assert ged_delta(p, set()) == 3

    @pytest.mark.parametrize("seed", range(5))
    def test_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        a = {tuple(sorted(e)) for e in rng.integers(0, 15, (40, 2)).tolist() if e[0] != e[1]}
        b = {tuple(sorted(e)) for e in rng.integers(0, 15, (40, 2)).tolist() if e[0] != e[1]}
        want = sum(1 for e in a if e not in b) + sum(1 for e in b if e not in a)
        assert ged_delta(a, b) == want


class TestGRS:
    def test_examples(self):
        assert grs(rules(4), rules(4)) == 0
        assert grs(rules(8), rules(5)) == 3
        assert grs(rules(2), rules(6)) == -4


class TestMIAUC:
    def test_perfect(self):
        assert mi_auc([0.1, 0.2], [0.5, 0.9, 1.0]) == 1.0

    def test_identical_pools(self):
        assert mi_auc([0.3, 0.5, 0.5], [0.5, 0.3, 0.5]) == 0.5

    def test_empty(self):
        with pytest.raises(ValueError):
            mi_auc([], [1.0])

    def test_random_pools_exact(self):
        rng = np.random.default_rng(0)
        m, o = rng.random(50), rng.random(50)
        assert mi_auc(m, o) == pairwise_auc(m, o)

    def test_matches_threshold_sweep_integral(self):
        rng = np.random.default_rng(1)
        m, o = rng.integers(0, 8, 40) / 4, rng.integers(0, 8, 30) / 4
        # trapezoidal area under the ROC traced by thresholds on score = -loss
        s_m, s_o = -m, -o
        thr = np.concatenate([[np.inf], np.unique(np.concatenate([s_m, s_o]))[::-1]])
        tpr = [(s_m >= t).mean() for t in thr]
        fpr = [(s_o >= t).mean() for t in thr]
        assert mi_auc(m, o) == pytest.approx(np.trapezoid(tpr, fpr), abs=1e-12)

    pools = st.lists(st.integers(0, 20), min_size=1, max_size=40)

    @settings(max_examples=1000, deadline=None)
    @given(pools, pools)
    def test_complement_and_monotone(self, a, b):
        a, b = np.array(a, float), np.array(b, float)
        assert mi_auc(a, b) + mi_auc(b, a) == 1.0
        for f in (lambda x: 3 * x + 1, np.exp, lambda x: np.sqrt(x) + 0.5):
            assert mi_auc(f(a), f(b)) == mi_auc(a, b)


class TestMetricVector:
    def test_round_trip(self):
        v = MetricVector(4.5, 0.0, 0.1, 0.2, 7, -1, 0.52, 0.51, ["x"])
        w = MetricVector.from_record(v.as_record(), v.flags)
        assert w == v

    def test_ranges(self):
        with pytest.raises(ValueError):
            MetricVector(101.0, 0, 0, 0, 0, 0, 0.5, 0.5)
        with pytest.raises(ValueError):
            MetricVector(1.0, 0, 0, 0, -1, 0, 0.5, 0.5)
        with pytest.raises(ValueError):
            MetricVector(1.0, 0, 0, 0, 0, 0, 1.5, 0.5)
