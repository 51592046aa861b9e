import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as scipy_stats

from fiberscope.stats import (
    DegenerateSamplesError,
    SampleGroup,
    group_report,
    regularized_incomplete_beta,
    t_sf_two_sided,
    t_test,
)


class TestIncompleteBeta:
    @pytest.mark.parametrize("a,b", [(0.5, 0.5), (2, 0.5), (5, 0.5), (50, 0.5), (2, 3)])
    def test_matches_scipy_reference(self, a, b):
        for x in np.linspace(0.001, 0.999, 37):
            ours = regularized_incomplete_beta(a, b, float(x))
            ref = float(scipy_stats.beta.cdf(x, a, b))
            assert ours == pytest.approx(ref, abs=1e-10)

    def test_endpoints(self):
        assert regularized_incomplete_beta(2, 3, 0.0) == 0.0
        assert regularized_incomplete_beta(2, 3, 1.0) == 1.0


class TestTSurvival:
    @pytest.mark.parametrize("df", [1, 4, 10, 100])
    def test_matches_reference_tables(self, df):
        for t in (0.1, 0.6124, 1.0, 1.96, 2.5, 4.0):
            ref = 2.0 * float(scipy_stats.t.sf(t, df))
            assert t_sf_two_sided(t, df) == pytest.approx(ref, abs=1e-10)

    def test_symmetric_in_t(self):
        assert t_sf_two_sided(1.7, 7) == t_sf_two_sided(-1.7, 7)

    def test_t_zero_gives_one(self):
        assert t_sf_two_sided(0.0, 5) == 1.0


class TestTTest:
    def test_identical_groups(self):
        a = SampleGroup("a", (1, 2, 3))
        b = SampleGroup("b", (1, 2, 3))
        res = t_test(a, b)
        assert res.t == 0.0
        assert res.p_value == 1.0

    def test_pooled_textbook_example(self):
        """[2,4,6] vs [1,3,5]: hand computation gives t = 1/sqrt(8/3).

        means 4 and 3, both variances 4, pooled SED = 2*sqrt(2/3);
        p frozen from the textbook formula evaluated by an independent
        reference (0.573392...), df = 4.
        """
        res = t_test(SampleGroup("a", (2, 4, 6)), SampleGroup("b", (1, 3, 5)))
        assert res.t == pytest.approx(0.6123724356957945, abs=1e-9)
        assert res.degrees_freedom == 4
        assert res.p_value == pytest.approx(0.5733922538253555, abs=1e-9)
        assert res.sed == pytest.approx(2 * math.sqrt(2 / 3), abs=1e-12)

    def test_matches_scipy_pooled_and_welch(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            a = SampleGroup("a", tuple(rng.normal(10, 2, rng.integers(3, 30))))
            b = SampleGroup("b", tuple(rng.normal(11, 3, rng.integers(3, 30))))
            pooled = t_test(a, b, "pooled")
            ref = scipy_stats.ttest_ind(a.values, b.values, equal_var=True)
            assert pooled.t == pytest.approx(ref.statistic, abs=1e-10)
            assert pooled.p_value == pytest.approx(ref.pvalue, abs=1e-10)
            welch = t_test(a, b, "welch")
            refw = scipy_stats.ttest_ind(a.values, b.values, equal_var=False)
            assert welch.t == pytest.approx(refw.statistic, abs=1e-10)
            assert welch.p_value == pytest.approx(refw.pvalue, abs=1e-10)

    def test_antisymmetric_under_swap(self):
        a = SampleGroup("a", (2.0, 4.0, 6.0, 7.0))
        b = SampleGroup("b", (1.0, 3.0, 5.0))
        r1 = t_test(a, b)
        r2 = t_test(b, a)
        assert r1.t == pytest.approx(-r2.t, abs=1e-12)
        assert r1.p_value == pytest.approx(r2.p_value, abs=1e-12)

    def test_sign_matches_mean_difference(self):
        a = SampleGroup("a", (5.0, 6.0, 7.0))
        b = SampleGroup("b", (1.0, 2.0, 3.0))
        assert t_test(a, b).t > 0
        assert t_test(b, a).t < 0

    @given(
        shift=st.floats(-1000, 1000),
        scale=st.floats(0.01, 100),
        seed=st.integers(0, 200),
    )
    @settings(max_examples=40, deadline=None)
    def test_shift_scale_invariance(self, shift, scale, seed):
        rng = np.random.default_rng(seed)
        av = rng.normal(50, 5, 12)
        bv = rng.normal(53, 6, 15)
        base = t_test(SampleGroup("a", tuple(av)), SampleGroup("b", tuple(bv)))
        moved = t_test(
            SampleGroup("a", tuple(av * scale + shift)),
            SampleGroup("b", tuple(bv * scale + shift)),
        )
        assert moved.t == pytest.approx(base.t, rel=1e-7, abs=1e-9)
        assert moved.p_value == pytest.approx(base.p_value, rel=1e-6, abs=1e-9)

    def test_single_value_group_rejected(self):
        with pytest.raises(DegenerateSamplesError):
            SampleGroup("a", (5.0,))

    def test_constant_equal_groups_undefined(self):
        a = SampleGroup("a", (3.0, 3.0, 3.0))
        b = SampleGroup("b", (3.0, 3.0))
        with pytest.raises(DegenerateSamplesError):
            t_test(a, b)

    def test_constant_unequal_groups_infinite_t(self):
        a = SampleGroup("a", (4.0, 4.0))
        b = SampleGroup("b", (3.0, 3.0))
        res = t_test(a, b)
        assert math.isinf(res.t) and res.t > 0
        assert res.p_value == 0.0


class TestGroupReport:
    def test_equal_constant_groups(self):
        a = SampleGroup("a", (5.0, 5.0, 5.0))
        b = SampleGroup("b", (5.0, 5.0, 5.0))
        rep = group_report([a, b], "length_um")
        assert rep.pairwise[0].mean_difference_percent == 0.0
        ga, gb = rep.groups
        assert (ga.q1, ga.median, ga.q3, ga.minimum, ga.maximum) == (
            gb.q1, gb.median, gb.q3, gb.minimum, gb.maximum,
        )

    def test_synthetic_12_percent_difference(self):
        rng = np.random.default_rng(99)
        a = SampleGroup("T89", tuple(rng.normal(100, 10, 500)))
        b = SampleGroup("GA20ox", tuple(rng.normal(112, 10, 500)))
        rep = group_report([a, b], "length_um")
        cmp_ = rep.pairwise[0]
        assert cmp_.mean_difference_percent == pytest.approx(12.0, abs=1.0)
        assert cmp_.test.p_value < 1e-6

    def test_quartile_ordering(self):
        rng = np.random.default_rng(3)
        g = SampleGroup("g", tuple(rng.exponential(10, 101)))
        rep = group_report([g, g], "width_um")
        s = rep.groups[0]
        assert s.minimum <= s.q1 <= s.median <= s.q3 <= s.maximum

    def test_requires_two_groups(self):
        with pytest.raises(ValueError):
            group_report([SampleGroup("a", (1.0, 2.0))], "area_um2")

    def test_text_rendering(self):
        a = SampleGroup("a", (1.0, 2.0, 3.0))
        b = SampleGroup("b", (2.0, 3.0, 4.0))
        text = group_report([a, b], "length_um").to_text()
        assert "length_um" in text
        assert "a vs b" in text
