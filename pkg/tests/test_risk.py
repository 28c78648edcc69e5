import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drlora.risk import (
    Family,
    RiskMeasureSpec,
    cvar_curve,
    cvar_right,
    distorted_value,
    ltv,
    make_empirical,
    risk_curve,
    rtv,
    var_right,
)

atoms_st = st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=40)
alpha_st = st.floats(0.01, 1.0)

CVAR = RiskMeasureSpec(Family.CVAR, 0.01, 1.0)
QUANT = RiskMeasureSpec(Family.QUANTILE, 0.01, 1.0)


def brute_cvar(values, alpha):
    """Tail average by walking the top alpha mass atom by atom."""
    xs = sorted(values, reverse=True)
    k = len(xs)
    remaining, total = alpha, 0.0
    for x in xs:
        w = min(1.0 / k, remaining)
        total += w * x
        remaining -= w
        if remaining <= 0:
            break
    return total / alpha


class TestEmpirical:
    def test_sorted(self):
        assert make_empirical([3, 1, 2]).atoms.tolist() == [1, 2, 3]

    def test_singleton_and_duplicates(self):
        assert make_empirical([5]).atoms.tolist() == [5]
        d = make_empirical([2, 2, 2])
        assert d.atoms.tolist() == [2, 2, 2] and d.count == 3

    @pytest.mark.parametrize("bad", [[], [1.0, np.nan], [np.inf]])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            make_empirical(bad)

    def test_read_only(self):
        d = make_empirical([1, 2])
        with pytest.raises(ValueError):
            d.atoms[0] = 5

    @given(atoms_st)
    def test_order_irrelevant(self, xs):
        assert make_empirical(xs) == make_empirical(list(reversed(xs)))


class TestCvar:
    @pytest.mark.parametrize("alpha,expected", [(1.0, 2.5), (0.25, 4.0), (0.5, 3.5)])
    def test_examples(self, alpha, expected):
        assert cvar_right(make_empirical([1, 2, 3, 4]), alpha) == expected

    @pytest.mark.parametrize("alpha", [0.0, -0.1, 1.5])
    def test_rejects_alpha(self, alpha):
        with pytest.raises(ValueError):
            cvar_right(make_empirical([1, 2]), alpha)

    @given(atoms_st, alpha_st)
    def test_matches_brute_force(self, xs, alpha):
        assert cvar_right(make_empirical(xs), alpha) == pytest.approx(brute_cvar(xs, alpha), abs=1e-9)

    @given(atoms_st)
    def test_monotone_and_mean(self, xs):
        d = make_empirical(xs)
        curve = cvar_curve(d, np.linspace(0.01, 1.0, 200))
        assert np.all(np.diff(curve) <= 0.0)
        assert cvar_right(d, 1.0) == d.mean()
        assert d.mean() >= var_right(d, 1.0)

    @given(atoms_st, alpha_st, st.floats(-50, 50), st.floats(0, 10))
    def test_translation_and_homogeneity(self, xs, alpha, c, lam):
        d = make_empirical(xs)
        base = cvar_right(d, alpha)
        assert cvar_right(d.shift(c), alpha) == pytest.approx(base + c, abs=1e-9)
        assert cvar_right(d.scale(lam), alpha) == pytest.approx(lam * base, abs=1e-9)
        assert var_right(d.shift(c), alpha) == pytest.approx(var_right(d, alpha) + c, abs=1e-12)

    @given(st.floats(-10, 10), st.integers(1, 30), alpha_st)
    def test_constant(self, c, k, alpha):
        assert cvar_right(make_empirical([c] * k), alpha) == c

    @given(atoms_st, alpha_st)
    def test_pure(self, xs, alpha):
        d = make_empirical(xs)
        assert cvar_right(d, alpha) == cvar_right(d, alpha)


class TestVar:
    def test_examples(self):
        d = make_empirical([1, 2, 3, 4])
        assert var_right(make_empirical([5]), 0.3) == 5
        assert var_right(d, 1.0) == 1
        assert var_right(d, 0.25) == 3

    @given(atoms_st, alpha_st)
    def test_inverse_cdf_definition(self, xs, alpha):
        d = make_empirical(xs)
        v = var_right(d, alpha)
        # smallest atom x with F(x) >= 1 - alpha
        k = d.count
        cdf = np.searchsorted(d.atoms, d.atoms, side="right") / k
        ok = d.atoms[cdf >= 1 - alpha - 1e-12]
        assert v == ok.min() or np.mean(d.atoms <= v) >= 1 - alpha - 1e-12


class TestDistorted:
    def test_identity_distortion(self):
        spec = RiskMeasureSpec(Family.TABULATED, 0.1, 1.0, lambda u, a: np.asarray(u, float))
        assert distorted_value(make_empirical([1, 2, 3, 4]), spec, 0.5) == 2.5

    def test_cvar_example(self):
        assert distorted_value(make_empirical([1, 2, 3, 4]), CVAR, 0.5) == 3.5

    @given(atoms_st, alpha_st)
    def test_cvar_family_agrees(self, xs, alpha):
        d = make_empirical(xs)
        assert abs(distorted_value(d, CVAR, alpha) - cvar_right(d, alpha)) <= 1e-12 * max(1, np.abs(xs).max())

    @given(atoms_st, alpha_st)
    def test_quantile_family_agrees(self, xs, alpha):
        d = make_empirical(xs)
        assert distorted_value(d, QUANT, alpha) == var_right(d, alpha)
        assert risk_curve(QUANT, d, np.array([alpha]))[0] == var_right(d, alpha)

    @given(st.floats(-10, 10), st.integers(1, 20), alpha_st)
    def test_constant(self, c, k, alpha):
        d = make_empirical([c] * k)
        assert distorted_value(d, CVAR, alpha) == pytest.approx(c, abs=1e-12)
        assert distorted_value(d, QUANT, alpha) == c

    def test_domain(self):
        spec = RiskMeasureSpec(Family.CVAR, 0.2, 0.8)
        with pytest.raises(ValueError):
            distorted_value(make_empirical([1]), spec, 0.1)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            RiskMeasureSpec(Family.CVAR, 0.5, 0.4)
        with pytest.raises(ValueError):
            RiskMeasureSpec(Family.TABULATED, 0.1, 1.0)
        with pytest.raises(ValueError):
            RiskMeasureSpec(Family.TABULATED, 0.1, 1.0, lambda u, a: 1 - np.asarray(u))


class TestTruncatedVariance:
    def test_examples(self):
        assert rtv(make_empirical([2, 2, 2, 2])) == 0
        assert rtv(make_empirical([0, 1, 2, 3])) == 0.5
        assert rtv(make_empirical([0, 0, 2, 2])) == 0
        assert ltv(make_empirical([2, 2, 2, 2])) == 0
        assert ltv(make_empirical([0, 1, 2, 3])) == 0.5

    def test_mirror(self):
        d = make_empirical([-3, -1, 1, 3])
        assert ltv(d) == rtv(d.scale(-1))

    def test_odd_count_duplicates_median(self):
        assert rtv(make_empirical([0, 1, 2])) == rtv(make_empirical([0, 1, 1, 2]))

    @given(atoms_st, st.floats(-50, 50), st.floats(0, 5))
    def test_invariances(self, xs, c, lam):
        d = make_empirical(xs)
        assert rtv(d) >= 0 and ltv(d) >= 0
        assert rtv(d.shift(c)) == pytest.approx(rtv(d), rel=1e-9, abs=1e-6)
        assert ltv(d.scale(lam)) == pytest.approx(lam ** 2 * ltv(d), rel=1e-9, abs=1e-9)
        assert ltv(d) == pytest.approx(rtv(d.scale(-1)), rel=1e-12, abs=1e-12)
