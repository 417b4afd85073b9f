import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from indexscaling.scaling import (
    DomainError,
    NegativeDensityError,
    VolatilityMixture,
    inhom_coefficients,
    inhom_pdf,
    interval_width,
    invert_cf_oracle,
    mixture_cf,
    mixture_pdf,
    otimes_joint_cf,
    stage_variance_factor,
    student_t_mixture,
)

TWO = VolatilityMixture((0.5, 0.5), (1.0, 2.0))

mixtures = st.lists(
    st.tuples(st.floats(0.05, 1.0), st.floats(0.1, 5.0)), min_size=1, max_size=5
).map(lambda c: VolatilityMixture.from_arrays([w for w, _ in c], [s for _, s in c], normalize=True))


def normal(x, var):
    return math.exp(-x * x / (2 * var)) / math.sqrt(2 * math.pi * var)


class TestVolatilityMixture:
    def test_rejects_bad_weights(self):
        with pytest.raises(DomainError):
            VolatilityMixture((0.5, 0.4), (1.0, 2.0))
        with pytest.raises(DomainError):
            VolatilityMixture((1.0,), (0.0,))
        with pytest.raises(DomainError):
            VolatilityMixture((), ())

    def test_student_t_preset(self):
        mix = student_t_mixture(3.0, 0.01, 16)
        assert mix.n_components == 16
        assert abs(sum(mix.weights) - 1.0) < 1e-12
        assert list(mix.sigmas) == sorted(mix.sigmas)

    def test_dict_round_trip(self):
        assert VolatilityMixture.from_dict(TWO.to_dict()) == TWO


class TestMixturePdf:
    def test_standard_normal_peak(self):
        assert mixture_pdf(VolatilityMixture.gaussian(1.0), 1.0, 0.0) == pytest.approx(0.3989423, abs=1e-7)

    def test_two_component_at_zero(self):
        expected = 0.5 * normal(0.0, 1.0) + 0.5 * normal(0.0, 4.0)
        assert expected == pytest.approx(0.2992067, abs=1e-7)
        assert mixture_pdf(TWO, 1.0, 0.0) == pytest.approx(expected, rel=1e-14)

    def test_rejects_nonpositive_scale(self):
        with pytest.raises(DomainError):
            mixture_pdf(TWO, 0.0, 1.0)

    @settings(max_examples=30, deadline=None)
    @given(mixtures, st.floats(0.1, 3.0))
    def test_normalized_and_symmetric(self, mix, scale):
        total, _ = quad(lambda x: float(mixture_pdf(mix, scale, x)), -np.inf, np.inf)
        assert total == pytest.approx(1.0, abs=1e-8)
        x = np.linspace(0, 10, 7)
        assert np.array_equal(mixture_pdf(mix, scale, x), mixture_pdf(mix, scale, -x))


class TestMixtureCf:
    def test_neutral_element(self):
        assert mixture_cf(TWO, 0.0) == pytest.approx(1.0, abs=1e-15)

    @pytest.mark.parametrize("sigma,k", [(1.0, 0.7), (0.3, 4.0), (2.5, 1.1)])
    def test_gaussian_form(self, sigma, k):
        assert mixture_cf(VolatilityMixture.gaussian(sigma), k) == pytest.approx(math.exp(-sigma**2 * k**2 / 2), rel=1e-14)

    def test_two_component_value(self):
        expected = 0.5 * math.exp(-0.5) + 0.5 * math.exp(-2.0)
        assert expected == pytest.approx(0.3709330, abs=1e-7)
        assert mixture_cf(TWO, 1.0) == pytest.approx(expected, rel=1e-14)

    @settings(max_examples=30, deadline=None)
    @given(mixtures, st.floats(-20, 20))
    def test_even_and_bounded(self, mix, k):
        v = float(mixture_cf(mix, k))
        assert v == float(mixture_cf(mix, -k))
        assert 0.0 <= v <= 1.0 + 1e-15

    def test_is_fourier_transform_of_pdf(self):
        for k in (0.3, 1.0, 2.2):
            num, _ = quad(lambda x: math.cos(k * x) * float(mixture_pdf(TWO, 1.0, x)), -np.inf, np.inf)
            assert num == pytest.approx(float(mixture_cf(TWO, k)), abs=1e-10)


class TestOtimes:
    def test_axis_reduces_to_marginal(self):
        s = [1.7, 0.4]
        for k in (0.1, 0.9, 2.0):
            assert otimes_joint_cf(TWO, s, [k, 0.0]) == pytest.approx(mixture_cf(TWO, 1.7 * k), rel=1e-15)

    def test_diagonal_aggregates(self):
        T = 3.0
        for k in (0.1, 0.5, 1.3):
            got = otimes_joint_cf(TWO, [math.sqrt(T)] * 2, [k, k])
            assert got == pytest.approx(mixture_cf(TWO, math.sqrt(2 * T) * k), rel=1e-14)

    def test_gaussian_factorizes(self):
        g = VolatilityMixture.gaussian(1.0)
        assert otimes_joint_cf(g, [1, 1], [1, 1]) == pytest.approx(math.exp(-1.0), rel=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            otimes_joint_cf(TWO, [1.0, 1.0], [1.0, 1.0, 1.0])

    @settings(max_examples=50, deadline=None)
    @given(mixtures, st.lists(st.floats(0.1, 3.0), min_size=1, max_size=6), st.data())
    def test_marginalization(self, mix, scales, data):
        n = len(scales)
        k = np.array(data.draw(st.lists(st.floats(-3, 3), min_size=n, max_size=n)))
        keep = np.array(data.draw(st.lists(st.booleans(), min_size=n, max_size=n)))
        s = np.array(scales)
        full = float(otimes_joint_cf(mix, s, np.where(keep, k, 0.0)))
        reduced = float(otimes_joint_cf(mix, s[keep], k[keep])) if keep.any() else 1.0
        assert abs(full - reduced) <= 1e-14

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.1, 3.0), st.lists(st.floats(0.1, 3.0), min_size=1, max_size=6), st.data())
    def test_gaussian_reduction(self, sigma, scales, data):
        n = len(scales)
        k = data.draw(st.lists(st.floats(-3, 3), min_size=n, max_size=n))
        g = VolatilityMixture.gaussian(sigma)
        prod = math.prod(float(mixture_cf(g, s * kk)) for s, kk in zip(scales, k))
        assert abs(float(otimes_joint_cf(g, scales, k)) - prod) <= 1e-14

    @settings(max_examples=30, deadline=None)
    @given(mixtures, st.integers(1, 8), st.floats(0.5, 4.0), st.floats(-2, 2))
    def test_aggregation_stationary(self, mix, n, T, k):
        got = float(otimes_joint_cf(mix, [math.sqrt(T)] * n, [k] * n))
        assert got == pytest.approx(float(mixture_cf(mix, math.sqrt(n * T) * k)), rel=1e-12, abs=1e-300)


class TestCoefficients:
    def test_half_gives_unit_coefficients(self):
        assert np.all(inhom_coefficients(0.5, 50).coefficients == 1.0)

    def test_first_is_one(self):
        assert inhom_coefficients(0.24, 10).coefficients[0] == 1.0

    def test_second_coefficient_high_precision(self):
        mp.mp.dps = 40
        ref = (mp.mpf(2) ** mp.mpf("0.48") - 1) ** (1 / mp.mpf("0.48"))
        assert float(ref) == pytest.approx(0.1442, abs=5e-5)
        assert inhom_coefficients(0.24, 2).coefficients[1] == pytest.approx(float(ref), rel=1e-13)

    @pytest.mark.parametrize("D_e", [0.1, 0.24, 0.5, 0.9])
    @pytest.mark.parametrize("n", [1, 7, 1000, 10_000])
    def test_telescoping(self, D_e, n):
        a = inhom_coefficients(D_e, n)
        total = float(np.sum(a.coefficients ** (2 * D_e)))
        assert abs(total - n ** (2 * D_e)) / n ** (2 * D_e) < 1e-10

    def test_variance_factor_matches_mpmath_far_out(self):
        mp.mp.dps = 50
        for i in (3, 100, 12345, 10**7):
            ref = mp.mpf(i) ** mp.mpf("0.48") - mp.mpf(i - 1) ** mp.mpf("0.48")
            assert float(stage_variance_factor(0.24, i)) == pytest.approx(float(ref), rel=1e-13)

    @pytest.mark.parametrize("bad", [0.0, -0.1, 1.2])
    def test_domain(self, bad):
        with pytest.raises(DomainError):
            inhom_coefficients(bad, 5)


class TestIntervalWidth:
    def test_origin(self):
        assert interval_width(0.24, 0, 1) == 1.0
        assert interval_width(0.24, 0, 7) == pytest.approx(7**0.24, rel=1e-15)

    def test_second_day(self):
        assert interval_width(0.24, 1, 1) == pytest.approx(math.sqrt(2**0.48 - 1), rel=1e-14)
        assert interval_width(0.24, 1, 1) == pytest.approx(0.6283, abs=5e-5)

    def test_stationary_limit(self):
        for t in (0, 3, 1000):
            assert interval_width(0.5, t, 9) == pytest.approx(3.0, rel=1e-14)

    def test_decreasing_in_t(self):
        w = interval_width(0.24, np.arange(0, 500), 5)
        assert np.all(np.diff(w) < 0)

    def test_domain(self):
        with pytest.raises(DomainError):
            interval_width(0.24, -1, 1)
        with pytest.raises(DomainError):
            interval_width(0.24, 0, 0)


class TestInhomPdf:
    def test_unit_width(self):
        x = np.linspace(-3, 3, 11)
        assert np.array_equal(inhom_pdf(TWO, 0.24, 0, 1, x), mixture_pdf(TWO, 1.0, x))

    def test_stationary_when_half(self):
        x = np.linspace(-3, 3, 11)
        np.testing.assert_allclose(inhom_pdf(TWO, 0.5, 0, 4, x), inhom_pdf(TWO, 0.5, 50, 4, x), rtol=1e-13)

    @pytest.mark.parametrize("T", [1, 5, 40])
    def test_second_moment(self, T):
        m2, _ = quad(lambda r: r * r * float(inhom_pdf(TWO, 0.24, 0, T, r)), -np.inf, np.inf)
        assert m2 == pytest.approx(TWO.variance() * T**0.48, rel=1e-9)


class TestStationaryAdditivity:
    @settings(max_examples=30, deadline=None)
    @given(mixtures, st.floats(0.5, 50.0))
    def test_variance_doubles_only_at_half(self, mix, T):
        v = lambda D, T: mix.variance() * float(interval_width(D, 0, T)) ** 2
        assert v(0.5, 2 * T) == pytest.approx(2 * v(0.5, T), rel=1e-12)
        assert abs(v(0.24, 2 * T) / v(0.24, T) - 2.0) > 0.1

    @settings(max_examples=20, deadline=None)
    @given(mixtures, st.sampled_from([1, 3, 5]), st.integers(0, 20), st.integers(1, 10))
    def test_odd_moments_vanish(self, mix, q, t, T):
        scale = float(interval_width(0.24, t, T)) * max(mix.sigmas)
        m, _ = quad(lambda x: x**q * float(inhom_pdf(mix, 0.24, t, T, x)), -60 * scale, 60 * scale, points=[0.0])
        assert abs(m) < 1e-12 * scale**q


class TestOracle:
    def test_gaussian_1d(self):
        x = np.linspace(-7, 7, 141)
        inv = invert_cf_oracle(lambda k: mixture_cf(VolatilityMixture.gaussian(1.0), k[..., 0]), x)
        exact = np.exp(-x * x / 2) / math.sqrt(2 * math.pi)
        assert np.max(np.abs(inv.density - exact)) < 1e-8
        assert inv.mass == pytest.approx(1.0, abs=1e-6)

    def test_two_dim_spherical(self):
        T = 1.5
        x = np.linspace(-20, 20, 101)
        inv = invert_cf_oracle(lambda k: otimes_joint_cf(TWO, [math.sqrt(T)] * 2, k), (x, x), dims=2)
        X1, X2 = np.meshgrid(x, x, indexing="ij")
        closed = sum(
            w * np.exp(-(X1**2 + X2**2) / (2 * s * s * T)) / (2 * math.pi * s * s * T)
            for w, s in zip(TWO.weights, TWO.sigmas)
        )
        assert np.max(np.abs(inv.density - closed)) < 1e-6
        assert inv.mass == pytest.approx(1.0, abs=1e-6)
        assert inv.min_value > -1e-8

    def test_truncated_cf_is_flagged(self):
        g = VolatilityMixture.gaussian(1.0)

        def truncated(k):
            kk = k[..., 0]
            return np.where(np.abs(kk) < 1.5, mixture_cf(g, kk), 0.0)

        with pytest.raises(NegativeDensityError) as info:
            invert_cf_oracle(truncated, np.linspace(-8, 8, 161), tol=1e-3)
        assert info.value.min_value < 0
