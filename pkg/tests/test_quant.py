import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cyclic_bnn.errors import BnnError
from cyclic_bnn.quant import (RESNET18_LAYER_FITS, GaussianFit, QEConfig, QuantSpec, quantization_error,
                              quantize, sign, standardize)

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
bits_st = st.integers(1, 12)


class TestSign:
    @pytest.mark.parametrize("x,expected", [(-0.5, -1.0), (0.0, 1.0), (3.7, 1.0), (-0.0, 1.0)])
    def test_examples(self, x, expected):
        assert sign(x) == expected

    def test_array_dtype_kept(self):
        out = sign(np.array([-1.5, 2.0], np.float32))
        assert out.dtype == np.float32 and out.tolist() == [-1.0, 1.0]

    def test_nan(self):
        with pytest.raises(BnnError, match="non-finite-input"):
            sign(np.array([0.0, np.nan]))


class TestQuantize:
    def test_one_bit_matches_sign(self):
        assert quantize(0.3, QuantSpec(1, -1, 1)) == 1.0 == sign(0.3)

    @pytest.mark.parametrize("bits", range(1, 9))
    def test_lower_endpoint(self, bits):
        assert quantize(-1.0, QuantSpec(bits, -1, 1)) == -1.0

    def test_two_bit_zero(self):
        assert quantize(0.0, QuantSpec(2, -1, 1)) == pytest.approx(1 / 3, abs=1e-12)

    def test_invalid_spec(self):
        for args in [(0, -1, 1), (33, -1, 1), (2, 1, 1), (2, 1, -1), (2, -np.inf, 1)]:
            with pytest.raises(BnnError, match="invalid-quant-spec"):
                QuantSpec(*args)

    def test_unclamped_extends_lattice(self):
        spec = QuantSpec(2, -1, 1)
        assert quantize(1.6, spec) == 1.0
        assert quantize(1.6, spec, clamp=False) == pytest.approx(5 / 3)

    @settings(max_examples=300, deadline=None)
    @given(finite, bits_st)
    def test_on_lattice_and_in_range(self, x, bits):
        spec = QuantSpec(bits, -1, 1)
        q = quantize(x, spec)
        k = (q - spec.min) / spec.step
        assert -1 <= q <= 1
        assert abs(k - round(k)) < 1e-6

    @settings(max_examples=300, deadline=None)
    @given(finite, bits_st)
    def test_idempotent(self, x, bits):
        spec = QuantSpec(bits, -1, 1)
        q = quantize(x, spec)
        assert quantize(q, spec) == pytest.approx(q, abs=1e-12)

    @settings(max_examples=300, deadline=None)
    @given(st.floats(-1, 1), st.floats(-1, 1), bits_st)
    def test_monotone(self, x, y, bits):
        spec = QuantSpec(bits, -1, 1)
        lo, hi = min(x, y), max(x, y)
        assert quantize(lo, spec) <= quantize(hi, spec)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-1, 1), bits_st)
    def test_nearest_point(self, x, bits):
        spec = QuantSpec(bits, -1, 1)
        assert abs(quantize(x, spec) - x) <= spec.step / 2 + 1e-12


class TestStandardize:
    def test_examples(self):
        assert standardize(np.array([2.0, -2.0])).tolist() == [1.0, -1.0]
        np.testing.assert_array_equal(standardize(np.array([1.0, -1, 1, -1])), [1, -1, 1, -1])

    def test_zero_variance(self):
        with pytest.raises(BnnError, match="zero-variance-weights"):
            standardize(np.array([0.5, 0.5, 0.5]))

    def test_unit_std_sign_preserved(self):
        w = np.random.default_rng(0).standard_normal(1000) * 3 + 0.5
        s = standardize(w)
        assert np.std(s) == pytest.approx(1.0)
        assert np.array_equal(np.sign(s), np.sign(w))


class TestQuantizationError:
    def test_one_bit_zero_on_unit_range(self):
        cfg = QEConfig(lo=-1, hi=1)
        assert quantization_error(GaussianFit(1, 0, 1), 1, cfg) == 0.0

    def test_against_reference_values(self):
        fit = RESNET18_LAYER_FITS[0]
        assert quantization_error(fit, 2) == pytest.approx(0.192, rel=0.15)
        assert quantization_error(fit, 8) == pytest.approx(0.250, abs=0.03)

    def test_matches_scipy_quad_oracle(self):
        # Piecewise quad over the lattice cells: independent of the midpoint grid.
        from scipy.integrate import quad

        fit, bits = GaussianFit(0.6, 0.1, 0.4), 3
        spec = QuantSpec(bits, -1, 1)
        n = spec.levels
        # rounding boundaries of the unclamped lattice inside [-15, 15]
        k_lo, k_hi = int(np.floor((-15 + 1) * n / 2 + 0.5)), int(np.floor((15 + 1) * n / 2 + 0.5))
        total = 0.0
        for k in range(k_lo, k_hi + 1):
            q = -1 + 2 * k / n
            a = max(-15.0, -1 + 2 * (k - 0.5) / n)
            b = min(15.0, -1 + 2 * (k + 0.5) / n)
            if a < b:
                total += (b - a) * fit(q) * (q - (1.0 if q >= 0 else -1.0)) ** 2
        assert quantization_error(fit, bits) == pytest.approx(total, rel=1e-4)
        latent = sum(quad(lambda w, q=q: fit(w) * (q - (1.0 if q >= 0 else -1.0)) ** 2,
                          max(-15.0, -1 + 2 * (k - 0.5) / n), min(15.0, -1 + 2 * (k + 0.5) / n))[0]
                     for k in range(k_lo, k_hi + 1) for q in [-1 + 2 * k / n])
        assert quantization_error(fit, bits, QEConfig(density_at="latent")) == pytest.approx(latent, rel=1e-4)

    def test_alpha_scales_target(self):
        fit = GaussianFit(1, 0, 0.5)
        assert quantization_error(fit, 4, QEConfig(alpha=0.5)) != quantization_error(fit, 4)

    def test_invalid_config(self):
        with pytest.raises(BnnError, match="invalid-qe-config"):
            QEConfig(lo=1, hi=-1)
        with pytest.raises(BnnError, match="invalid-gaussian-fit"):
            GaussianFit(1, 0, 0)
