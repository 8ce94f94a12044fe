import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csradar import (
    SPEED_OF_LIGHT,
    RandomSource,
    bessel_j1,
    hermitian_eig,
    psd_project,
    varsigma,
)
from csradar.numerics import complex_normal, is_hermitian

from conftest import random_hermitian

J1_FIRST_ROOT = 3.8317059702075123156


def j1_series(x, dps=50):
    """Independent oracle: ascending power series at high precision."""
    with mpmath.workdps(dps):
        x = mpmath.mpf(x)
        half = x / 2
        total = mpmath.mpf(0)
        term_count = 200
        for m in range(term_count):
            total += (-1) ** m * half ** (2 * m + 1) / (mpmath.factorial(m) * mpmath.factorial(m + 1))
        return float(total)


class TestHermitianEig:
    def test_diagonal(self):
        eig = hermitian_eig(np.diag([2.0, 1.0]).astype(complex))
        assert np.allclose(eig.eigenvalues, [2.0, 1.0])
        assert np.allclose(np.abs(eig.eigenvectors), np.eye(2))

    def test_symmetric_2x2(self):
        eig = hermitian_eig(np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex))
        assert np.allclose(eig.eigenvalues, [1.0, -1.0])

    def test_reconstruction(self, rng):
        a = random_hermitian(5, rng)
        eig = hermitian_eig(a)
        err = np.linalg.norm(eig.reconstruct() - a) / np.linalg.norm(a)
        assert err <= 1e-8

    def test_orthonormal_eigenvectors(self, rng):
        v = hermitian_eig(random_hermitian(7, rng)).eigenvectors
        assert np.linalg.norm(v.conj().T @ v - np.eye(7)) <= 1e-10

    def test_eigenvalue_sum_equals_trace(self, rng):
        a = random_hermitian(6, rng, scale=3.0)
        eig = hermitian_eig(a)
        assert math.isclose(eig.eigenvalues.sum(), np.trace(a).real, rel_tol=1e-9)

    def test_descending_order(self, rng):
        w = hermitian_eig(random_hermitian(8, rng)).eigenvalues
        assert np.all(np.diff(w) <= 0)

    def test_rejects_non_square(self):
        with pytest.raises(ValueError):
            hermitian_eig(np.ones((2, 3), dtype=complex))

    def test_rejects_non_hermitian(self):
        with pytest.raises(ValueError):
            hermitian_eig(np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex))


class TestPsdProject:
    def test_clamps_negative_eigenvalue(self):
        out = psd_project(np.diag([1.0, -1.0]).astype(complex))
        assert np.allclose(out, np.diag([1.0, 0.0]))

    def test_psd_fixed_point(self, rng):
        g = complex_normal(rng, (4, 4))
        a = g @ g.conj().T
        assert np.linalg.norm(psd_project(a) - a) <= 1e-10 * np.linalg.norm(a)

    def test_idempotent(self, rng):
        a = random_hermitian(6, rng)
        once = psd_project(a)
        assert np.linalg.norm(psd_project(once) - once) <= 1e-10 * max(np.linalg.norm(once), 1.0)

    def test_frobenius_nearest_vs_sampled_psd(self, rng):
        # sampling oracle: no independently constructed PSD matrix comes closer
        a = random_hermitian(5, rng, scale=2.0)
        p = psd_project(a)
        d_proj = np.linalg.norm(a - p)
        for _ in range(1000):
            scale = 10.0 ** rng.uniform(-3, 0)
            h = random_hermitian(5, rng, scale=scale) + p
            shift = max(0.0, -np.linalg.eigvalsh(h).min())
            candidate = h + shift * np.eye(5)
            assert d_proj <= np.linalg.norm(a - candidate) + 1e-12


class TestBesselJ1:
    def test_zero(self):
        assert bessel_j1(0.0) == 0.0

    def test_global_maximum(self):
        val = bessel_j1(1.8412)
        assert abs(val - j1_series(1.8412)) <= 1e-10
        assert abs(val - 0.5819) <= 5e-4

    def test_first_root(self):
        assert abs(bessel_j1(3.8317)) <= 1e-4

    @pytest.mark.parametrize("x", np.linspace(-50.0, 50.0, 41))
    def test_matches_series_oracle(self, x):
        assert abs(bessel_j1(x) - j1_series(x)) <= 1e-10

    def test_odd_symmetry(self, rng):
        x = rng.uniform(0.0, 50.0, size=64)
        assert np.allclose(bessel_j1(-x), -bessel_j1(x), atol=1e-14)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            bessel_j1(np.inf)


class TestVarsigma:
    def test_small_argument_limit(self):
        assert varsigma(0.0, 10.0, 5e9) == pytest.approx(1.0)
        assert varsigma(1e-12, 10.0, 5e9) == pytest.approx(1.0, abs=1e-9)

    def test_zero_at_first_bessel_root(self):
        r, f, c = 10.0, 5e9, SPEED_OF_LIGHT
        x = J1_FIRST_ROOT / (math.pi * r * f / c)
        assert abs(varsigma(x, r, f)) <= 1e-6

    def test_cross_term_scale_is_negligible(self):
        # the scale multiplying cross terms at realistic disk/carrier values
        assert abs(varsigma(2.0, 10.0, 5e9, wave_speed=3.0e8)) < 1e-2

    @given(st.floats(min_value=-100.0, max_value=100.0, allow_nan=False))
    @settings(max_examples=200, deadline=None)
    def test_bounded_by_one(self, x):
        assert -1.0 <= varsigma(x, 10.0, 5e9) <= 1.0

    def test_rejects_bad_parameters(self):
        with pytest.raises(ValueError):
            varsigma(1.0, -1.0, 5e9)
        with pytest.raises(ValueError):
            varsigma(1.0, 10.0, 0.0)


class TestRandomSource:
    def test_identical_seed_identical_stream(self):
        a = RandomSource(42).generator().standard_normal(16)
        b = RandomSource(42).generator().standard_normal(16)
        assert np.array_equal(a, b)

    def test_derived_streams_differ(self):
        src = RandomSource(42)
        a = src.derive("thermal", 0, 1).generator().standard_normal(8)
        b = src.derive("thermal", 1, 1).generator().standard_normal(8)
        assert not np.allclose(a, b)

    def test_string_keys_are_stable(self):
        f1 = RandomSource(7).derive("trial", 3).fingerprint()
        f2 = RandomSource(7).derive("trial", 3).fingerprint()
        assert f1 == f2

    def test_hermitian_check(self, rng):
        assert is_hermitian(random_hermitian(4, rng))
        assert not is_hermitian(np.array([[0.0, 1.0], [0.0, 0.0]]))
