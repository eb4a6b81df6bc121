import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ndtri
from scipy.stats import qmc

from qmcgreeks.exceptions import ConfigurationError, DomainError
from qmcgreeks.lds import (
    MAX_SOBOL_DIMENSION,
    PseudoRandomGenerator,
    SobolGenerator,
    StandardNormalTransformer,
    direction_numbers,
    gaussian_block,
    inverse_normal_cdf,
    next_points,
    pseudo_points_at,
    sobol_points_at,
)


def _radical_inverse(n):
    out, f = 0.0, 0.5
    while n:
        out += f * (n & 1)
        n >>= 1
        f /= 2
    return out


def _rows_sorted(x):
    return x[np.lexsort(x.T[::-1])]


class TestSobol:
    def test_first_points_dim1(self):
        pts = next_points(SobolGenerator(1), 3).ravel()
        np.testing.assert_array_equal(pts, [0.5, 0.75, 0.25])

    def test_dim1_is_gray_ordered_radical_inverse(self):
        pts = sobol_points_at(1, 200, 1).ravel()
        expected = [_radical_inverse(k ^ (k >> 1)) for k in range(1, 201)]
        np.testing.assert_array_equal(pts, expected)

    def test_quadrant_counts(self):
        pts = SobolGenerator(2).next_points(2**10)
        q = (pts[:, 0] >= 0.5).astype(int) * 2 + (pts[:, 1] >= 0.5)
        np.testing.assert_array_equal(np.bincount(q, minlength=4), [256] * 4)

    @pytest.mark.parametrize("dim", [2, 7, 40, 256])
    def test_matches_scipy_point_set(self, dim):
        # scipy emits natural order; Gray order permutes within each 2^m block
        n = 2**11
        ours = sobol_points_at(0, n, dim)
        ref = qmc.Sobol(dim, scramble=False).random(n)
        np.testing.assert_array_equal(_rows_sorted(ours), _rows_sorted(ref))

    def test_last_dimension_matches_scipy(self):
        n = 2**8
        ours = sobol_points_at(0, n, MAX_SOBOL_DIMENSION)[:, -1]
        ref = qmc.Sobol(MAX_SOBOL_DIMENSION, scramble=False).random(n)[:, -1]
        np.testing.assert_array_equal(np.sort(ours), np.sort(ref))

    def test_open_interval(self):
        pts = SobolGenerator(16).next_points(2**12)
        assert pts.min() > 0 and pts.max() < 1

    def test_incremental_equals_one_shot(self):
        g = SobolGenerator(5)
        parts = np.vstack([g.next_points(c) for c in (1, 6, 57, 200)])
        np.testing.assert_array_equal(parts, SobolGenerator(5).next_points(264))

    def test_sections_are_the_stated_indices(self):
        n = 64
        g = SobolGenerator(3, section_index=2, block_size=n)
        np.testing.assert_array_equal(g.next_points(n), sobol_points_at(2 * n + 1, n, 3))
        np.testing.assert_array_equal(
            SobolGenerator(3).next_points(3 * n)[2 * n:], sobol_points_at(2 * n + 1, n, 3)
        )

    def test_section_disjointness(self):
        n = 2**10
        a = SobolGenerator(8, 0, n).next_points(n)
        b = SobolGenerator(8, 1, n).next_points(n)
        sa = {r.tobytes() for r in a}
        assert not any(r.tobytes() in sa for r in b)

    @pytest.mark.parametrize("m", [1, 4, 8, 12])
    def test_one_dimensional_net_property(self, m):
        # aligned blocks of raw indices [l*N, (l+1)*N) are (0,m,1)-nets per coordinate
        n = 2**m
        for first in (0, n, 5 * n):
            pts = sobol_points_at(first, n, 16)
            cells = np.floor(pts * n).astype(int)
            for j in range(16):
                np.testing.assert_array_equal(np.sort(cells[:, j]), np.arange(n))

    def test_dimension_limit(self):
        with pytest.raises(ConfigurationError, match=str(MAX_SOBOL_DIMENSION)):
            SobolGenerator(MAX_SOBOL_DIMENSION + 1)

    def test_bad_arguments(self):
        with pytest.raises(ConfigurationError):
            SobolGenerator(2).next_points(0)
        with pytest.raises(ConfigurationError):
            SobolGenerator(2, section_index=1)
        with pytest.raises(ConfigurationError):
            SobolGenerator(0)

    def test_direction_numbers_readonly(self):
        v = direction_numbers(3)
        assert v.shape == (3, 32) and not v.flags.writeable
        assert v[1, 0] == 2**31

    def test_descriptor(self):
        d = SobolGenerator(4, 3, 128).descriptor()
        assert d == {"kind": "SOBOL", "dimension": 4, "section_index": 3, "block_size": 128}


class TestPseudo:
    def test_determinism(self):
        a = PseudoRandomGenerator(2, seed=42).next_points(4)
        b = PseudoRandomGenerator(2, seed=42).next_points(4)
        np.testing.assert_array_equal(a, b)

    def test_distinct_seeds_differ(self):
        a = PseudoRandomGenerator(2, seed=1).next_points(4)
        b = PseudoRandomGenerator(2, seed=2).next_points(4)
        assert not np.array_equal(a, b)

    def test_chunk_invariance(self):
        g = PseudoRandomGenerator(3, seed=7)
        parts = np.vstack([g.next_points(c) for c in (5, 11, 100)])
        np.testing.assert_array_equal(parts, PseudoRandomGenerator(3, seed=7).next_points(116))

    def test_random_access_matches_stream(self):
        stream = PseudoRandomGenerator(4, seed=3).next_points(50)
        np.testing.assert_array_equal(pseudo_points_at(3, 17, 20, 4), stream[17:37])

    def test_open_interval_extremes(self):
        # smallest/largest representable outputs stay strictly inside (0, 1)
        lo, hi = 0.5 * 2.0**-52, (2**52 - 0.5) * 2.0**-52
        assert 0 < lo and hi < 1

    def test_gaussian_variance(self):
        z = gaussian_block(PseudoRandomGenerator(3, seed=11), 2**16)
        assert np.all(np.abs(z.var(axis=0) - 1) < 0.02)

    def test_seed_range(self):
        with pytest.raises(ConfigurationError):
            PseudoRandomGenerator(1, seed=-1)


class TestInverseNormal:
    def test_known_values(self):
        assert inverse_normal_cdf(0.5) == 0.0
        assert abs(inverse_normal_cdf(0.975) - 1.959964) < 1e-6

    def test_against_mpmath(self):
        us = np.concatenate([
            [1e-12, 1e-10, 1e-7, 1e-4, 0.02425, 0.1, 0.3, 0.5 - 1e-9, 0.5],
            np.linspace(0.001, 0.999, 97),
            [0.7, 0.97575, 1 - 1e-4, 1 - 1e-7, 1 - 1e-12],
        ])
        mpmath.mp.dps = 40
        ref = np.array([float(-mpmath.sqrt(2) * mpmath.erfinv(1 - 2 * mpmath.mpf(u))) for u in us])
        err = np.abs(inverse_normal_cdf(us) - ref)
        assert err.max() <= 1e-9

    def test_against_scipy_grid(self):
        u = np.linspace(1e-12, 1 - 1e-12, 200_001)
        assert np.max(np.abs(inverse_normal_cdf(u) - ndtri(u))) <= 1e-9

    def test_strictly_increasing(self):
        u = np.linspace(1e-6, 1 - 1e-6, 10**5)
        assert np.all(np.diff(inverse_normal_cdf(u)) > 0)

    @given(st.floats(min_value=1e-12, max_value=0.5))
    @settings(max_examples=300)
    def test_antisymmetry(self, u):
        u = 1.0 - (1.0 - u)  # make u and 1-u an exactly representable pair
        assert abs(inverse_normal_cdf(u) + inverse_normal_cdf(1 - u)) <= 1e-12

    @pytest.mark.parametrize("bad", [0.0, 1.0, -0.1, 1.5, np.nan])
    def test_domain(self, bad):
        with pytest.raises(DomainError):
            inverse_normal_cdf(bad)

    def test_array_shape_preserved(self):
        u = np.full((3, 4), 0.25)
        assert inverse_normal_cdf(u).shape == (3, 4)

    def test_sobol_block(self):
        z = gaussian_block(SobolGenerator(1), 1)
        assert z[0, 0] == 0.0
        z = gaussian_block(SobolGenerator(6), 2**16)
        assert np.all(np.isfinite(z))
        assert np.all(np.abs(z.mean(axis=0)) < 5e-3)

    def test_transformer(self):
        u = SobolGenerator(3).next_points(16)
        tr = StandardNormalTransformer().fit(u)
        assert tr.n_features_in_ == 3
        np.testing.assert_array_equal(tr.transform(u), inverse_normal_cdf(u))
