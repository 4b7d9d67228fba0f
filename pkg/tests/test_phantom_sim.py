"""Phantom generation, projector, and count-simulation tests."""

import numpy as np
import pytest

from petlab.counts import AcquisitionConfig, DoseConfig, SinogramCounts, acquire_counts, thin_counts
from petlab.errors import ConfigError, DataError, DegenerateInputError
from petlab.phantom import air_slice_mask, generate_phantom
from petlab.projector import get_geometry


def antialiased_disk(h, w, r):
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    return np.clip(r - dist + 0.5, 0.0, 1.0)


class TestPhantom:
    def test_support_is_inside_head_and_zero_outside(self):
        ph = generate_phantom(seed=3, d=12, h=64, w=64, n_lesions=0)
        vol = ph.voxels
        assert np.all(vol >= 0)
        assert vol.max() > 0
        # outermost slices are air; some interior region is positive
        assert np.all(vol[0] == 0) and np.all(vol[-1] == 0)
        mid = vol[vol.shape[0] // 2]
        assert mid[32, 32] > 0
        # border of every slice is background
        assert np.all(vol[:, 0, :] == 0) and np.all(vol[:, :, 0] == 0)

    def test_same_seed_is_deterministic(self):
        a = generate_phantom(seed=11, d=10, h=32, w=32, n_lesions=3)
        b = generate_phantom(seed=11, d=10, h=32, w=32, n_lesions=3)
        assert a.voxels.tobytes() == b.voxels.tobytes()

    def test_different_seeds_differ(self):
        a = generate_phantom(seed=1, d=10, h=32, w=32, n_lesions=1)
        b = generate_phantom(seed=2, d=10, h=32, w=32, n_lesions=1)
        assert a.voxels.tobytes() != b.voxels.tobytes()

    @pytest.mark.parametrize("seed", [0, 7, 23])
    def test_adjacent_slices_strongly_correlated(self, seed):
        ph = generate_phantom(seed=seed, d=16, h=64, w=64, n_lesions=2)
        vol = ph.voxels.astype(np.float64)
        air = air_slice_mask(vol)
        kept = np.where(~air)[0]
        # compare within the well-supported central range
        for z in kept[1:-1]:
            if z + 1 not in kept:
                continue
            a, b = vol[z].ravel(), vol[z + 1].ravel()
            ncc = np.corrcoef(a, b)[0, 1]
            assert ncc > 0.9, f"slices {z},{z + 1}: ncc={ncc:.3f}"

    def test_too_shallow_volume_rejected(self):
        with pytest.raises(ConfigError):
            generate_phantom(seed=0, d=6, h=32, w=32, n_lesions=0)

    def test_air_mask(self):
        vol = np.zeros((5, 4, 4), dtype=np.float32)
        vol[2, 1, 1] = 1.0
        np.testing.assert_array_equal(air_slice_mask(vol), [True, True, False, True, True])


class TestProjector:
    def test_zero_image_gives_zero_sinogram(self):
        geo = get_geometry(32, 32, 24, 40)
        assert np.all(geo.forward(np.zeros((32, 32))) == 0)

    def test_uniform_disk_profile_matches_chord_lengths(self):
        geo = get_geometry(64, 64, 90, 96)
        r = 20.0
        sino = geo.forward(antialiased_disk(64, 64, r))
        u = np.arange(96) - 95 / 2.0
        chord = 2.0 * np.sqrt(np.maximum(r * r - u * u, 0.0))
        sel = np.abs(u) <= 0.85 * r
        rel = np.abs(sino[:, sel] - chord[sel]) / chord[sel]
        assert rel.max() < 0.05

    def test_impulse_maxima_trace_sinusoid(self):
        geo = get_geometry(64, 64, 90, 96)
        img = np.zeros((64, 64))
        img[40, 22] = 1.0
        sino = geo.forward(img)
        pred = (22 - 31.5) * np.cos(geo.angles) + (40 - 31.5) * np.sin(geo.angles) + 95 / 2.0
        assert np.abs(sino.argmax(axis=1) - pred).max() < 1.0

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_adjoint_identity(self, seed):
        geo = get_geometry(48, 48, 36, 64)
        rng = np.random.default_rng(seed)
        x = rng.random((48, 48))
        y = rng.random((36, 64))
        lhs = (geo.forward(x) * y).sum()
        rhs = (x * geo.back(y)).sum()
        assert abs(lhs - rhs) / abs(lhs) < 1e-4

    def test_linearity(self):
        geo = get_geometry(32, 32, 24, 40)
        rng = np.random.default_rng(3)
        x, y = rng.random((32, 32)), rng.random((32, 32))
        lhs = geo.forward(2.0 * x - 0.5 * y)
        rhs = 2.0 * geo.forward(x) - 0.5 * geo.forward(y)
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)

    def test_sensitivity_positive_inside_fov(self):
        geo = get_geometry(64, 64, 90, 96)
        sens = geo.back(np.ones((90, 96)))
        assert sens[geo.fov_mask].min() > 0

    def test_bad_config_rejected(self):
        with pytest.raises(ConfigError):
            get_geometry(32, 32, 4, 40)
        with pytest.raises(ConfigError):
            get_geometry(32, 32, 24, 16)


class TestCounts:
    def test_uniform_expected_mean_within_3_sigma(self):
        n_angles, n_bins, total = 30, 40, 1e6
        expected = np.ones((n_angles, n_bins))
        lam = total / (n_angles * n_bins)
        means = []
        for seed in range(50):
            sc = acquire_counts(expected, total, seed)
            means.append(sc.counts.mean())
        # mean of per-bin counts across seeds: SE = sqrt(lam / (n_bins*n_angles*n_seeds))
        se = np.sqrt(lam / (n_angles * n_bins * 50))
        assert abs(np.mean(means) - lam) < 3 * se

    def test_zero_bin_never_counts(self):
        expected = np.ones((10, 10))
        expected[3, 4] = 0.0
        for seed in range(20):
            sc = acquire_counts(expected, 1e5, seed)
            assert sc.counts[3, 4] == 0

    def test_determinism(self):
        expected = np.random.default_rng(0).random((20, 30))
        a = acquire_counts(expected, 1e5, 42)
        b = acquire_counts(expected, 1e5, 42)
        np.testing.assert_array_equal(a.counts, b.counts)

    def test_all_zero_expected_rejected(self):
        with pytest.raises(DegenerateInputError):
            acquire_counts(np.zeros((4, 4)), 1e5, 0)

    def test_negative_expected_rejected(self):
        with pytest.raises(DataError):
            acquire_counts(np.full((4, 4), -1.0), 1e5, 0)

    def test_poisson_variance_near_lambda(self):
        # bin with expectation 100: sample variance over 1000 seeds within 15%
        expected = np.ones((2, 2))
        draws = [acquire_counts(expected, 400, seed).counts[0, 0] for seed in range(1000)]
        assert abs(np.var(draws) - 100.0) / 100.0 < 0.15


class TestThinning:
    def _counts(self, seed=0):
        expected = np.ones((25, 40))
        return acquire_counts(expected, 1e6, seed)

    def test_full_dose_is_identity(self):
        sc = self._counts()
        out = thin_counts(sc, DoseConfig(1.0), seed=5)
        np.testing.assert_array_equal(out.counts, sc.counts)

    def test_zero_fraction_gives_exact_zeros(self):
        sc = self._counts()
        out = thin_counts(sc, 0.0, seed=5)
        assert np.all(out.counts == 0)

    def test_half_percent_total_within_3_sigma(self):
        sc = self._counts()
        n = sc.counts.sum()
        p = 0.005
        sigma = np.sqrt(n * p * (1 - p))
        out = thin_counts(sc, DoseConfig(p), seed=9)
        assert abs(out.counts.sum() - n * p) < 3 * sigma

    def test_determinism(self):
        sc = self._counts()
        a = thin_counts(sc, DoseConfig(0.01), seed=3)
        b = thin_counts(sc, DoseConfig(0.01), seed=3)
        np.testing.assert_array_equal(a.counts, b.counts)

    def test_expectation_preserved_over_seeds(self):
        sc = self._counts()
        n = sc.counts.sum()
        p = 0.05
        totals = np.array([thin_counts(sc, p, seed).counts.sum() for seed in range(100)])
        sigma = np.sqrt(n * p * (1 - p))
        assert abs(totals.mean() - n * p) < 3 * sigma / np.sqrt(100)

    def test_dose_config_validation(self):
        with pytest.raises(ConfigError):
            DoseConfig(0.0)
        with pytest.raises(ConfigError):
            DoseConfig(1.5)
        assert DoseConfig(0.005).drf == pytest.approx(200.0)

    def test_sinogram_counts_validation(self):
        with pytest.raises(DataError):
            SinogramCounts(counts=np.array([[0.5]]))
        with pytest.raises(DataError):
            SinogramCounts(counts=np.array([[-1]]))
