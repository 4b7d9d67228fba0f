"""Loss and metric tests, including literal windowed-statistics oracles."""

import numpy as np
import pytest

from petlab import losses
from petlab.errors import ConfigError, DegenerateInputError, ShapeError
from petlab.gradcheck import grad_check
from petlab.losses import SSIMParams, gaussian_window
from petlab.metrics import estimate_brain_mask, masked_ssim, nrmse, psnr
from petlab.phantom import generate_phantom
from petlab.tensor import Tensor


def t4(img):
    """Wrap a 2-d float64 image as a [1,1,H,W] tensor (64-bit path)."""
    return Tensor(np.asarray(img, dtype=np.float64)[None, None])


# ---------------------------------------------------------------------------
# independent oracles: literal per-window loops

def ssim_maps_oracle(x, y, c1, c2, win):
    k = win.shape[0]
    ho, wo = x.shape[0] - k + 1, x.shape[1] - k + 1
    smap = np.zeros((ho, wo))
    csmap = np.zeros((ho, wo))
    for i in range(ho):
        for j in range(wo):
            px = x[i:i + k, j:j + k]
            py = y[i:i + k, j:j + k]
            mx = float((win * px).sum())
            my = float((win * py).sum())
            vx = float((win * px * px).sum()) - mx * mx
            vy = float((win * py * py).sum()) - my * my
            cxy = float((win * px * py).sum()) - mx * my
            lum = (2 * mx * my + c1) / (mx * mx + my * my + c1)
            cs = (2 * cxy + c2) / (vx + vy + c2)
            smap[i, j] = lum * cs
            csmap[i, j] = cs
    return smap, csmap


def msssim_oracle(x, y, c1, c2, win, weights):
    def weighted(v, w):
        return v if w == 1.0 else max(v, 1e-6) ** w

    val = 1.0
    for level, weight in enumerate(weights):
        smap, csmap = ssim_maps_oracle(x, y, c1, c2, win)
        if level < len(weights) - 1:
            val *= weighted(csmap.mean(), weight)
            x = x.reshape(x.shape[0] // 2, 2, x.shape[1] // 2, 2).mean(axis=(1, 3))
            y = y.reshape(y.shape[0] // 2, 2, y.shape[1] // 2, 2).mean(axis=(1, 3))
        else:
            val *= weighted(smap.mean(), weight)
    return val


# ---------------------------------------------------------------------------

class TestL1Mse:
    def test_l1_identity_and_offset(self):
        rng = np.random.default_rng(0)
        x = rng.random((1, 1, 6, 6))
        assert losses.l1_loss(Tensor(x), Tensor(x)).item() == 0.0
        off = losses.l1_loss(Tensor(x + 0.7), Tensor(x))
        assert off.item() == pytest.approx(0.7, rel=1e-5)

    def test_l1_direct_value(self):
        x = Tensor(np.array([[0.0, 1.0], [2.0, 3.0]])[None, None])
        y = Tensor(np.ones((1, 1, 2, 2)))
        assert losses.l1_loss(x, y).item() == pytest.approx(1.0)

    def test_mse_values(self):
        x = Tensor(np.array([0.0, 2.0])[None, None, None])
        y = Tensor(np.array([1.0, 1.0])[None, None, None])
        assert losses.mse_loss(x, y).item() == pytest.approx(1.0)
        z = Tensor(np.zeros((1, 1, 3, 3)))
        assert losses.mse_loss(z, z).item() == 0.0
        assert losses.mse_loss(Tensor(np.full((1, 1, 3, 3), 0.5)), z).item() == pytest.approx(0.25)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            losses.l1_loss(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 2))))

    def test_symmetry_and_scale_relation(self):
        rng = np.random.default_rng(1)
        x = rng.random((1, 1, 5, 5))
        y = rng.random((1, 1, 5, 5))
        assert losses.l1_loss(Tensor(x), Tensor(y)).item() == pytest.approx(
            losses.l1_loss(Tensor(y), Tensor(x)).item())
        a = 3.0
        assert losses.mse_loss(Tensor(a * x), Tensor(a * y)).item() == pytest.approx(
            a * a * losses.mse_loss(Tensor(x), Tensor(y)).item(), rel=1e-6)


class TestSSIM:
    PARAMS = SSIMParams(c1=(0.01 * 2.0) ** 2, c2=(0.03 * 2.0) ** 2)

    def test_identical_images_score_one(self):
        rng = np.random.default_rng(2)
        x = rng.random((16, 16)) + 0.5
        assert losses.ssim_index(t4(x), t4(x), self.PARAMS).item() == pytest.approx(1.0, abs=1e-9)
        assert losses.ssim_loss(t4(x), t4(x), self.PARAMS).item() == pytest.approx(0.0, abs=1e-9)

    def test_constant_images_zero_variance_algebra(self):
        a, b = 0.8, 1.3
        c1 = self.PARAMS.c1
        expected = (2 * a * b + c1) / (a * a + b * b + c1)
        got = losses.ssim_index(t4(np.full((12, 12), a)), t4(np.full((12, 12), b)), self.PARAMS)
        assert got.item() == pytest.approx(expected, rel=1e-6)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_literal_oracle(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.random((32, 32)) + 0.2
        y = np.clip(x + 0.15 * rng.standard_normal((32, 32)), 0, None)
        smap = losses.ssim_map(t4(x), t4(y), self.PARAMS).data[0, 0]
        expected, _ = ssim_maps_oracle(x, y, self.PARAMS.c1, self.PARAMS.c2,
                                       gaussian_window())
        np.testing.assert_allclose(smap, expected, atol=1e-6)

    def test_symmetry(self):
        rng = np.random.default_rng(3)
        x = rng.random((16, 16))
        y = rng.random((16, 16))
        assert losses.ssim_index(t4(x), t4(y), self.PARAMS).item() == pytest.approx(
            losses.ssim_index(t4(y), t4(x), self.PARAMS).item(), abs=1e-12)

    def test_bounds_for_nonnegative_images(self):
        # upper bound holds unconditionally; positivity over the operating
        # domain (noisy renditions of a shared image, dynamic-range constants)
        rng = np.random.default_rng(4)
        for _ in range(5):
            base = rng.random((20, 20)) + 0.2
            noisy = np.clip(base + 0.3 * rng.standard_normal((20, 20)), 0, None)
            params = SSIMParams.for_dynamic_range(base.max())
            v = losses.ssim_index(t4(noisy), t4(base), params).item()
            assert 0.0 < v <= 1.0
            assert losses.ssim_loss(t4(noisy), t4(base), params).item() >= 0.0

    def test_window_too_large_raises(self):
        with pytest.raises(ConfigError):
            losses.ssim_index(t4(np.zeros((8, 8))), t4(np.zeros((8, 8))), self.PARAMS)


class TestMSSSIM:
    def test_k1_equals_ssim(self):
        rng = np.random.default_rng(5)
        x = rng.random((24, 24)) + 0.3
        y = rng.random((24, 24)) + 0.3
        p1 = SSIMParams(c1=1e-4, c2=9e-4, levels=1)
        a = losses.msssim_loss(t4(x), t4(y), p1).item()
        b = losses.ssim_loss(t4(x), t4(y), p1).item()
        assert a == pytest.approx(b, abs=1e-7)

    def test_identity_loss_zero(self):
        rng = np.random.default_rng(6)
        x = rng.random((48, 48)) + 0.2
        p = SSIMParams(c1=1e-4, c2=9e-4, levels=3)
        assert losses.msssim_loss(t4(x), t4(x), p).item() == pytest.approx(0.0, abs=1e-9)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_literal_oracle(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.random((64, 64)) + 0.2
        y = np.clip(x + 0.2 * rng.standard_normal((64, 64)), 0, None)
        p = SSIMParams(c1=1e-4, c2=9e-4, levels=3)
        got = losses.msssim_index(t4(x), t4(y), p).item()
        expected = msssim_oracle(x, y, p.c1, p.c2, gaussian_window(), p.level_weights)
        assert got == pytest.approx(expected, abs=1e-5)

    def test_infeasible_k_raises(self):
        p = SSIMParams(c1=1e-4, c2=9e-4, levels=4)
        with pytest.raises(ConfigError):
            losses.msssim_index(t4(np.zeros((32, 32))), t4(np.zeros((32, 32))), p)

    def test_weight_validation(self):
        with pytest.raises(ConfigError):
            SSIMParams(c1=1e-4, c2=9e-4, levels=2, level_weights=(0.9, 0.4))


class TestLossGradients:
    def test_l1_gradient_away_from_zeros(self):
        far = lambda rng, shape: rng.standard_normal(shape) + 5.0
        report = grad_check(losses.l1_loss, [(1, 1, 4, 4), (1, 1, 4, 4)], tolerance=1e-2,
                            samplers=[lambda r, s: r.standard_normal(s), far], name="l1")
        assert report.passed, str(report)

    def test_mse_gradient(self):
        report = grad_check(losses.mse_loss, [(1, 1, 4, 4), (1, 1, 4, 4)],
                            tolerance=1e-2, name="mse")
        assert report.passed, str(report)

    def test_ssim_gradient(self):
        params = SSIMParams(c1=1e-4, c2=9e-4)
        pos = lambda rng, shape: rng.random(shape) + 0.5
        op = lambda x, y: losses.ssim_loss(x, y, params)
        report = grad_check(op, [(1, 1, 12, 12), (1, 1, 12, 12)], tolerance=1e-2,
                            samplers=[pos, pos], name="ssim")
        assert report.passed, str(report)

    def test_msssim_gradient(self):
        params = SSIMParams(c1=1e-4, c2=9e-4, levels=2)
        pos = lambda rng, shape: rng.random(shape) + 0.5
        op = lambda x, y: losses.msssim_loss(x, y, params)
        # slightly larger fd step: fractional powers amplify f32 rounding noise
        report = grad_check(op, [(1, 1, 24, 24), (1, 1, 24, 24)], tolerance=1e-2,
                            samplers=[pos, pos], step=2e-3, name="msssim")
        assert report.passed, str(report)
        report64 = grad_check(op, [(1, 1, 24, 24), (1, 1, 24, 24)], tolerance=1e-4,
                              samplers=[pos, pos], dtype=np.float64, name="msssim64")
        assert report64.passed, str(report64)


class TestNrmsePsnr:
    def test_nrmse_identity_and_zero_prediction(self):
        rng = np.random.default_rng(7)
        y = rng.random((8, 8)) + 0.1
        assert nrmse(y, y) == 0.0
        assert nrmse(np.zeros_like(y), y) == pytest.approx(1.0)

    def test_nrmse_direct_value(self):
        y = np.array([[1.0, 2.0]])
        x = y + 1.0
        assert nrmse(x, y) == pytest.approx(np.sqrt(2.0 / 5.0))

    def test_nrmse_scale_invariant(self):
        rng = np.random.default_rng(8)
        x = rng.random((6, 6))
        y = rng.random((6, 6)) + 0.2
        assert nrmse(3.0 * x, 3.0 * y) == pytest.approx(nrmse(x, y), rel=1e-12)

    def test_nrmse_zero_reference_raises(self):
        with pytest.raises(DegenerateInputError):
            nrmse(np.ones((4, 4)), np.zeros((4, 4)))

    def test_psnr_arithmetic(self):
        y = np.ones((10, 10))
        x = y + 0.1  # MSE = 0.01, MAX = 1
        assert psnr(x, y) == pytest.approx(20.0)

    def test_psnr_perfect_match_sentinel(self):
        y = np.ones((4, 4))
        assert psnr(y, y) == np.inf

    def test_psnr_matches_hand_computation(self):
        rng = np.random.default_rng(9)
        y = rng.random((12, 12)) + 0.5
        x = y + 0.05 * rng.standard_normal((12, 12))
        mask = rng.random((12, 12)) > 0.3
        mse = float(((x - y)[mask] ** 2).mean())
        expected = 20.0 * np.log10(y[mask].max() / np.sqrt(mse))
        assert psnr(x, y, mask) == pytest.approx(expected, abs=1e-9)


class TestBrainMask:
    def test_disk_recovered_exactly(self):
        yy, xx = np.meshgrid(np.arange(32), np.arange(32), indexing="ij")
        disk = (((yy - 15.5) ** 2 + (xx - 15.5) ** 2) <= 100).astype(float)
        bm = estimate_brain_mask(disk)
        np.testing.assert_array_equal(bm.mask, disk > 0)

    def test_constant_image_full_mask(self):
        bm = estimate_brain_mask(np.full((8, 8), 3.0))
        assert bm.mask.all()
        assert bm.coverage == 1.0

    def test_all_zero_raises(self):
        with pytest.raises(DegenerateInputError):
            estimate_brain_mask(np.zeros((8, 8)))

    def test_hole_filling_inside_largest_component(self):
        img = np.zeros((16, 16))
        img[4:12, 4:12] = 1.0
        img[7:9, 7:9] = 0.0  # interior hole
        img[0, 15] = 1.0  # small separate speck
        bm = estimate_brain_mask(img)
        assert bm.mask[7, 7] and bm.mask[8, 8]
        assert not bm.mask[0, 15]

    @pytest.mark.parametrize("seed", [0, 5])
    def test_phantom_slice_coverage_near_head_area(self, seed):
        ph = generate_phantom(seed=seed, d=12, h=64, w=64, n_lesions=2)
        vol = ph.voxels
        z = vol.shape[0] // 2
        bm = estimate_brain_mask(vol[z])
        true_area = (vol[z] > 0).sum()
        assert abs(bm.mask.sum() - true_area) / true_area < 0.10

    def test_masked_ssim_ignores_outside(self):
        rng = np.random.default_rng(10)
        ref = np.zeros((32, 32))
        ref[8:24, 8:24] = rng.random((16, 16)) + 0.5
        x = ref.copy()
        x[0:4, 0:4] = 5.0  # corruption far outside the mask
        params = SSIMParams.for_dynamic_range(ref.max())
        bm = estimate_brain_mask(ref)
        assert masked_ssim(x, ref, params, bm) == pytest.approx(
            masked_ssim(ref, ref, params, bm), abs=1e-6)
