import numpy as np
import pytest

from carl_dehaze.imagecore import (
    PSNR_CAP,
    Image,
    _gaussian_window,
    clamp_to_image,
    load_image,
    metric_report,
    psnr,
    random_crop,
    save_image,
    ssim,
)


def rand_image(h, w, seed):
    rng = np.random.default_rng(seed)
    return Image(rng.uniform(0.0, 1.0, size=(h, w, 3)))


class TestImageType:
    def test_valid_construction(self):
        img = rand_image(8, 9, 0)
        assert img.height == 8 and img.width == 9
        assert img.data.dtype == np.float32

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            Image(np.full((4, 4, 3), 1.5))
        with pytest.raises(ValueError):
            Image(np.full((4, 4, 3), -0.1))

    def test_rejects_nonfinite(self):
        arr = np.zeros((4, 4, 3))
        arr[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            Image(arr)

    def test_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            Image(np.zeros((4, 4)))
        with pytest.raises(ValueError):
            Image(np.zeros((0, 4, 3)))

    def test_clamp_is_explicit(self):
        img = clamp_to_image(np.full((2, 2, 3), 1.7))
        assert img.data.max() == 1.0


class TestIO:
    def test_load_shape_passthrough(self, tmp_path):
        save_image(rand_image(64, 64, 1), tmp_path / "a.png")
        img = load_image(tmp_path / "a.png")
        assert img.height == 64 and img.width == 64

    def test_255_maps_to_one(self, tmp_path):
        from PIL import Image as PILImage

        PILImage.fromarray(np.full((4, 4, 3), 255, dtype=np.uint8)).save(
            tmp_path / "w.png"
        )
        img = load_image(tmp_path / "w.png")
        assert img.data.max() == 1.0
        assert img.data.min() == 1.0

    def test_grayscale_replicated(self, tmp_path):
        from PIL import Image as PILImage

        PILImage.fromarray(
            np.arange(16, dtype=np.uint8).reshape(4, 4), mode="L"
        ).save(tmp_path / "g.png")
        img = load_image(tmp_path / "g.png")
        assert np.array_equal(img.data[:, :, 0], img.data[:, :, 1])
        assert np.array_equal(img.data[:, :, 0], img.data[:, :, 2])

    def test_16bit_scaling(self, tmp_path):
        from PIL import Image as PILImage

        arr = np.full((4, 4), 65535, dtype=np.uint16)
        PILImage.fromarray(arr).save(tmp_path / "d.png")
        img = load_image(tmp_path / "d.png")
        assert img.data.max() == 1.0

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_image(tmp_path / "nope.png")

    def test_truncated_file_no_partial_image(self, tmp_path):
        save_image(rand_image(32, 32, 2), tmp_path / "full.png")
        raw = (tmp_path / "full.png").read_bytes()
        (tmp_path / "trunc.png").write_bytes(raw[: len(raw) // 2])
        with pytest.raises(Exception):
            load_image(tmp_path / "trunc.png")

    def test_8bit_roundtrip_exact(self, tmp_path):
        rng = np.random.default_rng(3)
        arr = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
        img = Image(arr / 255.0)
        save_image(img, tmp_path / "r.png")
        back = load_image(tmp_path / "r.png")
        assert np.array_equal(back.data, img.data)


class TestRandomCrop:
    def test_degenerate_full_crop(self):
        img = rand_image(16, 16, 4)
        (crop,) = random_crop(img, [], 16, seed=0)
        assert np.array_equal(crop.data, img.data)

    def test_determinism(self):
        img = rand_image(32, 48, 5)
        a = random_crop(img, [], 8, seed=7)
        b = random_crop(img, [], 8, seed=7)
        assert np.array_equal(a[0].data, b[0].data)

    def test_full_patch_size_alignment(self):
        # 240x240 windows out of a 480x640 image, same offset for partners
        img = rand_image(480, 640, 6)
        partner = Image(np.clip(img.data * 0.5, 0, 1))
        crops = random_crop(img, [partner], 240, seed=1)
        assert crops[0].height == 240 and crops[0].width == 240
        assert np.allclose(crops[1].data, np.float32(crops[0].data * np.float32(0.5)))

    def test_alignment_many_partners(self):
        img = rand_image(40, 40, 7)
        offsets = [0.1, 0.2, 0.3]
        partners = [Image(np.clip(img.data + o, 0, 1)) for o in offsets]
        crops = random_crop(img, partners, 11, seed=3)
        for o, crop in zip(offsets, crops[1:]):
            expect = np.clip(crops[0].data + np.float32(o), 0, 1)
            assert np.allclose(crop.data, expect, atol=1e-6)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            random_crop(rand_image(16, 16, 8), [rand_image(16, 17, 9)], 8, seed=0)

    def test_size_exceeds_image(self):
        with pytest.raises(ValueError):
            random_crop(rand_image(16, 16, 10), [], 17, seed=0)


def psnr_oracle(pred, gt):
    # naive scalar-loop MSE
    total = 0.0
    n = 0
    for i in range(pred.height):
        for j in range(pred.width):
            for c in range(3):
                d = float(pred.data[i, j, c]) - float(gt.data[i, j, c])
                total += d * d
                n += 1
    mse = total / n
    return 10.0 * np.log10(1.0 / mse)


class TestPsnr:
    def test_identical_hits_cap(self):
        img = rand_image(16, 16, 11)
        assert psnr(img, img) == PSNR_CAP == 100.0

    def test_constant_offset(self):
        a = Image(np.full((16, 16, 3), 0.4))
        b = Image(np.full((16, 16, 3), 0.5))
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-5)

    def test_matches_scalar_loop_oracle(self):
        for seed in range(5):
            a, b = rand_image(12, 14, seed), rand_image(12, 14, seed + 100)
            expect = psnr_oracle(a, b)
            assert psnr(a, b) == pytest.approx(expect, rel=1e-9)

    def test_monotone_decreasing_in_mse(self):
        gt = rand_image(16, 16, 12)
        noisy = []
        for amp in (0.01, 0.05, 0.1, 0.2):
            noise = np.random.default_rng(13).normal(0, amp, size=gt.data.shape)
            noisy.append(psnr(clamp_to_image(gt.data + noise), gt))
        assert all(a > b for a, b in zip(noisy, noisy[1:]))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            psnr(rand_image(8, 8, 14), rand_image(8, 9, 15))


def ssim_oracle(pred, gt):
    # naive sliding-window reference, explicit loops over valid windows
    win = _gaussian_window()
    c1, c2 = 0.01**2, 0.03**2
    h, w = pred.height, pred.width
    vals = []
    for c in range(3):
        x = pred.data[:, :, c].astype(np.float64)
        y = gt.data[:, :, c].astype(np.float64)
        chan = []
        for i in range(h - 10):
            for j in range(w - 10):
                px = x[i : i + 11, j : j + 11]
                py = y[i : i + 11, j : j + 11]
                mx = (win * px).sum()
                my = (win * py).sum()
                vx = (win * px * px).sum() - mx * mx
                vy = (win * py * py).sum() - my * my
                cov = (win * px * py).sum() - mx * my
                num = (2 * mx * my + c1) * (2 * cov + c2)
                den = (mx * mx + my * my + c1) * (vx + vy + c2)
                chan.append(num / den)
        vals.append(np.mean(chan))
    return float(np.mean(vals))


class TestSsim:
    def test_self_similarity(self):
        img = rand_image(24, 24, 16)
        assert ssim(img, img) == pytest.approx(1.0, abs=1e-9)

    def test_constant_images_analytic(self):
        # constants: contrast/structure terms are 1; luminance term only
        a = Image(np.full((16, 16, 3), 0.5))
        b = Image(np.full((16, 16, 3), 0.25))
        c1 = 0.01**2
        expect = (2 * 0.5 * 0.25 + c1) / (0.5**2 + 0.25**2 + c1)
        assert ssim(a, b) == pytest.approx(expect, abs=1e-9)

    def test_matches_sliding_window_oracle(self):
        a, b = rand_image(16, 18, 17), rand_image(16, 18, 18)
        assert ssim(a, b) == pytest.approx(ssim_oracle(a, b), abs=1e-6)

    def test_symmetry(self):
        a, b = rand_image(20, 20, 19), rand_image(20, 20, 20)
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-9)

    def test_too_small_image(self):
        with pytest.raises(ValueError):
            ssim(rand_image(8, 8, 21), rand_image(8, 8, 22))

    def test_in_range(self):
        a, b = rand_image(16, 16, 23), rand_image(16, 16, 24)
        assert -1.0 <= ssim(a, b) <= 1.0


def test_metric_report_keys():
    a, b = rand_image(16, 16, 25), rand_image(16, 16, 26)
    rep = metric_report(a, b)
    assert set(rep) == {"psnr_db", "ssim"}
    assert 0 < rep["psnr_db"] <= PSNR_CAP
