import numpy as np
import pytest

from lwenhance import imgcore
from lwenhance.errors import InvalidInputError


def rand_img(h, w, c, seed=0):
    rng = np.random.default_rng(seed)
    return rng.random((h, w, c), dtype=np.float32)


class TestBrightChannel:
    def test_constant_pixel(self):
        img = np.zeros((5, 7, 3), dtype=np.float32)
        img[..., 0], img[..., 1], img[..., 2] = 0.2, 0.5, 0.3
        out = imgcore.bright_channel(img)
        assert out.shape == (5, 7, 1)
        assert np.allclose(out, 0.5)

    def test_equal_channels_identity(self):
        base = rand_img(6, 6, 1, seed=1)
        img = np.repeat(base, 3, axis=2)
        assert np.array_equal(imgcore.bright_channel(img), base)

    def test_matches_scalar_loop(self):
        img = rand_img(4, 4, 3, seed=2)
        out = imgcore.bright_channel(img)
        for y in range(4):
            for x in range(4):
                assert out[y, x, 0] == max(img[y, x, 0], img[y, x, 1], img[y, x, 2])

    def test_rejects_single_channel(self):
        with pytest.raises(InvalidInputError):
            imgcore.bright_channel(rand_img(4, 4, 1))


class TestSpaceToDepth:
    def test_definition_2x2(self):
        img = np.array([[[1.0], [2.0]], [[3.0], [4.0]]], dtype=np.float32)
        out = imgcore.space_to_depth(img)
        assert out.shape == (1, 1, 4)
        assert np.array_equal(out[0, 0], [1.0, 2.0, 3.0, 4.0])

    def test_round_trip_exact(self):
        img = rand_img(8, 12, 3, seed=3)
        assert np.array_equal(imgcore.depth_to_space(imgcore.space_to_depth(img)), img)

    def test_shape_arithmetic(self):
        out = imgcore.space_to_depth(rand_img(256, 256, 1, seed=4))
        assert out.shape == (128, 128, 4)

    def test_rejects_odd_dims(self):
        with pytest.raises(InvalidInputError):
            imgcore.space_to_depth(rand_img(5, 4, 1))


class TestDct2:
    def test_constant_is_dc_only(self):
        img = np.full((8, 6), 0.37, dtype=np.float32)
        coeffs = imgcore.dct2(img)
        dc = coeffs[0, 0]
        assert abs(dc - 0.37 * np.sqrt(8 * 6)) < 1e-5
        coeffs[0, 0] = 0
        assert np.max(np.abs(coeffs)) < 1e-6

    def test_round_trip(self):
        img = rand_img(16, 13, 1, seed=5)
        back = imgcore.idct2(imgcore.dct2(img))
        assert back.shape == img.shape
        assert np.max(np.abs(back - img)) < 1e-5

    def test_parseval(self):
        img = rand_img(12, 12, 1, seed=6)[:, :, 0]
        coeffs = imgcore.dct2(img)
        assert np.sum(coeffs ** 2) == pytest.approx(np.sum(img ** 2), rel=1e-4)

    def test_rejects_multichannel(self):
        with pytest.raises(InvalidInputError):
            imgcore.dct2(rand_img(8, 8, 3))


def _ref_blur_down(img):
    """Direct scalar-loop Burt-Adelson analysis step (edge clamped)."""
    k = np.array([1, 4, 6, 4, 1], dtype=np.float64) / 16.0
    h, w = img.shape[:2]
    tmp = np.zeros_like(img, dtype=np.float64)
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for i in range(5):
                yy = min(max(y + i - 2, 0), h - 1)
                acc += k[i] * img[yy, x]
            tmp[y, x] = acc
    out = np.zeros_like(img, dtype=np.float64)
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for i in range(5):
                xx = min(max(x + i - 2, 0), w - 1)
                acc += k[i] * tmp[y, xx]
            out[y, x] = acc
    return out[::2, ::2]


class TestPyramid:
    def test_constant_detail_levels_zero(self):
        img = np.full((16, 16, 1), 0.42, dtype=np.float32)
        pyr = imgcore.laplacian_pyramid(img, 3)
        for lvl in pyr.levels[:-1]:
            assert np.max(np.abs(lvl)) < 1e-6

    def test_round_trip(self):
        img = rand_img(17, 23, 3, seed=7)
        pyr = imgcore.laplacian_pyramid(img, 4)
        back = imgcore.reconstruct(pyr)
        assert np.max(np.abs(back - img)) < 1e-5

    def test_gaussian_matches_reference_loop(self):
        img = rand_img(16, 16, 1, seed=8)[:, :, 0].astype(np.float64)
        pyr = imgcore.gaussian_pyramid(img, 3)
        ref = img
        for level in range(1, 3):
            ref = _ref_blur_down(ref)
            assert np.max(np.abs(pyr.levels[level] - ref)) < 1e-5

    def test_level_shapes_round_up(self):
        pyr = imgcore.gaussian_pyramid(rand_img(9, 5, 1, seed=9), 3)
        assert [lvl.shape[:2] for lvl in pyr.levels] == [(9, 5), (5, 3), (3, 2)]

    def test_too_deep_raises(self):
        with pytest.raises(InvalidInputError):
            imgcore.laplacian_pyramid(rand_img(4, 4, 1), 4)


def _ref_bilateral(lowres, guide, grid, sigma_r):
    """Brute-force dense scatter/average/fill/slice oracle."""
    gw, gh, gr = grid
    h, w = lowres.shape
    gh_full, gw_full = guide.shape
    guide_low = imgcore.resize_bilinear(guide, (h, w))

    def corners(gx, gy, gz):
        x0 = min(max(int(np.floor(gx)), 0), gw - 1)
        y0 = min(max(int(np.floor(gy)), 0), gh - 1)
        z0 = min(max(int(np.floor(gz)), 0), gr - 1)
        x1, y1, z1 = min(x0 + 1, gw - 1), min(y0 + 1, gh - 1), min(z0 + 1, gr - 1)
        fx, fy, fz = gx - x0, gy - y0, gz - z0
        for cy, wy in ((y0, 1 - fy), (y1, fy)):
            for cx, wx in ((x0, 1 - fx), (x1, fx)):
                for cz, wz in ((z0, 1 - fz), (z1, fz)):
                    yield (cy, cx, cz), wy * wx * wz

    num = np.zeros((gh, gw, gr))
    den = np.zeros((gh, gw, gr))
    for y in range(h):
        for x in range(w):
            gx = np.clip((x + 0.5) / w * gw - 0.5, 0, gw - 1)
            gy = np.clip((y + 0.5) / h * gh - 0.5, 0, gh - 1)
            gz = np.clip(guide_low[y, x] / sigma_r, 0, gr - 1)
            for cell, wgt in corners(gx, gy, gz):
                num[cell] += wgt * lowres[y, x]
                den[cell] += wgt
    avg = np.where(den > 1e-12, num / np.maximum(den, 1e-12), 0.0)
    # nearest nonempty fill, brute force over all cell pairs
    filled = avg.copy()
    nonempty = list(zip(*np.nonzero(den > 1e-12)))
    for cy in range(gh):
        for cx in range(gw):
            for cz in range(gr):
                if den[cy, cx, cz] > 1e-12:
                    continue
                best = min(
                    nonempty,
                    key=lambda c: (c[0] - cy) ** 2 + (c[1] - cx) ** 2 + (c[2] - cz) ** 2,
                )
                filled[cy, cx, cz] = avg[best]
    out = np.zeros((gh_full, gw_full))
    for y in range(gh_full):
        for x in range(gw_full):
            gx = np.clip((x + 0.5) / gw_full * gw - 0.5, 0, gw - 1)
            gy = np.clip((y + 0.5) / gh_full * gh - 0.5, 0, gh - 1)
            gz = np.clip(guide[y, x] / sigma_r, 0, gr - 1)
            out[y, x] = sum(wgt * filled[cell] for cell, wgt in corners(gx, gy, gz))
    return out


class TestBilateralUpsample:
    def test_constant_lowres(self):
        lowres = np.full((4, 4), 0.3, dtype=np.float32)
        guide = rand_img(16, 16, 1, seed=10)[:, :, 0]
        out = imgcore.bilateral_upsample(lowres, guide)
        assert np.max(np.abs(out - 0.3)) < 1e-6

    def test_guide_irrelevant_for_constant_field(self):
        lowres = np.full((4, 4), 0.61, dtype=np.float32)
        a = imgcore.bilateral_upsample(lowres, rand_img(16, 16, 1, seed=11)[:, :, 0])
        b = imgcore.bilateral_upsample(lowres, rand_img(16, 16, 1, seed=12)[:, :, 0])
        assert np.allclose(a, b, atol=1e-6)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(13)
        lowres = rng.random((4, 4)).astype(np.float32)
        guide = rng.random((16, 16)).astype(np.float32)
        grid = (8, 8, 4)
        sigma_r = 1.0 / 3.0
        out = imgcore.bilateral_upsample(lowres, guide, grid=grid, sigma_r=sigma_r)
        ref = _ref_bilateral(lowres.astype(np.float64), guide.astype(np.float64), grid, sigma_r)
        assert np.max(np.abs(out - ref)) < 1e-4

    def test_output_within_lowres_range(self):
        rng = np.random.default_rng(14)
        lowres = (0.2 + 0.5 * rng.random((6, 8))).astype(np.float32)
        guide = rng.random((24, 32)).astype(np.float32)
        out = imgcore.bilateral_upsample(lowres, guide)
        assert out.min() >= lowres.min() - 1e-6
        assert out.max() <= lowres.max() + 1e-6

    def test_transpose_is_adjoint(self):
        rng = np.random.default_rng(15)
        lowres = rng.random((4, 5)).astype(np.float64)
        guide = rng.random((15, 17)).astype(np.float64)
        out, ctx = imgcore.bilateral_upsample(lowres, guide, return_context=True)
        u = rng.random(lowres.shape)
        v = rng.random(out.shape)
        # <A u, v> == <u, A^T v> for the linear map A (fixed guide)
        au = imgcore.bilateral_upsample(u.astype(np.float64), guide)
        atv = imgcore.bilateral_upsample_transpose(v, ctx)
        assert np.sum(au * v) == pytest.approx(np.sum(u * atv), rel=1e-10)

    def test_rejects_lowres_larger_than_guide(self):
        with pytest.raises(InvalidInputError):
            imgcore.bilateral_upsample(np.zeros((20, 20)), np.zeros((10, 10)))


class TestFiniteness:
    def test_ops_preserve_finiteness(self):
        img = rand_img(16, 16, 3, seed=16)
        for out in (
            imgcore.bright_channel(img),
            imgcore.space_to_depth(img),
            imgcore.dct2(img[:, :, 0]),
            imgcore.reconstruct(imgcore.laplacian_pyramid(img, 3)),
            imgcore.bilateral_upsample(img[::4, ::4, 0], img[:, :, 0]),
        ):
            assert np.all(np.isfinite(out))


class TestImageIO:
    def test_png_round_trip(self, tmp_path):
        img = rand_img(9, 11, 3, seed=17)
        path = tmp_path / "x.png"
        imgcore.write_png(img, path)
        back = imgcore.read_image(path)
        assert back.shape == img.shape
        # one uint8 quantization step
        assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-6

    def test_single_channel_png(self, tmp_path):
        img = rand_img(8, 8, 1, seed=18)
        path = tmp_path / "g.png"
        imgcore.write_png(img, path)
        assert imgcore.read_image(path).shape == (8, 8, 1)

    def test_jpeg_decode(self):
        img = rand_img(16, 16, 3, seed=19)
        data = imgcore.encode_jpeg(img, quality=95)
        back = imgcore.decode_image(data)
        assert back.shape == img.shape
        assert np.all(np.isfinite(back))


class TestEnsureRgb:
    def test_rgb_passthrough(self):
        img = rand_img(5, 6, 3, seed=20)
        assert imgcore.ensure_rgb(img) is img

    def test_gray_replicates(self):
        img = rand_img(5, 6, 1, seed=21)
        out = imgcore.ensure_rgb(img)
        assert out.shape == (5, 6, 3)
        for c in range(3):
            assert np.array_equal(out[:, :, c], img[:, :, 0])

    def test_alpha_dropped(self):
        img = rand_img(5, 6, 4, seed=22)
        out = imgcore.ensure_rgb(img)
        assert np.array_equal(out, img[:, :, :3])
        assert out.flags.c_contiguous

    def test_rgba_file_round_trip(self, tmp_path):
        # foreign encoders commonly emit RGBA; loading + coercion must
        # agree with the color planes that were written
        from PIL import Image

        rgba = (255 * rand_img(7, 9, 4, seed=23)).astype(np.uint8)
        rgba[:, :, 3] = 255
        path = tmp_path / "a.png"
        Image.fromarray(rgba, mode="RGBA").save(path)
        out = imgcore.ensure_rgb(imgcore.read_image(path))
        assert out.shape == (7, 9, 3)
        assert np.array_equal(imgcore.to_uint8(out), rgba[:, :, :3])

    def test_rejects_bad_rank(self):
        with pytest.raises(InvalidInputError):
            imgcore.ensure_rgb(np.zeros((4, 4), dtype=np.float32))
