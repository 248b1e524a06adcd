import numpy as np
import pytest

from lwenhance import imgcore, retouch
from lwenhance.errors import ConfigurationError, InvalidInputError
from lwenhance.filters import FusionParams, SmoothParams, l0_smooth, mertens_fuse


class TestCoefficients:
    def test_defaults_valid(self):
        c = retouch.RetouchCoefficients()
        assert len(c.theta1) == len(c.gamma1) == 2
        assert c.epsilon == 1e-4

    def test_length_mismatch_rejected(self):
        with pytest.raises(InvalidInputError):
            retouch.RetouchCoefficients(theta1=[0.01], gamma1=[0.4, 0.8])

    def test_empty_sequence_rejected(self):
        with pytest.raises(InvalidInputError):
            retouch.RetouchCoefficients(theta2=[], gamma2=[])

    def test_gamma_out_of_range_rejected(self):
        with pytest.raises(InvalidInputError):
            retouch.RetouchCoefficients(gamma1=[0.4, 1.2])

    def test_negative_alpha_rejected(self):
        with pytest.raises(InvalidInputError):
            retouch.RetouchCoefficients(alpha=-0.1)

    def test_json_roundtrip(self):
        c = retouch.RetouchCoefficients(
            theta1=[0.02], gamma1=[0.6], alpha=0.25,
            theta3=FusionParams(w_contrast=0.5, levels=3),
        )
        c2 = retouch.RetouchCoefficients.from_json(c.to_json())
        assert c2 == c

    def test_from_json_rejects_garbage(self):
        with pytest.raises(ConfigurationError):
            retouch.RetouchCoefficients.from_json("not json {")

    def test_from_dict_rejects_unknown_field(self):
        with pytest.raises(ConfigurationError):
            retouch.RetouchCoefficients.from_dict({"theta9": [1.0]})


class TestUnderBranch:
    def test_gamma_zero_near_identity(self):
        rng = np.random.default_rng(0)
        img = rng.random((16, 16, 3), dtype=np.float32)
        out = retouch.under_branch(img, theta=0.01, gamma=0.0)
        # divisor is exactly 1 + epsilon
        assert np.abs(out - img / 1.0001).max() < 1e-6

    def test_flat_quarter_gray_saturates(self):
        img = np.full((12, 12, 3), 0.25, dtype=np.float32)
        out = retouch.under_branch(img, theta=0.01, gamma=1.0)
        assert np.abs(out - 0.25 / 0.2501).max() < 1e-5

    def test_matches_primitive_composition(self):
        rng = np.random.default_rng(1)
        img = rng.random((16, 20, 3), dtype=np.float32)
        theta, gamma = 0.02, 0.7
        lmap = l0_smooth(imgcore.bright_channel(img), SmoothParams(lam=theta))
        ref = np.clip(img / (lmap ** gamma + 1e-4), 0.0, 1.0)
        out = retouch.under_branch(img, theta, gamma)
        assert np.array_equal(out, ref.astype(np.float32))

    def test_never_darkens(self):
        rng = np.random.default_rng(2)
        img = rng.random((16, 16, 3), dtype=np.float32)
        out = retouch.under_branch(img, theta=0.01, gamma=0.8)
        assert (out >= img - 1e-4).all()


class TestOverBranch:
    def test_gamma_zero_near_identity(self):
        rng = np.random.default_rng(3)
        img = rng.random((16, 16, 3), dtype=np.float32)
        out = retouch.over_branch(img, theta=0.01, gamma=0.0)
        assert np.abs(out - img).max() < 2e-4

    def test_inversion_identity(self):
        rng = np.random.default_rng(4)
        img = rng.random((12, 16, 3), dtype=np.float32)
        direct = retouch.over_branch(img, 0.02, 0.5)
        mirrored = 1.0 - retouch.under_branch(1.0 - img, 0.02, 0.5)
        assert np.array_equal(direct, mirrored.astype(np.float32))

    def test_flat_bright_goes_dark(self):
        img = np.full((12, 12, 3), 0.75, dtype=np.float32)
        out = retouch.over_branch(img, theta=0.01, gamma=1.0)
        assert np.abs(out - (1.0 - 0.25 / 0.2501)).max() < 1e-5

    def test_never_brightens(self):
        rng = np.random.default_rng(5)
        img = rng.random((16, 16, 3), dtype=np.float32)
        out = retouch.over_branch(img, theta=0.01, gamma=0.8)
        assert (out <= img + 1e-4).all()


class TestRetouch:
    def test_degenerate_coefficients_near_identity(self):
        rng = np.random.default_rng(6)
        img = rng.random((32, 32, 3), dtype=np.float32)
        c = retouch.RetouchCoefficients(
            theta1=[0.01], gamma1=[0.0], theta2=[0.01], gamma2=[0.0], alpha=0.0
        )
        out = retouch.retouch(img, c)
        assert np.abs(out - img).mean() < 1e-2

    def test_dark_image_brightens(self):
        rng = np.random.default_rng(7)
        img = (0.25 * rng.random((32, 32, 3))).astype(np.float32)
        c = retouch.RetouchCoefficients(
            theta1=[0.01], gamma1=[0.8], theta2=[0.01], gamma2=[0.0], alpha=0.0
        )
        out = retouch.retouch(img, c)
        assert out.mean() > img.mean()

    def test_alpha_zero_equals_fusion(self):
        rng = np.random.default_rng(8)
        img = rng.random((24, 24, 3), dtype=np.float32)
        c = retouch.RetouchCoefficients(alpha=0.0)
        out = retouch.retouch(img, c)
        fused = mertens_fuse(retouch.exposure_sequence(img, c), c.theta3)
        assert np.array_equal(out, fused)

    def test_matches_primitive_composition(self):
        rng = np.random.default_rng(9)
        img = rng.random((24, 16, 3), dtype=np.float32)
        c = retouch.RetouchCoefficients(theta1=[0.02], gamma1=[0.6],
                                        theta2=[0.015], gamma2=[0.3], alpha=0.4)
        seq = [img,
               retouch.under_branch(img, 0.02, 0.6, c.epsilon),
               retouch.over_branch(img, 0.015, 0.3, c.epsilon)]
        fused = mertens_fuse(seq, c.theta3)
        ref = np.clip(fused + 0.4 * (fused - l0_smooth(fused, SmoothParams(lam=c.theta4))), 0, 1)
        out = retouch.retouch(img, c)
        assert np.array_equal(out, ref.astype(np.float32))

    def test_deterministic(self):
        rng = np.random.default_rng(10)
        img = rng.random((24, 24, 3), dtype=np.float32)
        c = retouch.RetouchCoefficients()
        assert np.array_equal(retouch.retouch(img, c), retouch.retouch(img, c))
