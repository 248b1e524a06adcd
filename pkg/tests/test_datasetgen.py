import json

import numpy as np
import pytest

from lwenhance import datasetgen, imgcore
from lwenhance.errors import ConfigurationError, InvalidInputError
from lwenhance.retouch import RetouchCoefficients


def _psnr(a, b):
    mse = float(((a.astype(np.float64) - b.astype(np.float64)) ** 2).mean())
    return 10 * np.log10(1.0 / mse) if mse > 0 else np.inf


def _natural(h=64, w=64, seed=0):
    # smooth ramps plus soft blobs, deterministic
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    rng = np.random.default_rng(seed)
    img = np.stack([0.3 + 0.4 * xx, 0.2 + 0.5 * yy, 0.5 + 0.3 * xx * yy], axis=2)
    for _ in range(4):
        cy, cx, r = rng.uniform(0, 1, 3)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (0.02 + 0.05 * r))
        img += 0.15 * blob[:, :, None] * rng.uniform(-1, 1, 3)
    return np.clip(img, 0, 1).astype(np.float32)


class TestHistogram:
    def test_constant_half_spikes_at_127(self):
        img = np.full((8, 8, 3), 0.5, dtype=np.float32)
        h = datasetgen.histogram(img)
        assert h.shape == (256,)
        assert h[127] == 1.0 and h.sum() == 1.0

    def test_black_spikes_at_zero(self):
        img = np.zeros((4, 4, 3), dtype=np.float32)
        h = datasetgen.histogram(img)
        assert h[0] == 1.0

    def test_matches_counting_oracle(self):
        rng = np.random.default_rng(0)
        img = rng.random((8, 8, 3), dtype=np.float32)
        h = datasetgen.histogram(img)
        counts = np.zeros(256)
        for y in range(8):
            for x in range(8):
                counts[int(np.floor(255.999 * img[y, x].max()))] += 1
        assert np.array_equal(h, counts / 64)


class TestCluster:
    def _group_histograms(self, seed=0):
        # three tight groups centered on different brightness bins
        rng = np.random.default_rng(seed)
        hists, labels = [], []
        for g, center in enumerate((20, 128, 235)):
            for _ in range(7):
                h = np.zeros(256)
                for off in (-2, -1, 0, 1, 2):
                    h[center + off] = rng.uniform(0.5, 1.0)
                hists.append(h / h.sum())
                labels.append(g)
        return hists, labels

    def test_k_out_of_range(self):
        hists = [np.full(256, 1 / 256)] * 3
        with pytest.raises(InvalidInputError):
            datasetgen.cluster(hists, k=0)
        with pytest.raises(InvalidInputError):
            datasetgen.cluster(hists, k=4)

    def test_k1_centroid_is_mean(self):
        rng = np.random.default_rng(1)
        hists = [rng.dirichlet(np.ones(256)) for _ in range(9)]
        model = datasetgen.cluster(hists, k=1, seed=0)
        assert np.abs(model.centroids[0] - np.mean(hists, axis=0)).max() < 1e-12
        assert model.assignments == [0] * 9

    def test_k_equals_n_zero_inertia(self):
        rng = np.random.default_rng(2)
        hists = [rng.dirichlet(np.ones(256)) for _ in range(5)]
        model = datasetgen.cluster(hists, k=5, seed=3)
        assert model.inertia_history[-1] < 1e-20
        assert sorted(model.assignments) == [0, 1, 2, 3, 4]

    def test_recovers_separated_groups(self):
        hists, labels = self._group_histograms()
        model = datasetgen.cluster(hists, k=3, seed=7)
        # same-group points share a cluster, cross-group points never do
        for i in range(len(hists)):
            for j in range(i + 1, len(hists)):
                same = model.assignments[i] == model.assignments[j]
                assert same == (labels[i] == labels[j])

    def test_inertia_non_increasing(self):
        rng = np.random.default_rng(4)
        hists = [rng.dirichlet(np.ones(256) * 0.1) for _ in range(30)]
        model = datasetgen.cluster(hists, k=4, seed=5)
        hist = model.inertia_history
        assert all(hist[i + 1] <= hist[i] + 1e-12 for i in range(len(hist) - 1))

    def test_assign_matches_stored_assignment(self):
        hists, _ = self._group_histograms(seed=6)
        model = datasetgen.cluster(hists, k=3, seed=8)
        for h, a in zip(hists, model.assignments):
            assert model.assign(np.asarray(h)) == a

    def test_dict_roundtrip(self):
        hists, _ = self._group_histograms(seed=9)
        model = datasetgen.cluster(hists, k=3, seed=1)
        m2 = datasetgen.ClusterModel.from_dict(json.loads(json.dumps(model.to_dict())))
        assert m2.k == model.k and m2.assignments == model.assignments
        assert np.abs(m2.centroids - model.centroids).max() < 1e-15


class TestRealisticNoise:
    def test_zero_noise_identity(self):
        rng = np.random.default_rng(10)
        img = rng.random((16, 16, 3), dtype=np.float32)
        out = datasetgen.add_realistic_noise(img, datasetgen.DegradeParams(seed=1))
        assert np.abs(out - img).max() < 1e-6

    def test_deterministic(self):
        rng = np.random.default_rng(11)
        img = rng.random((16, 16, 3), dtype=np.float32)
        p = datasetgen.DegradeParams(sigma_s=0.02, sigma_c=0.05, seed=42)
        assert np.array_equal(datasetgen.add_realistic_noise(img, p),
                              datasetgen.add_realistic_noise(img, p))

    def test_linear_space_variance(self):
        img = np.full((256, 256, 3), 0.5, dtype=np.float32)
        p = datasetgen.DegradeParams(sigma_s=0.0, sigma_c=0.1, seed=0)
        out = datasetgen.add_realistic_noise(img, p)
        resid = out.astype(np.float64) ** 2.2 - 0.5 ** 2.2
        var = resid.var()
        assert abs(var - 0.01) < 0.001

    def test_invalid_params_rejected(self):
        with pytest.raises(InvalidInputError):
            datasetgen.DegradeParams(sigma_s=-0.1)
        with pytest.raises(InvalidInputError):
            datasetgen.DegradeParams(jpeg_quality=0)


class TestJpegDegrade:
    def test_high_quality_psnr(self):
        img = _natural()
        out = datasetgen.jpeg_degrade(img, 95)
        assert out.shape == img.shape
        assert _psnr(img, out) > 35

    def test_constant_image_near_exact(self):
        img = np.full((32, 32, 3), 0.42, dtype=np.float32)
        out = datasetgen.jpeg_degrade(img, 50)
        assert np.abs(out - img).max() < 0.02

    def test_quality_monotone(self):
        img = _natural(seed=3)
        assert _psnr(img, datasetgen.jpeg_degrade(img, 10)) < _psnr(img, datasetgen.jpeg_degrade(img, 90))


class TestBuildPairs:
    def _setup(self, n=10, seed=0):
        images = [_natural(48, 48, seed=seed + i) for i in range(n)]
        hists = [datasetgen.histogram(im) for im in images]
        model = datasetgen.cluster(hists, k=2, seed=seed)
        coeffs = {0: RetouchCoefficients(), 1: RetouchCoefficients(alpha=0.3)}
        return images, model, coeffs

    def test_manifest_cardinality_and_decoding(self, tmp_path):
        images, model, coeffs = self._setup()
        manifest = datasetgen.build_pairs(images, model, coeffs,
                                          datasetgen.DegradeRanges(seed=1), tmp_path)
        assert len(manifest.entries) == 10
        for e in manifest.entries:
            inp = imgcore.read_image(tmp_path / e.input_path)
            tgt = imgcore.read_image(tmp_path / e.target_path)
            assert inp.shape == tgt.shape == (48, 48, 3)

    def test_input_file_reproduces_degradation(self, tmp_path):
        images, model, coeffs = self._setup(n=3)
        ranges = datasetgen.DegradeRanges(seed=2)
        manifest = datasetgen.build_pairs(images, model, coeffs, ranges, tmp_path)
        for i, e in enumerate(manifest.entries):
            noisy = datasetgen.add_realistic_noise(images[i], e.degrade)
            expect = datasetgen.jpeg_degrade(noisy, e.degrade.jpeg_quality)
            got = imgcore.read_image(tmp_path / e.input_path)
            assert np.array_equal(got, expect)

    def test_identity_pipeline_high_psnr(self, tmp_path):
        images = [_natural(48, 48, seed=20 + i) for i in range(4)]
        hists = [datasetgen.histogram(im) for im in images]
        model = datasetgen.cluster(hists, k=1, seed=0)
        ident = RetouchCoefficients(theta1=[0.01], gamma1=[0.0],
                                    theta2=[0.01], gamma2=[0.0], alpha=0.0)
        ranges = datasetgen.DegradeRanges(sigma_c=(0, 0), sigma_s=(0, 0),
                                          jpeg_quality=(95, 95), seed=0)
        manifest = datasetgen.build_pairs(images, model, {0: ident}, ranges, tmp_path)
        for e in manifest.entries:
            inp = imgcore.read_image(tmp_path / e.input_path)
            tgt = imgcore.read_image(tmp_path / e.target_path)
            assert _psnr(inp, tgt) > 35

    def test_rebuild_is_byte_identical(self, tmp_path):
        images, model, coeffs = self._setup(n=4)
        ranges = datasetgen.DegradeRanges(seed=9)
        m1 = datasetgen.build_pairs(images, model, coeffs, ranges, tmp_path / "a")
        m2 = datasetgen.build_pairs(images, model, coeffs, ranges, tmp_path / "b")
        assert m1.to_json() == m2.to_json()
        for e in m1.entries:
            assert (tmp_path / "a" / e.input_path).read_bytes() == \
                   (tmp_path / "b" / e.input_path).read_bytes()

    def test_missing_coefficients_names_cluster(self, tmp_path):
        images, model, coeffs = self._setup(n=6)
        populated = set(model.assignments)
        if len(populated) < 2:  # force the failure regardless of clustering outcome
            pytest.skip("degenerate clustering")
        del coeffs[max(populated)]
        with pytest.raises(ConfigurationError, match=str(max(populated))):
            datasetgen.build_pairs(images, model, coeffs,
                                   datasetgen.DegradeRanges(seed=0), tmp_path)

    def test_manifest_roundtrip_byte_identical(self, tmp_path):
        images, model, coeffs = self._setup(n=3)
        manifest = datasetgen.build_pairs(images, model, coeffs,
                                          datasetgen.DegradeRanges(seed=4), tmp_path)
        text = (tmp_path / "manifest.json").read_text(encoding="utf-8")
        reloaded = datasetgen.DatasetManifest.from_json(text)
        assert reloaded.to_json() == text
