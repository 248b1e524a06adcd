"""Paired training-data synthesis.

Images are grouped by brightness histogram with k-means so one hand-tuned
coefficient set can retouch a whole group consistently. Each pair is
(degraded input, retouched target) where degradation is heteroscedastic
sensor noise in linear space followed by JPEG compression.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imgcore
from .errors import ConfigurationError, InvalidInputError
from .retouch import RetouchCoefficients, retouch

HISTOGRAM_BINS = 256
_GAMMA = 2.2


def histogram(img: np.ndarray) -> np.ndarray:
    """256-bin normalized histogram of the bright channel."""
    v = imgcore.bright_channel(img)
    idx = np.floor(255.999 * v).astype(np.int64).ravel()
    counts = np.bincount(idx, minlength=HISTOGRAM_BINS).astype(np.float64)
    return counts / counts.sum()


@dataclass
class ClusterModel:
    """k-means model over brightness histograms.

    assignments[i] is the cluster of the i-th histogram passed to cluster().
    """

    k: int
    centroids: np.ndarray
    assignments: list[int]
    seed: int
    inertia_history: list[float] = field(default_factory=list)

    def assign(self, hist: np.ndarray) -> int:
        d = ((self.centroids - hist[None, :]) ** 2).sum(axis=1)
        return int(np.argmin(d))

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "seed": self.seed,
            "centroids": [[float(v) for v in c] for c in self.centroids],
            "assignments": [int(a) for a in self.assignments],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterModel":
        try:
            return cls(
                k=int(d["k"]),
                centroids=np.asarray(d["centroids"], dtype=np.float64),
                assignments=[int(a) for a in d["assignments"]],
                seed=int(d["seed"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"bad cluster model: {exc}") from None


def _kmeanspp_seeds(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]), dtype=np.float64)
    centroids[0] = x[rng.integers(n)]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[j] = x[rng.integers(n)]
            continue
        centroids[j] = x[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((x - centroids[j]) ** 2).sum(axis=1))
    return centroids


def cluster(histograms: list[np.ndarray], k: int, seed: int = 0) -> ClusterModel:
    """Lloyd's k-means with k-means++ seeding; stops at an assignment fixpoint
    or after 100 iterations."""
    n = len(histograms)
    if not 1 <= k <= n:
        raise InvalidInputError(f"k must be in [1, {n}], got {k}")
    x = np.stack([np.asarray(h, dtype=np.float64) for h in histograms])
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_seeds(x, k, rng)

    assignments = np.full(n, -1, dtype=np.int64)
    history: list[float] = []
    for _ in range(100):
        d2 = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assign = d2.argmin(axis=1)
        history.append(float(d2[np.arange(n), new_assign].sum()))
        if np.array_equal(new_assign, assignments):
            break
        assignments = new_assign
        for j in range(k):
            members = x[assignments == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
    return ClusterModel(k, centroids, [int(a) for a in assignments], seed, history)


@dataclass
class DegradeParams:
    """One image's degradation draw."""

    sigma_s: float = 0.0
    sigma_c: float = 0.0
    jpeg_quality: int = 95
    seed: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.sigma_s) and self.sigma_s >= 0):
            raise InvalidInputError(f"sigma_s must be finite and >= 0: {self.sigma_s}")
        if not (np.isfinite(self.sigma_c) and self.sigma_c >= 0):
            raise InvalidInputError(f"sigma_c must be finite and >= 0: {self.sigma_c}")
        if not 1 <= self.jpeg_quality <= 100:
            raise InvalidInputError(f"jpeg_quality must be in [1, 100]: {self.jpeg_quality}")

    def to_dict(self) -> dict:
        return {
            "sigma_s": float(self.sigma_s),
            "sigma_c": float(self.sigma_c),
            "jpeg_quality": int(self.jpeg_quality),
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DegradeParams":
        return cls(**d)


@dataclass
class DegradeRanges:
    """Per-image uniform sampling ranges for degradation."""

    sigma_c: tuple[float, float] = (0.0, 0.06)
    sigma_s: tuple[float, float] = (0.0, 0.03)
    jpeg_quality: tuple[int, int] = (60, 95)
    seed: int = 0

    def __post_init__(self):
        for name in ("sigma_c", "sigma_s"):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi) and 0 <= lo <= hi):
                raise InvalidInputError(f"{name} range must satisfy 0 <= lo <= hi: ({lo}, {hi})")
        qlo, qhi = self.jpeg_quality
        if not 1 <= qlo <= qhi <= 100:
            raise InvalidInputError(f"jpeg_quality range must be within [1, 100]: ({qlo}, {qhi})")

    def sample(self, index: int) -> DegradeParams:
        per_image = self.seed ^ index
        rng = np.random.default_rng(per_image)
        sigma_s = float(rng.uniform(*self.sigma_s))
        sigma_c = float(rng.uniform(*self.sigma_c))
        quality = int(rng.integers(self.jpeg_quality[0], self.jpeg_quality[1] + 1))
        noise_seed = int(rng.integers(0, 2**31 - 1))
        return DegradeParams(sigma_s, sigma_c, quality, noise_seed)


def add_realistic_noise(img: np.ndarray, p: DegradeParams) -> np.ndarray:
    """Heteroscedastic Gaussian noise in gamma-linearized space.

    var = sigma_s * x_lin + sigma_c^2 per pixel; deterministic from p.seed.
    """
    imgcore.ensure_image(img)
    x = img.astype(np.float32) ** _GAMMA
    rng = np.random.default_rng(p.seed)
    std = np.sqrt(p.sigma_s * x + p.sigma_c ** 2, dtype=np.float32)
    noisy = x + rng.standard_normal(x.shape, dtype=np.float32) * std
    out = np.clip(noisy, 0.0, None) ** (1.0 / _GAMMA)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def jpeg_degrade(img: np.ndarray, quality: int) -> np.ndarray:
    """Round trip through baseline JPEG at the given quality."""
    return imgcore.decode_image(imgcore.encode_jpeg(img, quality))


@dataclass
class ManifestEntry:
    input_path: str
    target_path: str
    cluster_id: int
    coefficients_ref: str
    degrade: DegradeParams

    def to_dict(self) -> dict:
        return {
            "input_path": self.input_path,
            "target_path": self.target_path,
            "cluster_id": int(self.cluster_id),
            "coefficients_ref": self.coefficients_ref,
            "degrade": self.degrade.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestEntry":
        return cls(
            input_path=d["input_path"],
            target_path=d["target_path"],
            cluster_id=int(d["cluster_id"]),
            coefficients_ref=d["coefficients_ref"],
            degrade=DegradeParams.from_dict(d["degrade"]),
        )


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    version: str = "1"

    def to_json(self) -> str:
        payload = {"version": self.version, "entries": [e.to_dict() for e in self.entries]}
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        try:
            d = json.loads(text)
            return cls(
                entries=[ManifestEntry.from_dict(e) for e in d["entries"]],
                version=str(d["version"]),
            )
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ConfigurationError(f"bad manifest: {exc}") from None

    def save(self, path: str | Path) -> None:
        # Atomic: a crashed build must not leave a half-written manifest.
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(self.to_json(), encoding="utf-8")
        tmp.replace(path)

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def build_pairs(
    images: list[np.ndarray],
    model: ClusterModel,
    coeffs: dict[int, RetouchCoefficients],
    ranges: DegradeRanges,
    out_dir: str | Path,
) -> DatasetManifest:
    """Render (degraded input, retouched target) pairs and a manifest.

    The input JPEG on disk holds exactly the bytes used for degradation, so
    reading it back reproduces the degraded image bit for bit.
    """
    out = Path(out_dir)
    cluster_ids = [model.assign(histogram(img)) for img in images]
    missing = sorted({c for c in cluster_ids if c not in coeffs})
    if missing:
        raise ConfigurationError(f"no coefficients for populated clusters: {missing}")

    (out / "inputs").mkdir(parents=True, exist_ok=True)
    (out / "targets").mkdir(parents=True, exist_ok=True)
    (out / "coefficients.json").write_text(
        json.dumps({str(c): coeffs[c].to_dict() for c in sorted(set(cluster_ids))},
                   indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )

    entries = []
    for i, (img, cid) in enumerate(zip(images, cluster_ids)):
        params = ranges.sample(i)
        target = retouch(img, coeffs[cid])
        noisy = add_realistic_noise(img, params)
        jpeg_bytes = imgcore.encode_jpeg(noisy, params.jpeg_quality)

        input_rel = f"inputs/{i:06d}.jpg"
        target_rel = f"targets/{i:06d}.png"
        (out / input_rel).write_bytes(jpeg_bytes)
        imgcore.write_png(target, out / target_rel)
        entries.append(ManifestEntry(input_rel, target_rel, cid,
                                     f"coefficients.json#{cid}", params))

    manifest = DatasetManifest(entries)
    manifest.save(out / "manifest.json")
    return manifest
