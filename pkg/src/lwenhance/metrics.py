"""Full-reference quality metrics: PSNR, SSIM, and lightness order error."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import enhance as enhance_mod
from . import imgcore, losses
from .datasetgen import DatasetManifest
from .errors import ConfigurationError, InvalidInputError


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10*log10(1/MSE) for [0, 1] images; identical inputs give +inf."""
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * math.log10(1.0 / mse)


def ssim(a: np.ndarray, b: np.ndarray, cfg: losses.LossConfig | None = None) -> float:
    """Mean windowed structural similarity; shares the loss kernel exactly."""
    loss, _ = losses.ssim_loss(a, b, cfg)
    return 1.0 - loss


def _lightness_plane(img: np.ndarray) -> np.ndarray:
    if img.ndim == 3:
        return img.max(axis=2)
    if img.ndim == 2:
        return img
    raise InvalidInputError(f"expected (H, W) or (H, W, C), got {img.shape}")


def _downsample_nearest(plane: np.ndarray, bound: int = 100) -> np.ndarray:
    h, w = plane.shape
    k = -(-max(h, w) // bound)  # ceil
    return plane[::k, ::k] if k > 1 else plane


def loe(original: np.ndarray, enhanced: np.ndarray, bound: int = 100) -> float:
    """Count of relative-lightness order reversals, normalized by pixel count.

    Both lightness planes are stride-downsampled so the longer side is at
    most `bound` pixels. Not symmetric in its arguments: the original defines
    the reference order.
    """
    if original.shape != enhanced.shape:
        raise InvalidInputError(f"shape mismatch: {original.shape} vs {enhanced.shape}")
    lo = _downsample_nearest(_lightness_plane(original), bound).ravel()
    le = _downsample_nearest(_lightness_plane(enhanced), bound).ravel()
    m = lo.size
    errors = 0
    chunk = max(1, 2 ** 22 // m)
    for start in range(0, m, chunk):
        sl = slice(start, min(start + chunk, m))
        ord_o = lo[sl, None] > lo[None, :]
        ord_e = le[sl, None] > le[None, :]
        errors += int(np.count_nonzero(ord_o != ord_e))
    return errors / m


def _json_value(v: float):
    # Strict JSON has no Infinity/NaN literals; keep sentinels as strings.
    return v if math.isfinite(v) else str(v)


@dataclass
class MetricReport:
    """Per-image scores plus dataset means for one evaluation run."""

    psnr_values: list[float] = field(default_factory=list)
    ssim_values: list[float] = field(default_factory=list)
    loe_values: list[float] = field(default_factory=list)
    input_psnr_values: list[float] = field(default_factory=list)

    @staticmethod
    def _mean(values: list[float]) -> float:
        return float(np.mean(values)) if values else float("nan")

    def to_dict(self) -> dict:
        return {
            "count": len(self.psnr_values),
            "per_image": [
                {"psnr": _json_value(p), "ssim": _json_value(s),
                 "loe": _json_value(l), "input_psnr": _json_value(ip)}
                for p, s, l, ip in zip(self.psnr_values, self.ssim_values,
                                       self.loe_values, self.input_psnr_values)
            ],
            "mean_psnr": _json_value(self._mean(self.psnr_values)),
            "mean_ssim": _json_value(self._mean(self.ssim_values)),
            "mean_loe": _json_value(self._mean(self.loe_values)),
            "mean_input_psnr": _json_value(self._mean(self.input_psnr_values)),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")


def evaluate_manifest(manifest_path, weights) -> MetricReport:
    """Enhance every manifest input and score it against its target."""
    manifest = DatasetManifest.load(manifest_path)
    if not manifest.entries:
        raise ConfigurationError("manifest has no pairs to evaluate")
    root = Path(manifest_path).parent
    report = MetricReport()
    for entry in manifest.entries:
        inp = imgcore.read_image(root / entry.input_path)
        target = imgcore.read_image(root / entry.target_path)
        out, _ = enhance_mod.enhance(inp, weights)
        report.psnr_values.append(psnr(out, target))
        report.ssim_values.append(ssim(out, target))
        report.loe_values.append(loe(inp, out))
        report.input_psnr_values.append(psnr(inp, target))
    return report
