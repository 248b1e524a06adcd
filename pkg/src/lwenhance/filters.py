"""Classical building blocks of the retouching pipeline.

Two algorithms: L0 gradient minimization (edge-preserving smoothing) and
Mertens-style multi-exposure fusion. Both operate on float32 [0, 1] images.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import imgcore
from .errors import InvalidInputError

# Rec. 601 luma weights
_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float32)


@dataclass
class SmoothParams:
    """L0 smoothing strength and inner-loop schedule. lam = 0 is the identity."""

    lam: float = 0.01
    kappa: float = 2.0
    beta_max: float = 1e5

    def __post_init__(self):
        if self.lam < 0:
            raise InvalidInputError(f"smoothing strength must be >= 0, got {self.lam}")
        if self.kappa <= 1:
            raise InvalidInputError(f"kappa must be > 1, got {self.kappa}")


@dataclass
class FusionParams:
    """Exposure-fusion weight exponents and pyramid depth (None = auto)."""

    w_contrast: float = 1.0
    w_saturation: float = 1.0
    w_exposedness: float = 1.0
    sigma_e: float = 0.2
    levels: int | None = None

    def __post_init__(self):
        if min(self.w_contrast, self.w_saturation, self.w_exposedness) < 0:
            raise InvalidInputError("fusion exponents must be >= 0")
        if max(self.w_contrast, self.w_saturation, self.w_exposedness) <= 0:
            raise InvalidInputError("at least one fusion exponent must be > 0")


def _neumann_laplacian_eigenvalues(n: int) -> np.ndarray:
    k = np.arange(n)
    return (2.0 - 2.0 * np.cos(np.pi * k / n)).astype(np.float32)


def l0_smooth(img: np.ndarray, p: SmoothParams) -> np.ndarray:
    """L0 gradient minimization via alternating half-quadratic splitting.

    Repeats {threshold gradients by lam/beta; solve the screened-Poisson
    subproblem in the DCT domain} with beta growing by kappa until it
    exceeds beta_max. Output clamped to [0, 1].
    """
    squeeze = img.ndim == 2
    x = (img[:, :, None] if squeeze else img).astype(np.float32, copy=False)
    if p.lam == 0:
        return img.astype(np.float32, copy=True)

    h_, w_, c_ = x.shape
    lam_y = _neumann_laplacian_eigenvalues(h_)[:, None]
    lam_x = _neumann_laplacian_eigenvalues(w_)[None, :]
    eig = lam_y + lam_x

    target = np.stack([imgcore.dct2(x[:, :, c]) for c in range(c_)], axis=2)
    s = x.astype(np.float32, copy=True)
    beta = 2.0 * p.lam
    while beta <= p.beta_max:
        gh = np.zeros_like(s)
        gv = np.zeros_like(s)
        gh[:, :-1] = s[:, 1:] - s[:, :-1]
        gv[:-1, :] = s[1:, :] - s[:-1, :]
        mag = (gh ** 2 + gv ** 2).sum(axis=2, keepdims=True)
        keep = mag >= p.lam / beta
        gh *= keep
        gv *= keep

        # negative divergence of the thresholded gradient field
        div = np.zeros_like(s)
        div[:, 0] -= gh[:, 0]
        div[:, 1:] += gh[:, :-1] - gh[:, 1:]
        div[0, :] -= gv[0, :]
        div[1:, :] += gv[:-1, :] - gv[1:, :]

        denom = 1.0 + beta * eig
        for c in range(c_):
            num = target[:, :, c] + beta * imgcore.dct2(div[:, :, c])
            s[:, :, c] = imgcore.idct2(num / denom)
        beta *= p.kappa

    s = np.clip(s, 0.0, 1.0)
    return s[:, :, 0] if squeeze else s


def _luma(img: np.ndarray) -> np.ndarray:
    if img.shape[2] == 1:
        return img[:, :, 0]
    return img[:, :, :3] @ _LUMA


def _laplacian_abs(plane: np.ndarray) -> np.ndarray:
    xp = np.pad(plane, 1, mode="edge")
    lap = xp[:-2, 1:-1] + xp[2:, 1:-1] + xp[1:-1, :-2] + xp[1:-1, 2:] - 4.0 * plane
    return np.abs(lap)


def exposedness_weights(img: np.ndarray, p: FusionParams) -> np.ndarray:
    """Per-pixel fusion quality: contrast^wc * saturation^ws * wellexposedness^we."""
    imgcore.ensure_image(img)
    contrast = _laplacian_abs(_luma(img))
    saturation = np.std(img, axis=2)
    wellexp = np.prod(
        np.exp(-((img - 0.5) ** 2) / (2.0 * p.sigma_e ** 2)), axis=2
    )
    w = (
        np.power(contrast, p.w_contrast)
        * np.power(saturation, p.w_saturation)
        * np.power(wellexp, p.w_exposedness)
    )
    return w[:, :, None].astype(np.float32)


def _auto_levels(h: int, w: int) -> int:
    return max(1, int(np.floor(np.log2(min(h, w)))))


def normalized_weights(seq: list[np.ndarray], p: FusionParams) -> list[np.ndarray]:
    """Exposedness weights normalized to a per-pixel partition of unity."""
    if not seq:
        raise InvalidInputError("empty image sequence")
    shape = seq[0].shape
    for im in seq:
        if im.shape != shape:
            raise InvalidInputError(f"sequence shape mismatch: {im.shape} vs {shape}")
    raw = [exposedness_weights(im, p) + 1e-12 for im in seq]
    total = np.sum(raw, axis=0)
    return [(w / total).astype(np.float32) for w in raw]


def mertens_fuse(seq: list[np.ndarray], p: FusionParams) -> np.ndarray:
    """Pyramid-blend an exposure sequence by normalized exposedness weights."""
    weights = normalized_weights(seq, p)
    h, w = seq[0].shape[:2]
    levels = p.levels if p.levels is not None else _auto_levels(h, w)

    blended = None
    for im, wt in zip(seq, weights):
        lap = imgcore.laplacian_pyramid(im, levels)
        gw = imgcore.gaussian_pyramid(wt, levels)
        contrib = [l * g for l, g in zip(lap.levels, gw.levels)]
        if blended is None:
            blended = contrib
        else:
            blended = [b + c for b, c in zip(blended, contrib)]
    fused = imgcore.reconstruct(imgcore.PyramidF(blended, "laplacian"))
    return np.clip(fused, 0.0, 1.0)
