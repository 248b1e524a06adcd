"""Inference pipeline: dual illumination, learned fusion, noise removal.

The interactive variant exposes three knobs: gamma1 boosts under-exposed
regions, gamma2 suppresses over-exposed ones (both by exponentiating the
respective illumination map), and gamma3 gates how much of the predicted
noise correction survives a DCT high-pass.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imgcore, nn
from .errors import CorruptFileError, InvalidInputError

EPSILON = 1e-4  # division guard, shared with the trainer and retoucher

_ILLUMINATION = nn.illumination_net()
_FUSION = nn.fusion_net()
_RESTORATION = nn.restoration_net()

_STAGE1_KEYS = frozenset(
    f"{node.name}/{part}"
    for graph in (_ILLUMINATION, _FUSION)
    for node in graph.conv_nodes()
    for part in ("kernel", "bias")
)
_FUSION_KEYS = frozenset(
    f"{node.name}/{part}"
    for node in _FUSION.conv_nodes()
    for part in ("kernel", "bias")
)
_ALL_KEYS = _STAGE1_KEYS | frozenset(
    f"{node.name}/{part}"
    for node in _RESTORATION.conv_nodes()
    for part in ("kernel", "bias")
)


@dataclass(frozen=True)
class EnhanceParams:
    gamma1: float = 1.0
    gamma2: float = 1.0
    gamma3: float = 1.0

    def __post_init__(self):
        for name in ("gamma1", "gamma2", "gamma3"):
            v = getattr(self, name)
            if not (np.isfinite(v) and 0.0 <= v <= 1.0):
                raise InvalidInputError(f"{name} must be in [0, 1]: {v}")


@dataclass
class EnhanceTrace:
    """Intermediates of one enhancement run; all cropped to the input size."""

    l_fwd: np.ndarray | None = None
    l_inv: np.ndarray | None = None
    i_u: np.ndarray | None = None
    i_o: np.ndarray | None = None
    fusion_weights: np.ndarray | None = None
    r1: np.ndarray | None = None
    noise: np.ndarray | None = None
    timings_ms: dict[str, float] = field(default_factory=dict)


def _resolve_weights(weights, required: frozenset[str]) -> nn.WeightStore:
    if not isinstance(weights, nn.WeightStore):
        weights = nn.load_weights(weights)
    missing = sorted(required - set(weights.tensors))
    if missing:
        raise CorruptFileError(f"weights missing tensors: {missing}")
    return weights


def _check_range(img: np.ndarray, name: str = "image") -> None:
    if not np.isfinite(img).all():
        raise InvalidInputError(f"{name} has non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise InvalidInputError(f"{name} must lie in [0, 1]")


def _pad_to_multiple(img: np.ndarray, multiple: int = 4):
    h, w = img.shape[:2]
    if h < 2 or w < 2:
        raise InvalidInputError(f"image {h}x{w} too small to enhance")
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph or pw:
        img = np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="symmetric")
    return img, (h, w)


def _illumination_pair(ws: nn.WeightStore, x: np.ndarray):
    bright = x.max(axis=3, keepdims=True)
    bright_i = (1.0 - x).max(axis=3, keepdims=True)
    l_fwd = nn.forward(_ILLUMINATION, ws, {"bright": bright})["L"]
    l_inv = nn.forward(_ILLUMINATION, ws, {"bright": bright_i})["L"]
    return l_fwd, l_inv


def _fuse3(ws: nn.WeightStore, a: np.ndarray, b: np.ndarray, c: np.ndarray):
    triple = np.concatenate([a, b, c], axis=3)
    w = nn.forward(_FUSION, ws, {"triple": triple})["W"]
    return w[..., 0:1] * a + w[..., 1:2] * b + w[..., 2:3] * c, w


def _restoration_term(ws: nn.WeightStore, r1: np.ndarray) -> np.ndarray:
    """Noise correction in [0, 1] units; the net itself works in [-1, 1]."""
    scaled = (2.0 * r1 - 1.0).astype(r1.dtype)
    return 0.5 * nn.forward(_RESTORATION, ws, {"image": scaled})["noise"]


def highpass_keep(coeffs: np.ndarray, gamma3: float) -> np.ndarray:
    """Zero all but the high-frequency corner of a DCT plane.

    A coefficient at (u, v) survives iff (u/H + v/W)/2 >= 1 - gamma3, so
    gamma3 = 1 keeps everything and gamma3 = 0 nothing.
    """
    if not 0.0 <= gamma3 <= 1.0:
        raise InvalidInputError(f"gamma3 must be in [0, 1]: {gamma3}")
    h, w = coeffs.shape[:2]
    radial = (np.arange(h)[:, None] / h + np.arange(w)[None, :] / w) / 2.0
    mask = radial >= 1.0 - gamma3
    if coeffs.ndim == 3:
        mask = mask[:, :, None]
    return np.where(mask, coeffs, 0.0).astype(coeffs.dtype)


def _filtered_noise(noise: np.ndarray, gamma3: float) -> np.ndarray:
    out = np.empty_like(noise)
    for c in range(noise.shape[2]):
        kept = highpass_keep(imgcore.dct2(noise[:, :, c]), gamma3)
        out[:, :, c] = imgcore.idct2(kept)
    return out


def _run(img: np.ndarray, ws: nn.WeightStore, p: EnhanceParams,
         dct_round_trip: bool):
    imgcore.ensure_image(img, channels=3)
    _check_range(img)
    padded, (h, w) = _pad_to_multiple(np.ascontiguousarray(img, dtype=np.float32))
    x = padded[None]
    trace = EnhanceTrace()
    tick = time.perf_counter

    t0 = tick()
    l_fwd, l_inv = _illumination_pair(ws, x)
    trace.timings_ms["illumination"] = (tick() - t0) * 1e3

    t0 = tick()
    denom_u = np.power(l_fwd, p.gamma1) + EPSILON
    i_u = np.clip(x / denom_u, 0.0, 1.0).astype(np.float32)
    denom_o = np.power(l_inv, p.gamma2) + EPSILON
    i_o = (1.0 - np.clip((1.0 - x) / denom_o, 0.0, 1.0)).astype(np.float32)
    trace.timings_ms["branches"] = (tick() - t0) * 1e3

    t0 = tick()
    r1, fusion_w = _fuse3(ws, x, i_u, i_o)
    trace.timings_ms["fusion"] = (tick() - t0) * 1e3

    t0 = tick()
    if dct_round_trip and p.gamma3 == 0.0:
        noise = np.zeros_like(r1)  # nothing retained; skip the nets entirely
    else:
        noise = _restoration_term(ws, r1)
        if dct_round_trip:
            noise = _filtered_noise(noise[0], p.gamma3)[None]
    trace.timings_ms["restoration"] = (tick() - t0) * 1e3

    out = np.clip(r1 + noise, 0.0, 1.0).astype(np.float32)[0, :h, :w]
    trace.l_fwd = l_fwd[0, :h, :w, 0]
    trace.l_inv = l_inv[0, :h, :w, 0]
    trace.i_u = i_u[0, :h, :w]
    trace.i_o = i_o[0, :h, :w]
    trace.fusion_weights = fusion_w[0, :h, :w]
    trace.r1 = r1[0, :h, :w]
    trace.noise = noise[0, :h, :w]
    return out, trace


def enhance(img: np.ndarray, weights) -> tuple[np.ndarray, EnhanceTrace]:
    """Fully automatic enhancement; returns the result and its intermediates."""
    ws = _resolve_weights(weights, _ALL_KEYS)
    return _run(img, ws, EnhanceParams(), dct_round_trip=False)


def interactive_enhance(img: np.ndarray, weights, p: EnhanceParams) -> np.ndarray:
    """Enhancement with user-tunable exposure and noise-removal strengths."""
    ws = _resolve_weights(weights, _ALL_KEYS)
    out, _ = _run(img, ws, p, dct_round_trip=True)
    return out


def fuse_exposures(stack: list[np.ndarray], weights) -> np.ndarray:
    """Fold an exposure stack through the learned 3-way fusion.

    Triples are consumed left to right; a trailing single image is fused
    against the running result with their midpoint as the middle input.
    """
    ws = _resolve_weights(weights, _FUSION_KEYS)
    if len(stack) < 2:
        raise InvalidInputError(f"need at least 2 images, got {len(stack)}")
    shapes = {im.shape for im in stack}
    if len(shapes) != 1:
        raise InvalidInputError(f"stack shapes differ: {sorted(shapes)}")
    planes = []
    size = None
    for im in stack:
        imgcore.ensure_image(im, channels=3)
        _check_range(im)
        padded, size = _pad_to_multiple(np.ascontiguousarray(im, dtype=np.float32))
        planes.append(padded[None])
    acc = planes[0]
    i = 1
    while i < len(planes):
        if i + 1 < len(planes):
            acc, _ = _fuse3(ws, acc, planes[i], planes[i + 1])
            i += 2
        else:
            mid = (0.5 * (acc + planes[i])).astype(np.float32)
            acc, _ = _fuse3(ws, acc, mid, planes[i])
            i += 1
    h, w = size
    return np.clip(acc[0, :h, :w], 0.0, 1.0).astype(np.float32)
