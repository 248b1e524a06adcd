"""Training losses with exact analytic gradients.

Every operation returns (scalar, gradient[s]) so the trainer never needs
numeric differentiation. Functions accept (H, W, C) or batched (N, H, W, C)
arrays; scalars are means over every element/window, gradients match the
input shape.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import InvalidInputError


@dataclass
class LossConfig:
    delta: float = 0.5
    omega_i: float = 0.002
    lambda_g: float = 10.0
    omega_g: float = 1e-4
    ssim_c1: float = 1e-4
    ssim_c2: float = 9e-4
    ssim_window: int = 11
    ssim_sigma: float = 1.5

    def __post_init__(self):
        if self.delta <= 0:
            raise InvalidInputError(f"delta must be > 0, got {self.delta}")
        if min(self.omega_i, self.lambda_g, self.omega_g) < 0:
            raise InvalidInputError("loss weights must be >= 0")


def _batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise InvalidInputError(f"expected (H, W, C) or (N, H, W, C), got {x.shape}")


def huber(pred: np.ndarray, target: np.ndarray, delta: float = 0.5):
    """Mean Huber penalty; |e| = delta goes to the linear branch."""
    if pred.shape != target.shape:
        raise InvalidInputError(f"shape mismatch: {pred.shape} vs {target.shape}")
    e = pred - target
    quad = np.abs(e) < delta
    per = np.where(quad, 0.5 * e * e, delta * (np.abs(e) - 0.5 * delta))
    n = e.size
    grad = np.where(quad, e, delta * np.sign(e)) / n
    return float(per.mean()), grad.astype(pred.dtype)


def _gauss_1d(window: int, sigma: float) -> np.ndarray:
    t = np.arange(window) - (window - 1) / 2.0
    k = np.exp(-(t * t) / (2.0 * sigma * sigma))
    return k / k.sum()


def _corr_valid(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    n, h, w, c = x.shape
    t = len(k)
    hv, wv = h - t + 1, w - t + 1
    tmp = np.zeros((n, hv, w, c), dtype=x.dtype)
    for i, kv in enumerate(k):
        tmp += kv * x[:, i:i + hv]
    out = np.zeros((n, hv, wv, c), dtype=x.dtype)
    for i, kv in enumerate(k):
        out += kv * tmp[:, :, i:i + wv]
    return out


def _corr_valid_t(d: np.ndarray, k: np.ndarray, hw: tuple[int, int]) -> np.ndarray:
    n, hv, wv, c = d.shape
    h, w = hw
    tmp = np.zeros((n, hv, w, c), dtype=d.dtype)
    for i, kv in enumerate(k):
        tmp[:, :, i:i + wv] += kv * d
    out = np.zeros((n, h, w, c), dtype=d.dtype)
    for i, kv in enumerate(k):
        out[:, i:i + hv] += kv * tmp
    return out


def ssim_loss(pred: np.ndarray, target: np.ndarray, cfg: LossConfig | None = None):
    """1 - mean windowed SSIM, Gaussian weights, valid windows, per channel."""
    cfg = cfg or LossConfig()
    if pred.shape != target.shape:
        raise InvalidInputError(f"shape mismatch: {pred.shape} vs {target.shape}")
    p, squeeze = _batched(pred)
    q, _ = _batched(target)
    h, w = p.shape[1:3]
    win = cfg.ssim_window
    if h < win or w < win:
        raise InvalidInputError(f"image {h}x{w} smaller than ssim window {win}")
    k = _gauss_1d(win, cfg.ssim_sigma).astype(p.dtype)
    c1, c2 = cfg.ssim_c1, cfg.ssim_c2

    mu_p = _corr_valid(p, k)
    mu_q = _corr_valid(q, k)
    var_p = _corr_valid(p * p, k) - mu_p * mu_p
    var_q = _corr_valid(q * q, k) - mu_q * mu_q
    cov = _corr_valid(p * q, k) - mu_p * mu_q

    a1 = 2 * mu_p * mu_q + c1
    a2 = 2 * cov + c2
    b1 = mu_p * mu_p + mu_q * mu_q + c1
    b2 = var_p + var_q + c2
    s = (a1 * a2) / (b1 * b2)
    loss = float(1.0 - s.mean())

    # per-window coefficients of ds/dp_k = w_k (d1 + q_k d2 + p_k d3)
    inv = 1.0 / (b1 * b2)
    d2 = 2 * a1 * inv
    d3 = -2 * s / b2
    d1 = 2 * mu_q * a2 * inv - 2 * mu_p * s / b1 - mu_q * d2 - mu_p * d3
    grad = -(_corr_valid_t(d1, k, (h, w))
             + q * _corr_valid_t(d2, k, (h, w))
             + p * _corr_valid_t(d3, k, (h, w))) / s.size
    return loss, (grad[0] if squeeze else grad)


class FeatureExtractor(ABC):
    """Differentiable feature map for the perceptual loss."""

    @abstractmethod
    def extract(self, img: np.ndarray):
        """Return (features, vjp) where vjp maps dL/dfeatures to dL/dimg."""


class IdentityExtractor(FeatureExtractor):
    def extract(self, img: np.ndarray):
        return img, lambda g: g


class RandomConvExtractor(FeatureExtractor):
    """Fixed-seed two-layer conv feature map (tanh keeps it FD-friendly)."""

    def __init__(self, channels: int = 3, width: int = 8, seed: int = 0):
        nodes = [
            nn.Node("c1", nn.conv3(channels, width), ["x"]),
            nn.Node("c1_act", nn.act("tanh"), ["c1"]),
            nn.Node("c2", nn.conv3(width, width), ["c1_act"]),
            nn.Node("c2_act", nn.act("tanh"), ["c2"]),
        ]
        self.graph = nn.NetworkGraph(nodes, inputs={"x": channels}, outputs=["c2_act"])
        self.weights = nn.init_weights(self.graph, seed=seed, dtype=np.float64)

    def extract(self, img: np.ndarray):
        x, squeeze = _batched(img)
        w = self.weights.astype(x.dtype) if x.dtype != np.float64 else self.weights
        outs, cache = nn.forward(self.graph, w, {"x": x}, keep_cache=True)

        def vjp(g):
            gb = g[None] if squeeze else g
            _, ig = nn.backward(self.graph, w, cache, {"c2_act": gb})
            return ig["x"][0] if squeeze else ig["x"]

        return (outs["c2_act"][0] if squeeze else outs["c2_act"]), vjp


def perceptual_loss(extractor: FeatureExtractor, pred: np.ndarray, target: np.ndarray):
    """Mean absolute feature difference."""
    fp, vjp = extractor.extract(pred)
    ft, _ = extractor.extract(target)
    diff = fp - ft
    loss = float(np.abs(diff).mean())
    return loss, vjp(np.sign(diff) / diff.size)


def _fwd_diffs(x: np.ndarray):
    return x[:, :, 1:] - x[:, :, :-1], x[:, 1:, :] - x[:, :-1, :]


def _scatter_diff_h(g, shape):
    out = np.zeros(shape, dtype=g.dtype)
    out[:, :, 1:] += g
    out[:, :, :-1] -= g
    return out


def _scatter_diff_v(g, shape):
    out = np.zeros(shape, dtype=g.dtype)
    out[:, 1:, :] += g
    out[:, :-1, :] -= g
    return out


def illumination_smoothness(l_fwd: np.ndarray, l_inv: np.ndarray, img: np.ndarray,
                            cfg: LossConfig | None = None):
    """Structure-aware TV of both illumination maps.

    Image gradients (of the bright channel) gate the penalty: edges in the
    image excuse edges in the maps. The inverted image has identical gradient
    magnitudes, so one weight field serves both maps.
    """
    cfg = cfg or LossConfig()
    if l_fwd.shape != l_inv.shape:
        raise InvalidInputError(f"map shapes differ: {l_fwd.shape} vs {l_inv.shape}")
    lf, squeeze = _batched(l_fwd if l_fwd.ndim >= 3 else l_fwd[:, :, None])
    li, _ = _batched(l_inv if l_inv.ndim >= 3 else l_inv[:, :, None])
    im, _ = _batched(img)
    if lf.shape[1:3] != im.shape[1:3]:
        raise InvalidInputError(f"map {lf.shape[1:3]} vs image {im.shape[1:3]}")
    bright = im.max(axis=3, keepdims=True)
    gh, gv = _fwd_diffs(bright)
    wh = np.exp(-cfg.lambda_g * np.abs(gh))
    wv = np.exp(-cfg.lambda_g * np.abs(gv))

    n = lf[0, :, :, 0].size * lf.shape[0]
    total = 0.0
    grads = []
    for lmap in (lf, li):
        dh, dv = _fwd_diffs(lmap)
        total += float((np.abs(dh) * wh).sum() + (np.abs(dv) * wv).sum()) / n
        g = (_scatter_diff_h(np.sign(dh) * wh, lmap.shape)
             + _scatter_diff_v(np.sign(dv) * wv, lmap.shape)) / n
        grads.append(g)
    gf, gi = grads
    if squeeze:
        gf, gi = gf[0], gi[0]
        if l_fwd.ndim == 2:
            gf, gi = gf[:, :, 0], gi[:, :, 0]
    return total, gf.astype(l_fwd.dtype), gi.astype(l_inv.dtype)


def tv_global(img: np.ndarray):
    """Mean absolute forward difference over both axes."""
    x, squeeze = _batched(img)
    dh, dv = _fwd_diffs(x)
    n = x.size
    loss = float((np.abs(dh).sum() + np.abs(dv).sum()) / n)
    grad = (_scatter_diff_h(np.sign(dh), x.shape)
            + _scatter_diff_v(np.sign(dv), x.shape)) / n
    grad = grad.astype(img.dtype)
    return loss, (grad[0] if squeeze else grad)


def enhancement_loss(pred, target, l_fwd, l_inv, img, cfg: LossConfig | None = None,
                     extractor: FeatureExtractor | None = None):
    """Huber + perceptual + SSIM on the fused image, plus weighted map smoothness.

    Returns (scalar, grad wrt pred, grad wrt l_fwd, grad wrt l_inv).
    """
    cfg = cfg or LossConfig()
    lh, gh = huber(pred, target, cfg.delta)
    ls, gs = ssim_loss(pred, target, cfg)
    total = lh + ls
    gp = gh + gs
    if extractor is not None:
        lp, gpp = perceptual_loss(extractor, pred, target)
        total += lp
        gp = gp + gpp
    li, glf, gli = illumination_smoothness(l_fwd, l_inv, img, cfg)
    total += cfg.omega_i * li
    return total, gp, cfg.omega_i * glf, cfg.omega_i * gli


def restoration_loss(pred, target, cfg: LossConfig | None = None,
                     extractor: FeatureExtractor | None = None):
    """Huber + perceptual + SSIM + weighted global TV of the prediction."""
    cfg = cfg or LossConfig()
    lh, gh = huber(pred, target, cfg.delta)
    ls, gs = ssim_loss(pred, target, cfg)
    total = lh + ls
    gp = gh + gs
    if extractor is not None:
        lp, gpp = perceptual_loss(extractor, pred, target)
        total += lp
        gp = gp + gpp
    lt, gt = tv_global(pred)
    total += cfg.omega_g * lt
    return total, gp + cfg.omega_g * gt
