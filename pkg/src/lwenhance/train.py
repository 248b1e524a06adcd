"""Two-stage trainer for the enhancement pipeline.

Stage 1 fits the illumination and fusion nets end to end against the
retouched targets; stage 2 freezes them and fits the noise-removal net on
what is left. The three nets use disjoint tensor names, so a single weight
store (and a single weights file) carries any subset of them.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imgcore, losses, nn
from .datasetgen import DatasetManifest
from .errors import ConfigurationError, TrainingError

EPSILON = 1e-4  # division guard shared with the inference pipeline

# fixed feature weights keep the perceptual term a pure function of its inputs
_EXTRACTOR_SEED = 71

_ILLUMINATION = nn.illumination_net()
_FUSION = nn.fusion_net()
_RESTORATION = nn.restoration_net()


@dataclass
class TrainConfig:
    stage: int = 1
    alpha: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 8
    patch: int = 64
    epochs: int = 10
    decay: float = 0.98
    plateau_factor: float = 0.5
    patience: int = 3
    min_lr: float = 1e-6
    augmentation: bool = True
    perceptual: bool = True
    seed: int = 0
    steps_per_epoch: int | None = None  # None: one pass over the pairs

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ConfigurationError(f"stage must be 1 or 2: {self.stage}")
        if not self.alpha > 0:
            raise ConfigurationError(f"alpha must be > 0: {self.alpha}")
        for name in ("beta1", "beta2"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ConfigurationError(f"{name} must be in (0, 1): {v}")
        if not self.adam_eps > 0:
            raise ConfigurationError(f"adam_eps must be > 0: {self.adam_eps}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1: {self.batch_size}")
        if self.patch < 4 or self.patch % 4:
            raise ConfigurationError(f"patch must be a positive multiple of 4: {self.patch}")
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1: {self.epochs}")
        if not 0 < self.decay <= 1:
            raise ConfigurationError(f"decay must be in (0, 1]: {self.decay}")
        if not 0 < self.plateau_factor <= 1:
            raise ConfigurationError(f"plateau_factor must be in (0, 1]: {self.plateau_factor}")
        if self.patience < 1:
            raise ConfigurationError(f"patience must be >= 1: {self.patience}")
        if not self.min_lr > 0:
            raise ConfigurationError(f"min_lr must be > 0: {self.min_lr}")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ConfigurationError(f"steps_per_epoch must be >= 1: {self.steps_per_epoch}")


@dataclass
class TrainReport:
    stage: int
    initial_loss: float
    epoch_losses: list[float] = field(default_factory=list)
    learning_rates: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    weights_path: str | None = None

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1] if self.epoch_losses else self.initial_loss

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "initial_loss": self.initial_loss,
            "final_loss": self.final_loss,
            "epoch_losses": self.epoch_losses,
            "learning_rates": self.learning_rates,
            "epoch_seconds": self.epoch_seconds,
            "weights_path": self.weights_path,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")


# ---------------------------------------------------------------------------
# Optimizer and schedule
# ---------------------------------------------------------------------------


class AdamState:
    """First/second moment accumulators, keyed like the weight store."""

    def __init__(self):
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}


def adam_step(params: nn.WeightStore, grads: nn.WeightStore, state: AdamState,
              t: int, cfg: TrainConfig, lr: float | None = None) -> None:
    """Bias-corrected update in place; touches only keys present in grads."""
    if t < 1:
        raise ConfigurationError(f"step index must be >= 1: {t}")
    if lr is None:
        lr = cfg.alpha
    for key, g in grads.tensors.items():
        p = params.tensors[key]
        if g.shape != p.shape:
            raise ConfigurationError(f"gradient shape mismatch for {key}")
        m = state.m.get(key)
        if m is None:
            m = np.zeros_like(p)
            state.m[key] = m
            state.v[key] = np.zeros_like(p)
        v = state.v[key]
        m *= cfg.beta1
        m += (1 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1 - cfg.beta2) * g * g
        m_hat = m / (1 - cfg.beta1 ** t)
        v_hat = v / (1 - cfg.beta2 ** t)
        p -= (lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)).astype(p.dtype)


def plateau_fires(history: list[float], patience: int) -> int:
    """Count plateau events: no >=0.1% improvement for `patience` epochs."""
    best = np.inf
    streak = 0
    fires = 0
    for loss in history:
        if loss < best * (1 - 1e-3):
            best = loss
            streak = 0
        else:
            streak += 1
            if streak >= patience:
                fires += 1
                streak = 0
    return fires


def schedule_lr(epoch: int, history: list[float], cfg: TrainConfig) -> float:
    """Per-epoch exponential decay, halved on each plateau, floored."""
    lr = cfg.alpha * cfg.decay ** epoch * cfg.plateau_factor ** plateau_fires(history, cfg.patience)
    return max(lr, cfg.min_lr)


# ---------------------------------------------------------------------------
# Data pipeline
# ---------------------------------------------------------------------------


def _resolve(root: Path, rel: str) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else root / p


def _load_pairs(manifest: DatasetManifest, root: Path) -> list[tuple[np.ndarray, np.ndarray]]:
    if not manifest.entries:
        raise ConfigurationError("manifest has no training pairs")
    pairs = []
    for e in manifest.entries:
        x = imgcore.read_image(_resolve(root, e.input_path))
        t = imgcore.read_image(_resolve(root, e.target_path))
        if x.shape != t.shape:
            raise ConfigurationError(
                f"pair shape mismatch: {e.input_path} {x.shape} vs {e.target_path} {t.shape}")
        pairs.append((x, t))
    return pairs


def augment_pair(x: np.ndarray, t: np.ndarray, patch: int,
                 rng: np.random.Generator | None, augment: bool = True):
    """Crop (random or centered) plus flips/rotations applied to both images."""
    h, w = x.shape[:2]
    if h < patch or w < patch:
        raise ConfigurationError(f"image {h}x{w} smaller than patch {patch}")
    if augment:
        top = int(rng.integers(0, h - patch + 1))
        left = int(rng.integers(0, w - patch + 1))
    else:
        top = (h - patch) // 2
        left = (w - patch) // 2
    x = x[top:top + patch, left:left + patch]
    t = t[top:top + patch, left:left + patch]
    if augment:
        if rng.random() < 0.5:
            x, t = x[:, ::-1], t[:, ::-1]
        if rng.random() < 0.5:
            x, t = x[::-1], t[::-1]
        k = int(rng.integers(0, 4))
        if k:
            x, t = np.rot90(x, k), np.rot90(t, k)
    return (np.ascontiguousarray(x, dtype=np.float32),
            np.ascontiguousarray(t, dtype=np.float32))


def _batch_indices(n: int, cfg: TrainConfig, epoch: int) -> list[np.ndarray]:
    rng = np.random.default_rng((cfg.seed, 7919, epoch))
    if cfg.steps_per_epoch is None:
        order = rng.permutation(n)
        return [order[i:i + cfg.batch_size] for i in range(0, n, cfg.batch_size)]
    return [rng.integers(0, n, size=cfg.batch_size) for _ in range(cfg.steps_per_epoch)]


def _make_batch(pairs, idxs, cfg: TrainConfig, epoch: int, augment: bool):
    xs, ts = [], []
    for slot, i in enumerate(idxs):
        rng = (np.random.default_rng((cfg.seed, 104729, epoch, int(i), slot))
               if augment else None)
        x, t = augment_pair(*pairs[int(i)], cfg.patch, rng, augment)
        xs.append(x)
        ts.append(t)
    return np.stack(xs), np.stack(ts)


# ---------------------------------------------------------------------------
# Differentiable pipeline glue
# ---------------------------------------------------------------------------


def init_stage1_weights(seed: int) -> nn.WeightStore:
    tensors = dict(nn.init_weights(_ILLUMINATION, seed=seed).tensors)
    tensors.update(nn.init_weights(_FUSION, seed=seed + 1).tensors)
    return nn.WeightStore(tensors)


def init_full_weights(seed: int = 0) -> nn.WeightStore:
    """All three nets from one seed, matching the staged derivations."""
    tensors = dict(init_stage1_weights(seed).tensors)
    tensors.update(nn.init_weights(_RESTORATION, seed=seed + 2).tensors)
    return nn.WeightStore(tensors)


def stage1_apply(ws: nn.WeightStore, img: np.ndarray, keep_cache: bool = False) -> dict:
    """Dual illumination -> exposure branches -> learned fusion, batched."""
    bright = img.max(axis=3, keepdims=True)
    inv = (1.0 - img).astype(img.dtype)
    bright_i = inv.max(axis=3, keepdims=True)
    if keep_cache:
        out_f, cache_f = nn.forward(_ILLUMINATION, ws, {"bright": bright}, keep_cache=True)
        out_i, cache_i = nn.forward(_ILLUMINATION, ws, {"bright": bright_i}, keep_cache=True)
    else:
        out_f = nn.forward(_ILLUMINATION, ws, {"bright": bright})
        out_i = nn.forward(_ILLUMINATION, ws, {"bright": bright_i})
        cache_f = cache_i = None
    l_fwd, l_inv = out_f["L"], out_i["L"]
    raw_u = img / (l_fwd + EPSILON)
    i_u = np.clip(raw_u, 0.0, 1.0).astype(img.dtype)
    raw_o = inv / (l_inv + EPSILON)
    i_o = (1.0 - np.clip(raw_o, 0.0, 1.0)).astype(img.dtype)
    triple = np.concatenate([img, i_u, i_o], axis=3)
    if keep_cache:
        out_w, cache_w = nn.forward(_FUSION, ws, {"triple": triple}, keep_cache=True)
    else:
        out_w = nn.forward(_FUSION, ws, {"triple": triple})
        cache_w = None
    w = out_w["W"]
    r1 = w[..., 0:1] * img + w[..., 1:2] * i_u + w[..., 2:3] * i_o
    return {
        "l_fwd": l_fwd, "l_inv": l_inv, "raw_u": raw_u, "i_u": i_u,
        "raw_o": raw_o, "i_o": i_o, "weights": w, "r1": r1,
        "cache_fwd": cache_f, "cache_inv": cache_i, "cache_fusion": cache_w,
    }


def stage1_loss_and_grads(ws: nn.WeightStore, img: np.ndarray, target: np.ndarray,
                          loss_cfg: losses.LossConfig | None = None,
                          extractor: losses.FeatureExtractor | None = None):
    """Enhancement loss of the fused output plus its weight-store gradient."""
    s = stage1_apply(ws, img, keep_cache=True)
    l_fwd, l_inv, w, r1 = s["l_fwd"], s["l_inv"], s["weights"], s["r1"]
    loss, gp, glf, gli = losses.enhancement_loss(
        r1, target, l_fwd, l_inv, img, loss_cfg, extractor)

    gw = np.concatenate([
        (gp * img).sum(axis=3, keepdims=True),
        (gp * s["i_u"]).sum(axis=3, keepdims=True),
        (gp * s["i_o"]).sum(axis=3, keepdims=True),
    ], axis=3).astype(img.dtype)
    wg_fus, ig_fus = nn.backward(_FUSION, ws, s["cache_fusion"], {"W": gw})
    g_triple = ig_fus["triple"]
    g_iu = gp * w[..., 1:2] + g_triple[..., 3:6]
    g_io = gp * w[..., 2:3] + g_triple[..., 6:9]

    # clamp gates, then the quotient rule back onto each illumination map
    inv = (1.0 - img).astype(img.dtype)
    m_u = ((s["raw_u"] > 0.0) & (s["raw_u"] < 1.0)).astype(img.dtype)
    g_raw_u = g_iu * m_u
    g_l = (g_raw_u * (-img) / (l_fwd + EPSILON) ** 2).sum(axis=3, keepdims=True) + glf
    m_o = ((s["raw_o"] > 0.0) & (s["raw_o"] < 1.0)).astype(img.dtype)
    g_raw_o = -g_io * m_o
    g_li = (g_raw_o * (-inv) / (l_inv + EPSILON) ** 2).sum(axis=3, keepdims=True) + gli

    wg_if, _ = nn.backward(_ILLUMINATION, ws, s["cache_fwd"], {"L": g_l.astype(img.dtype)})
    wg_ii, _ = nn.backward(_ILLUMINATION, ws, s["cache_inv"], {"L": g_li.astype(img.dtype)})
    grads = dict(wg_fus.tensors)
    for key, g in wg_if.tensors.items():
        grads[key] = g + wg_ii.tensors[key]
    return loss, nn.WeightStore(grads), r1


def stage2_loss_and_grads(ws: nn.WeightStore, img: np.ndarray, target: np.ndarray,
                          loss_cfg: losses.LossConfig | None = None,
                          extractor: losses.FeatureExtractor | None = None):
    """Restoration loss through the frozen stage-1 pipeline; grads for the
    noise-removal net only. The net sees and emits [-1, 1]-scaled values."""
    r1 = stage1_apply(ws, img)["r1"]
    out, cache = nn.forward(_RESTORATION, ws, {"image": (2.0 * r1 - 1.0).astype(img.dtype)},
                            keep_cache=True)
    noise = out["noise"]
    pred = r1 + 0.5 * noise
    loss, gr = losses.restoration_loss(pred, target, loss_cfg, extractor)
    wg, _ = nn.backward(_RESTORATION, ws, cache, {"noise": (0.5 * gr).astype(img.dtype)})
    return loss, wg, pred


# ---------------------------------------------------------------------------
# Training loops
# ---------------------------------------------------------------------------


def _eval_loss(pairs, ws, step_fn, cfg: TrainConfig) -> float:
    n = len(pairs)
    total, count = 0.0, 0
    for start in range(0, n, cfg.batch_size):
        idxs = np.arange(start, min(start + cfg.batch_size, n))
        x, t = _make_batch(pairs, idxs, cfg, epoch=-1, augment=False)
        loss, _, _ = step_fn(ws, x, t)
        total += loss * len(idxs)
        count += len(idxs)
    return total / count


def _check_finite(ws: nn.WeightStore, keys, epoch: int, step: int) -> None:
    for key in keys:
        if not np.isfinite(ws.tensors[key]).all():
            raise TrainingError(f"non-finite weights in {key} at epoch {epoch} step {step}")


def _train_loop(pairs, ws: nn.WeightStore, step_fn, cfg: TrainConfig,
                stage: int, weights_out) -> tuple[nn.WeightStore, TrainReport]:
    report = TrainReport(stage=stage, initial_loss=_eval_loss(pairs, ws, step_fn, cfg))
    state = AdamState()
    t = 0
    for epoch in range(cfg.epochs):
        lr = schedule_lr(epoch, report.epoch_losses, cfg)
        started = time.perf_counter()
        epoch_losses = []
        for step, idxs in enumerate(_batch_indices(len(pairs), cfg, epoch)):
            x, tgt = _make_batch(pairs, idxs, cfg, epoch, cfg.augmentation)
            loss, grads, _ = step_fn(ws, x, tgt)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch} step {step}: {loss}")
            t += 1
            adam_step(ws, grads, state, t, cfg, lr)
            _check_finite(ws, grads.tensors.keys(), epoch, step)
            epoch_losses.append(loss)
        report.epoch_losses.append(float(np.mean(epoch_losses)))
        report.learning_rates.append(lr)
        report.epoch_seconds.append(time.perf_counter() - started)
    if weights_out is not None:
        nn.save_weights(ws, weights_out)
        report.weights_path = str(weights_out)
    return ws, report


def _make_step_fn(cfg: TrainConfig, stage_fn):
    loss_cfg = losses.LossConfig()
    extractor = losses.RandomConvExtractor(seed=_EXTRACTOR_SEED) if cfg.perceptual else None

    def step(ws, x, t):
        return stage_fn(ws, x, t, loss_cfg, extractor)

    return step


def train_stage1(manifest_path, cfg: TrainConfig,
                 weights_out=None) -> tuple[nn.WeightStore, TrainReport]:
    """Fit illumination + fusion jointly against the retouched targets."""
    manifest = DatasetManifest.load(manifest_path)
    pairs = _load_pairs(manifest, Path(manifest_path).parent)
    ws = init_stage1_weights(cfg.seed)
    return _train_loop(pairs, ws, _make_step_fn(cfg, stage1_loss_and_grads),
                       cfg, 1, weights_out)


def train_stage2(manifest_path, stage1_weights, cfg: TrainConfig,
                 weights_out=None) -> tuple[nn.WeightStore, TrainReport]:
    """Fit the noise-removal net on top of the frozen stage-1 pipeline."""
    manifest = DatasetManifest.load(manifest_path)
    pairs = _load_pairs(manifest, Path(manifest_path).parent)
    frozen = nn.load_weights(stage1_weights)
    missing = sorted(set(init_stage1_weights(0).tensors) - set(frozen.tensors))
    if missing:
        raise ConfigurationError(f"stage-1 weights missing tensors: {missing}")
    tensors = {k: v.copy() for k, v in frozen.tensors.items()}
    tensors.update(nn.init_weights(_RESTORATION, seed=cfg.seed + 2).tensors)
    ws = nn.WeightStore(tensors)
    return _train_loop(pairs, ws, _make_step_fn(cfg, stage2_loss_and_grads),
                       cfg, 2, weights_out)
