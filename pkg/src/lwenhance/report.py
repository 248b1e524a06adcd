"""Render evaluation and training reports to JSON, CSV, and PNG figures."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")  # file output only; no display in headless runs
import matplotlib.pyplot as plt
import numpy as np

from .metrics import MetricReport
from .train import TrainReport


def _plottable(values: list[float]) -> np.ndarray:
    # inf sentinels (identical images) would blow up axis limits; gap them.
    return np.array([v if math.isfinite(v) else np.nan for v in values])


def _csv_cell(v: float) -> str:
    return f"{v:.6f}" if math.isfinite(v) else str(v)


def write_eval_report(report: MetricReport, out_json) -> dict[str, Path]:
    """Write report JSON plus a CSV table and figures next to it.

    `out_json` names the JSON file; the CSV and PNGs share its stem and
    directory. Returns the paths actually written, keyed by kind.
    """
    out_json = Path(out_json)
    out_json.parent.mkdir(parents=True, exist_ok=True)
    report.save(out_json)

    csv_path = out_json.with_suffix(".csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "psnr", "ssim", "loe", "input_psnr"])
        rows = zip(report.psnr_values, report.ssim_values,
                   report.loe_values, report.input_psnr_values)
        for i, (p, s, l, ip) in enumerate(rows):
            writer.writerow([i, _csv_cell(p), _csv_cell(s),
                             _csv_cell(l), _csv_cell(ip)])

    metrics_png = out_json.with_name(out_json.stem + "_metrics.png")
    gain_png = out_json.with_name(out_json.stem + "_psnr_gain.png")
    _plot_eval_metrics(report, metrics_png)
    _plot_psnr_gain(report, gain_png)
    return {"json": out_json, "csv": csv_path,
            "metrics_png": metrics_png, "psnr_gain_png": gain_png}


def _plot_eval_metrics(report: MetricReport, path: Path) -> None:
    idx = np.arange(len(report.psnr_values))
    fig, axes = plt.subplots(3, 1, figsize=(8, 9), sharex=True)

    psnr_v = _plottable(report.psnr_values)
    in_v = _plottable(report.input_psnr_values)
    axes[0].plot(idx, psnr_v, "o-", label="enhanced", color="tab:blue")
    axes[0].plot(idx, in_v, "x--", label="input", color="tab:gray")
    if np.isfinite(psnr_v).any():
        axes[0].axhline(np.nanmean(psnr_v), color="tab:blue", lw=0.8, ls=":")
    axes[0].set_ylabel("PSNR (dB)")
    axes[0].legend(loc="best")

    ssim_v = _plottable(report.ssim_values)
    axes[1].plot(idx, ssim_v, "o-", color="tab:green")
    if np.isfinite(ssim_v).any():
        axes[1].axhline(np.nanmean(ssim_v), color="tab:green", lw=0.8, ls=":")
    axes[1].set_ylabel("SSIM")

    loe_v = _plottable(report.loe_values)
    axes[2].plot(idx, loe_v, "o-", color="tab:red")
    if np.isfinite(loe_v).any():
        axes[2].axhline(np.nanmean(loe_v), color="tab:red", lw=0.8, ls=":")
    axes[2].set_ylabel("LOE")
    axes[2].set_xlabel("image index")

    fig.suptitle("Per-image quality metrics")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def _plot_psnr_gain(report: MetricReport, path: Path) -> None:
    x = _plottable(report.input_psnr_values)
    y = _plottable(report.psnr_values)
    fig, ax = plt.subplots(figsize=(5.5, 5.5))
    ax.scatter(x, y, s=24, color="tab:blue")
    both = np.concatenate([x, y])
    if np.isfinite(both).any():
        lo = float(np.nanmin(both))
        hi = float(np.nanmax(both))
        pad = 0.05 * max(hi - lo, 1.0)
        span = (lo - pad, hi + pad)
        ax.plot(span, span, color="tab:gray", lw=0.8, ls="--")
        ax.set_xlim(span)
        ax.set_ylim(span)
    ax.set_xlabel("input PSNR (dB)")
    ax.set_ylabel("enhanced PSNR (dB)")
    ax.set_title("PSNR against target, before vs after")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def write_train_report(report: TrainReport, out_json) -> dict[str, Path]:
    """Write training report JSON plus a CSV table and a loss-curve figure."""
    out_json = Path(out_json)
    out_json.parent.mkdir(parents=True, exist_ok=True)
    report.save(out_json)

    csv_path = out_json.with_suffix(".csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "learning_rate", "seconds"])
        rows = zip(report.epoch_losses, report.learning_rates,
                   report.epoch_seconds)
        for i, (loss, lr, sec) in enumerate(rows):
            writer.writerow([i, _csv_cell(loss), f"{lr:.8f}", f"{sec:.3f}"])

    curve_png = out_json.with_name(out_json.stem + "_loss_curve.png")
    _plot_loss_curve(report, curve_png)
    return {"json": out_json, "csv": csv_path, "loss_curve_png": curve_png}


def _plot_loss_curve(report: TrainReport, path: Path) -> None:
    # Epoch 0 is the pre-training evaluation; epoch k is after k passes.
    epochs = np.arange(len(report.epoch_losses) + 1)
    losses = _plottable([report.initial_loss] + list(report.epoch_losses))

    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(epochs, losses, "o-", color="tab:blue", label="loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title(f"Stage {report.stage} training loss")

    if report.learning_rates:
        ax2 = ax.twinx()
        ax2.plot(epochs[1:], report.learning_rates, "s--", ms=3,
                 color="tab:orange", label="learning rate")
        ax2.set_ylabel("learning rate")
        ax2.set_yscale("log")
        h1, l1 = ax.get_legend_handles_labels()
        h2, l2 = ax2.get_legend_handles_labels()
        ax.legend(h1 + h2, l1 + l2, loc="best")
    else:
        ax.legend(loc="best")

    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
