"""Plot emission for experiment summaries."""

from __future__ import annotations

import warnings
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import torch

from . import systems as S
from .evaluate import EvalReport
from .models import HybridModel

PLOT_KINDS = ("bar_compare", "frame_strip", "residual_overlay")


def bar_compare(entries: list[dict], metrics: list[str], out_path) -> Path:
    """Grouped bars, one cluster per metric, bars in the given entry order.

    Each entry: {"label": str, "metrics": {name: {"mean": m, "std": s}}}.
    """
    out_path = Path(out_path)
    if not entries:
        warnings.warn("no entries to plot; skipping bar_compare")
        return out_path
    fig, axes = plt.subplots(1, len(metrics), figsize=(4 * len(metrics), 3.2))
    if len(metrics) == 1:
        axes = [axes]
    for ax, metric in zip(axes, metrics):
        labels, means, stds = [], [], []
        for e in entries:
            if metric not in e["metrics"]:
                continue
            labels.append(e["label"])
            means.append(e["metrics"][metric]["mean"])
            stds.append(e["metrics"][metric].get("std", 0.0))
        ax.bar(range(len(labels)), means, yerr=stds, capsize=3)
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
        ax.set_title(metric)
        if means and max(means) > 0 and metric.endswith("mse"):
            ax.set_yscale("log")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def frame_strip(pred: np.ndarray, truth: np.ndarray, out_path, max_frames: int = 10) -> Path:
    """Predicted-vs-true frames side by side over the horizon."""
    out_path = Path(out_path)
    t = pred.shape[0]
    idx = np.linspace(0, t - 1, min(max_frames, t)).round().astype(int)
    fig, axes = plt.subplots(2, len(idx), figsize=(1.2 * len(idx), 2.6))
    for col, i in enumerate(idx):
        for row, series in enumerate((truth, pred)):
            ax = axes[row, col]
            frame = np.clip(series[i], 0.0, 1.0)
            ax.imshow(frame[..., 0] if frame.shape[-1] == 1 else frame, cmap="gray",
                      vmin=0, vmax=1)
            ax.set_xticks([])
            ax.set_yticks([])
            if col == 0:
                ax.set_ylabel(("true", "pred")[row], fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def residual_overlay(model: HybridModel, phi: torch.Tensor, params: dict, out_path,
                     sweep: tuple[float, float] = (-3.0, 3.0), n: int = 200) -> Path:
    """Identified residual field vs the exact derivative gap over a 1-D sweep.

    Defined for the pendulum family, where the residual depends on the
    angular velocity alone.
    """
    out_path = Path(out_path)
    if model.cfg.system != "pendulum":
        warnings.warn("residual_overlay sweep is defined for the pendulum; skipping")
        return out_path
    vals = torch.linspace(*sweep, n)
    z = torch.stack([torch.zeros(n), vals], dim=-1)[None]
    with torch.no_grad():
        res = model.residual_forward(z, phi[:1])[0, :, 1].numpy()
    truth = -params["beta"] * vals.numpy()
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.plot(vals.numpy(), truth, label="exact gap")
    ax.plot(vals.numpy(), res, "--", label="identified")
    ax.set_xlabel("angular velocity")
    ax.set_ylabel("residual acceleration")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_report(entries, kind: str, out_dir, **kwargs) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not entries:
        warnings.warn("empty report; nothing to plot")
        return []
    if kind == "bar_compare":
        metrics = kwargs.get("metrics", ["x_mse", "x_vpt"])
        return [bar_compare(entries, metrics, out_dir / "compare.png")]
    if kind == "frame_strip":
        return [frame_strip(entries["pred"], entries["truth"], out_dir / "frames.png")]
    if kind == "residual_overlay":
        return [residual_overlay(entries["model"], entries["phi"], entries["params"],
                                 out_dir / "residual.png")]
    raise ValueError(f"unknown plot kind {kind!r}; expected one of {PLOT_KINDS}")
