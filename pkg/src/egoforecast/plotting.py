"""Static figures for forecasts and evaluation reports (matplotlib, Agg backend)."""
from __future__ import annotations

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .data import HAND_SLICE, SIDES, WRIST_INDEX  # noqa: E402
from .geometry import CameraPose, project_points  # noqa: E402

_COLORS = {"left": "tab:blue", "right": "tab:red"}
# PNG metadata carries the library version; dropping it keeps reruns byte-stable
_SAVE_KW = {"dpi": 100, "metadata": {"Software": None}}


def _poses(forecast: dict) -> list[CameraPose]:
    return [CameraPose(np.asarray(c["r6"], float), np.asarray(c["t"], float),
                       tuple(forecast["intrinsics"]), tuple(forecast["image_size"]))
            for c in forecast["camera"]]


def plot_topdown(forecast: dict, path) -> None:
    """Ground-plane view of both wrists: observed, true future and forecast."""
    T = forecast["T"]
    pred = np.asarray(forecast["joints"])
    gt = np.asarray(forecast["gt_joints"])
    cams = np.array([c["t"] for c in forecast["camera"]])
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(cams[:, 0], cams[:, 1], "k.-", lw=1, ms=3, label="camera")
    for side in SIDES:
        w, c = WRIST_INDEX[side], _COLORS[side]
        ax.plot(gt[:T, w, 0], gt[:T, w, 1], "-", color=c, alpha=0.4, label=f"{side} observed")
        ax.plot(gt[T - 1:, w, 0], gt[T - 1:, w, 1], "-", color=c, lw=2, label=f"{side} true future")
        ax.plot(pred[T - 1:, w, 0], pred[T - 1:, w, 1], "--", color=c, lw=2, label=f"{side} forecast")
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_title(f"{forecast['id']}: top-down")
    ax.legend(fontsize=7, loc="best")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def plot_overlay(forecast: dict, path, margin: float = 1.0) -> None:
    """Reproject the forecast into the last observed camera.

    The canvas extends ``margin`` image sizes past each border so joints that
    leave the field of view remain visible; points behind the camera are dropped.
    """
    T = forecast["T"]
    pose = _poses(forecast)[T - 1]
    w, h = pose.image_size
    pred = np.asarray(forecast["joints"])
    gt = np.asarray(forecast["gt_joints"])
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.add_patch(plt.Rectangle((0, 0), w, h, fill=False, color="k", lw=1.5))
    for side in SIDES:
        c, wi = _COLORS[side], WRIST_INDEX[side]
        for joints, style, label in ((gt, "-", "true"), (pred, "--", "forecast")):
            uvz = project_points(pose, joints[T - 1:, wi])
            keep = uvz[:, 2] > 0
            ax.plot(uvz[keep, 0], uvz[keep, 1], style, color=c, lw=2, label=f"{side} {label}")
            hand = project_points(pose, joints[-1, HAND_SLICE[side]])
            hand = hand[hand[:, 2] > 0]
            ax.scatter(hand[:, 0], hand[:, 1], s=6, color=c, marker="o" if label == "true" else "x")
    ax.set_xlim(-margin * w, (1 + margin) * w)
    ax.set_ylim((1 + margin) * h, -margin * h)   # image v grows downwards
    ax.set_aspect("equal")
    ax.set_title(f"{forecast['id']}: frame {T - 1} reprojection")
    ax.legend(fontsize=7, loc="best")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def plot_per_timestep(reports, path, fps: float | None = None) -> None:
    """Pooled wrist displacement against future step, one line per method and partition."""
    styles = {"all": "-", "in_view": ":", "out_of_view": "--"}
    fig, ax = plt.subplots(figsize=(6, 4))
    for rep in reports:
        for part, curve in sorted(rep.per_step.items()):
            y = np.asarray(curve, float)
            x = np.arange(1, len(y) + 1) / (fps or 1.0)
            ax.plot(x, y, styles.get(part, "-"), marker=".", label=f"{rep.method} {part}")
    ax.set_xlabel("future time (s)" if fps else "future step")
    ax.set_ylabel("wrist displacement error (m)")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
