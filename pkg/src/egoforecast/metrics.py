"""Trajectory and pose error metrics (metres, metres/second).

Masked metrics return ``nan`` when nothing is annotated; aggregation treats
``nan`` as an undefined cell and counts it separately.
"""
from __future__ import annotations

import numpy as np

GAMMA_EDGES = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
GAMMA_LABELS = tuple(f"({lo:.1f},{hi:.1f}]" for lo, hi in zip(GAMMA_EDGES[:-1], GAMMA_EDGES[1:]))


class MetricContractError(ValueError):
    pass


def _pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise MetricContractError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    return pred, gt


def ade(pred, gt) -> float:
    """Mean Euclidean distance over the forecast frames of an (F, 3) track."""
    pred, gt = _pair(pred, gt)
    if pred.ndim != 2 or pred.shape[0] < 1:
        raise MetricContractError(f"expected a non-empty (F, 3) track, got {pred.shape}")
    return float(np.linalg.norm(pred - gt, axis=-1).mean())


def fde(pred, gt) -> float:
    pred, gt = _pair(pred, gt)
    if pred.ndim != 2 or pred.shape[0] < 1:
        raise MetricContractError(f"expected a non-empty (F, 3) track, got {pred.shape}")
    return float(np.linalg.norm(pred[-1] - gt[-1]))


def _masked_mean_error(pred, gt, mask):
    pred, gt = _pair(pred, gt)
    mask = np.ones(pred.shape[:-1], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != pred.shape[:-1]:
        raise MetricContractError(f"mask {mask.shape} does not match {pred.shape[:-1]}")
    if not mask.any():
        return float("nan")
    return float(np.linalg.norm(pred - gt, axis=-1)[mask].mean())


def mpjpe(pred, gt, mask=None) -> float:
    """Mean per-joint position error over every annotated (frame, joint)."""
    return _masked_mean_error(pred, gt, mask)


def mpjpe_f(pred, gt, mask=None) -> float:
    """MPJPE restricted to the final frame of an (F, Jh, 3) forecast."""
    pred, gt = _pair(pred, gt)
    m = None if mask is None else np.asarray(mask, dtype=bool)[-1]
    return _masked_mean_error(pred[-1], gt[-1], m)


def mpjve(pred, gt, fps: float, mask=None) -> float:
    """Mean per-joint velocity error from frame differences scaled by ``fps``.

    A velocity counts only when both of its frames are annotated.
    """
    pred, gt = _pair(pred, gt)
    if pred.shape[0] < 2:
        raise MetricContractError("velocity error needs at least two frames")
    dv = (np.diff(pred, axis=0) - np.diff(gt, axis=0)) * fps
    m = None
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        m = mask[1:] & mask[:-1]
    return _masked_mean_error(dv, np.zeros_like(dv), m)


def wrist_relative_mpjpe(pred_hand, gt_hand, mask=None) -> float:
    """Hand MPJPE after subtracting each hand's wrist (index 0 of the block).

    Works on a single (21, 3) hand or a stack (..., 21, 3); frames whose wrist
    is unannotated are excluded.
    """
    pred, gt = _pair(pred_hand, gt_hand)
    mask = np.ones(pred.shape[:-1], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    wrist_ok = mask[..., 0]
    if not np.any(wrist_ok):
        return float("nan")
    rel_p = pred[..., 1:, :] - pred[..., :1, :]
    rel_g = gt[..., 1:, :] - gt[..., :1, :]
    m = mask[..., 1:] & wrist_ok[..., None]
    return _masked_mean_error(rel_p, rel_g, m)


def oov_ratio(visible) -> float:
    """Fraction of observation frames where a hand is out of view."""
    v = np.asarray(visible, dtype=bool)
    if v.size == 0:
        raise MetricContractError("no observation frames")
    return float((~v).sum() / v.size)


def bin_gamma(gamma: float) -> int | None:
    """Index of the half-open interval (lo, hi] holding ``gamma``; None for 0."""
    if gamma <= 0.0:
        return None
    for i in range(len(GAMMA_EDGES) - 1):
        if GAMMA_EDGES[i] < gamma <= GAMMA_EDGES[i + 1] + 1e-12:
            return i
    raise MetricContractError(f"out-of-view ratio {gamma} outside [0, 1]")
