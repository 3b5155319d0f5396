"""Scalar-loop reference implementations of the error metrics.

Deliberately naive: explicit Python loops and math.sqrt, no numpy reductions,
so they share no code path with the vectorized versions.
"""
import math

import numpy as np


def dist(a, b):
    return math.sqrt(sum((float(a[k]) - float(b[k])) ** 2 for k in range(3)))


def ade(pred, gt):
    total = 0.0
    for f in range(len(pred)):
        total += dist(pred[f], gt[f])
    return total / len(pred)


def fde(pred, gt):
    return dist(pred[-1], gt[-1])


def mpjpe(pred, gt, mask):
    total, n = 0.0, 0
    for f in range(len(pred)):
        for j in range(len(pred[f])):
            if mask[f][j]:
                total += dist(pred[f][j], gt[f][j])
                n += 1
    return total / n if n else float("nan")


def mpjpe_f(pred, gt, mask):
    return mpjpe(pred[-1:], gt[-1:], mask[-1:])


def mpjve(pred, gt, fps, mask):
    total, n = 0.0, 0
    for f in range(1, len(pred)):
        for j in range(len(pred[f])):
            if mask[f][j] and mask[f - 1][j]:
                err = [((pred[f][j][k] - pred[f - 1][j][k]) - (gt[f][j][k] - gt[f - 1][j][k])) * fps
                       for k in range(3)]
                total += dist(err, (0.0, 0.0, 0.0))
                n += 1
    return total / n if n else float("nan")


def wrist_relative_mpjpe(pred, gt, mask):
    """Over a stack of (21, 3) hands; frames with an unannotated wrist are skipped."""
    total, n = 0.0, 0
    for f in range(len(pred)):
        if not mask[f][0]:
            continue
        for j in range(1, len(pred[f])):
            if mask[f][j]:
                p = [pred[f][j][k] - pred[f][0][k] for k in range(3)]
                g = [gt[f][j][k] - gt[f][0][k] for k in range(3)]
                total += dist(p, g)
                n += 1
    return total / n if n else float("nan")


def random_case(rng, F=None, Jh=21):
    F = F or int(rng.integers(2, 25))
    gt = rng.normal(size=(F, Jh, 3)) * rng.uniform(0.01, 2.0)
    pred = gt + rng.normal(size=gt.shape) * rng.uniform(1e-3, 0.5)
    mask = rng.random((F, Jh)) > rng.uniform(0.0, 0.6)
    mask[0, 0] = mask[-1, 1] = True   # keep every masked metric defined
    return np.asarray(pred), np.asarray(gt), mask
