"""Static-pose and constant-velocity reference forecasters."""
from __future__ import annotations

import numpy as np

from .data import HAND_SLICE, HEAD_JOINTS, SIDES, WRIST_INDEX, DatasetStats, Sequence
from .geometry import heading_yaw, rot_z
from .metrics import MetricContractError


def anchor_mean_pose(stats: DatasetStats, pose) -> np.ndarray:
    """Place the training mean pose at a camera: head on the camera centre,
    heading turned to the camera's yaw."""
    mean = stats.mean_pose
    head = mean[list(HEAD_JOINTS)].mean(axis=0)
    R = rot_z(heading_yaw(pose.R))
    return (mean - head) @ R.T + pose.translation


def baseline_static(seq: Sequence, stats: DatasetStats) -> np.ndarray:
    """(T+F, J, 3): the anchored mean pose at the last observation, held fixed."""
    posed = anchor_mean_pose(stats, seq.obs_poses[-1])
    return np.repeat(posed[None], seq.T + seq.F, axis=0)


def baseline_cvm(past, F: int) -> np.ndarray:
    """Extrapolate the last displacement: p_{T+k} = p_T + k (p_T - p_{T-1})."""
    past = np.asarray(past, dtype=np.float64)
    if past.ndim < 2 or past.shape[0] < 2:
        raise MetricContractError("constant velocity needs at least two past positions")
    v = past[-1] - past[-2]
    k = np.arange(1, F + 1, dtype=np.float64).reshape(-1, *([1] * (past.ndim - 1)))
    return past[-1] + k * v


def cvm_prediction(seq: Sequence) -> np.ndarray:
    """(T+F, J, 3) forecast from ground-truth past joints.

    Observation frames are copied from ground truth.  Each hand is translated
    along its wrist's extrapolated track; body joints are extrapolated
    individually.
    """
    obs = seq.obs_joints
    out = np.concatenate([obs, np.repeat(obs[-1:], seq.F, axis=0)])
    body = slice(0, HAND_SLICE["left"].start)
    out[seq.T:, body] = baseline_cvm(obs[:, body], seq.F)
    for side in SIDES:
        wi = WRIST_INDEX[side]
        track = baseline_cvm(obs[:, wi], seq.F)
        out[seq.T:, HAND_SLICE[side]] = obs[-1, HAND_SLICE[side]][None] + (track - obs[-1, wi])[:, None]
    return out
