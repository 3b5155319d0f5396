"""Deterministic synthetic egocentric captures.

A rigid torso carries a look-at head with a glasses-mounted camera, two
two-link arms solved by analytic IK toward scripted wrist targets, and
forward-kinematic hands.  Four motion archetypes are scripted with
minimum-jerk profiles so that the future is partly predictable from body,
head and visible-hand cues.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, asdict

import numpy as np

from .data import (
    N_JOINTS, LEFT_WRIST, RIGHT_WRIST, Sequence, normalize_2d, partition_by_view,
    save_dataset,
)
from .geometry import CameraPose, camera_rotation, canonicalize_sequence, in_view, project_point

ARCHETYPES = ("reach", "carry", "turn-and-reach", "idle-sway")

HEAD_TO_CAMERA = np.array([0.0, 0.05, 0.1])   # in the head (camera-aligned) frame


@dataclass
class GenConfig:
    seed: int = 0
    n_sequences: int = 64
    fps: float = 10.0
    T: int = 20
    F: int = 10
    motion_mix: dict = field(default_factory=lambda: {"reach": 0.3, "carry": 0.2,
                                                      "turn-and-reach": 0.3, "idle-sway": 0.2})
    upper_arm: float = 0.28
    forearm: float = 0.26
    pelvis_height: float = 0.95
    image_size: tuple = (256, 256)
    intrinsics: tuple = (128.0, 128.0, 128.0, 128.0)
    d_img: int = 384
    feature_mode: str = "zeros"
    annotation_dropout: float = 0.0

    def __post_init__(self):
        if self.T <= 0 or self.F <= 0:
            raise ValueError("T and F must be positive")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if self.n_sequences < 0:
            raise ValueError("n_sequences must be non-negative")
        unknown = set(self.motion_mix) - set(ARCHETYPES)
        if unknown:
            raise ValueError(f"unknown archetypes {sorted(unknown)}")
        if any(p < 0 for p in self.motion_mix.values()):
            raise ValueError("motion_mix proportions must be non-negative")
        if abs(sum(self.motion_mix.values()) - 1.0) > 1e-9:
            raise ValueError("motion_mix proportions must sum to 1")
        if self.feature_mode not in ("zeros", "scene-encoding"):
            raise ValueError(f"unknown feature_mode {self.feature_mode!r}")
        if self.feature_mode == "scene-encoding" and self.d_img < 4:
            raise ValueError("scene-encoding needs d_img >= 4")

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# Skeleton
# ---------------------------------------------------------------------------

# offsets in the body frame (x forward, y left, z up) relative to the pelvis centre
SHOULDER = {"left": np.array([0.0, 0.18, 0.50]), "right": np.array([0.0, -0.18, 0.50])}
HIP = {"left": np.array([0.0, 0.10, 0.0]), "right": np.array([0.0, -0.10, 0.0])}
NECK_PIVOT = np.array([0.0, 0.0, 0.58])
THIGH, SHIN = 0.45, 0.45

# head-frame (camera-aligned: x right, y down, z forward) offsets
HEAD_CENTER_FROM_PIVOT = np.array([0.0, -0.12, 0.02])
FACE = np.array([
    [0.0, 0.02, 0.10],       # nose
    [-0.035, -0.02, 0.08],   # left eye (person's left is image left)
    [0.035, -0.02, 0.08],    # right eye
    [-0.075, 0.0, 0.0],      # left ear
    [0.075, 0.0, 0.0],       # right ear
])

# hand frame: x along the forearm, y toward the thumb, z out of the palm back
FINGER_BASES = np.array([
    [0.030, 0.025, -0.010],  # thumb CMC
    [0.090, 0.022, 0.0],     # index MCP
    [0.092, 0.004, 0.0],     # middle MCP
    [0.088, -0.013, 0.0],    # ring MCP
    [0.080, -0.028, 0.0],    # pinky MCP
])
FINGER_BONES = np.array([
    [0.040, 0.032, 0.028],
    [0.042, 0.025, 0.022],
    [0.046, 0.028, 0.023],
    [0.042, 0.027, 0.022],
    [0.034, 0.020, 0.019],
])
THUMB_SPLAY = np.array([0.7, 0.6, 0.0])   # thumb first bone direction in hand frame (unnormalized x, y)


def bone_pairs() -> list[tuple[int, int]]:
    """Index pairs whose distance must stay constant (bones and rigid links)."""
    pairs = [(0, 1), (0, 2), (1, 3), (2, 4), (3, 4),     # face
             (5, 6), (9, 10), (5, 9), (6, 10),            # torso
             (5, 7), (6, 8), (7, LEFT_WRIST), (8, RIGHT_WRIST),
             (9, 11), (10, 12), (11, 13), (12, 14)]
    for wrist in (LEFT_WRIST, RIGHT_WRIST):
        for f in range(5):
            base = wrist + 1 + 4 * f
            pairs += [(wrist, base), (base, base + 1), (base + 1, base + 2), (base + 2, base + 3)]
    return pairs


def _unit(v):
    return v / np.linalg.norm(v)


def _rodrigues(axis, angle):
    k = _unit(axis)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K


def body_rotation(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def solve_arm(shoulder, target, pole, upper, fore):
    """Two-link IK; returns (elbow, wrist) with the wrist clamped to reach."""
    d_vec = target - shoulder
    d = np.linalg.norm(d_vec)
    d_max, d_min = 0.98 * (upper + fore), abs(upper - fore) + 0.05
    d_c = min(max(d, d_min), d_max)
    u = d_vec / d if d > 1e-9 else np.array([0.0, 0.0, -1.0])
    wrist = shoulder + d_c * u
    cos_a = (upper ** 2 + d_c ** 2 - fore ** 2) / (2 * upper * d_c)
    sin_a = np.sqrt(max(0.0, 1 - cos_a ** 2))
    e = pole - np.dot(pole, u) * u
    if np.linalg.norm(e) < 1e-9:
        e = np.cross(u, [1.0, 0.0, 0.0])
    e = _unit(e)
    elbow = shoulder + upper * (cos_a * u + sin_a * e)
    return elbow, wrist


def hand_joints(wrist, elbow, side: str, roll_dir, curl: float) -> np.ndarray:
    """21 hand joints from the wrist, forearm direction and a curl amount."""
    x = _unit(wrist - elbow)
    mirror = 1.0 if side == "left" else -1.0
    ref = roll_dir - np.dot(roll_dir, x) * x
    if np.linalg.norm(ref) < 1e-9:
        ref = np.cross(x, [0.0, 0.0, 1.0])
    y = _unit(ref) * mirror
    z = np.cross(x, y)
    frame = np.stack([x, y, z], axis=1)
    out = [wrist]
    for f in range(5):
        p = wrist + frame @ FINGER_BASES[f]
        out.append(p)
        if f == 0:
            d = _unit(np.array([THUMB_SPLAY[0], THUMB_SPLAY[1], 0.0]))
            axis = np.array([0.0, 0.0, 1.0])
        else:
            d = np.array([1.0, 0.0, 0.0])
            axis = np.array([0.0, 1.0, 0.0])
        direction = d
        for b in range(3):
            # curl bends toward the palm (-z) about the finger's lateral axis
            direction = _rodrigues(axis, curl * (0.5 + 0.25 * b)) @ direction
            p = p + FINGER_BONES[f, b] * (frame @ direction)
            out.append(p)
    return np.array(out)


def min_jerk(s):
    s = np.clip(s, 0.0, 1.0)
    return s ** 3 * (10 - 15 * s + 6 * s ** 2)


def _ramp(t, start, duration):
    return min_jerk((t - start) / duration)


# ---------------------------------------------------------------------------
# Archetype scripts: each returns per-frame controls in world coordinates
# ---------------------------------------------------------------------------

@dataclass
class Controls:
    pelvis: np.ndarray       # (K, 3)
    yaw: np.ndarray          # (K,)
    gaze: np.ndarray         # (K, 3) world point the head looks at
    wrist_target: dict       # side -> (K, 3)
    curl: dict               # side -> (K,)
    leg_swing: np.ndarray    # (K,)
    target: np.ndarray | None


def _body_point(pelvis, yaw, offset):
    return pelvis + body_rotation(yaw) @ offset


def _rest_front(side):
    s = 1.0 if side == "left" else -1.0
    return np.array([0.32, 0.14 * s, 0.22])


def _hang(side):
    s = 1.0 if side == "left" else -1.0
    return np.array([-0.04, 0.22 * s, -0.02])


def _script(archetype: str, times: np.ndarray, rng: np.random.Generator, cfg: GenConfig) -> Controls:
    K = len(times)
    start = np.array([rng.uniform(-3, 3), rng.uniform(-3, 3), cfg.pelvis_height])
    yaw0 = rng.uniform(-np.pi, np.pi)
    pelvis = np.repeat(start[None], K, axis=0)
    yaw = np.full(K, yaw0)
    leg = np.zeros(K)
    curl = {"left": np.full(K, 0.2), "right": np.full(K, 0.2)}
    wt = {}
    target = None
    horizon = times[-1]

    if archetype == "idle-sway":
        f = rng.uniform(0.3, 0.7)
        amp = rng.uniform(0.02, 0.05)
        ph = rng.uniform(0, 2 * np.pi)
        for side in ("left", "right"):
            base = _rest_front(side)
            off = np.stack([amp * np.sin(2 * np.pi * f * times + ph),
                            0.5 * amp * np.cos(2 * np.pi * f * times + ph + (side == "left")),
                            0.6 * amp * np.sin(2 * np.pi * 0.5 * f * times + ph)], axis=1)
            wt[side] = np.array([_body_point(pelvis[k], yaw[k], base + off[k]) for k in range(K)])
            curl[side] = 0.3 + 0.2 * np.sin(2 * np.pi * f * times + ph)
        gaze = 0.5 * (wt["left"] + wt["right"])

    elif archetype == "carry":
        speed = rng.uniform(0.3, 0.9)
        turn_rate = rng.uniform(-0.25, 0.25)
        yaw = yaw0 + turn_rate * times
        heading = np.stack([np.cos(yaw), np.sin(yaw), np.zeros(K)], axis=1)
        dt = times[1] - times[0] if K > 1 else 0.1
        pelvis = start + np.cumsum(np.concatenate([[np.zeros(3)], heading[:-1] * speed * dt]), axis=0)
        leg = 0.35 * speed * np.sin(2 * np.pi * 1.6 * speed * times + rng.uniform(0, 2 * np.pi))
        lift = rng.uniform(0.0, 0.1)
        for side in ("left", "right"):
            base = _rest_front(side) * np.array([1.0, 0.9, 1.0]) + np.array([0.0, 0.0, lift])
            wt[side] = np.array([_body_point(pelvis[k], yaw[k], base) for k in range(K)])
            curl[side] = np.full(K, 0.9)
        look = rng.uniform(1.5, 3.0)
        gaze = np.array([pelvis[k] + heading[k] * look - np.array([0.0, 0.0, cfg.pelvis_height - 0.2])
                         for k in range(K)])

    elif archetype == "reach":
        side = "left" if rng.random() < 0.5 else "right"
        other = "right" if side == "left" else "left"
        az = rng.uniform(-0.7, 0.7)
        dist = rng.uniform(0.55, 1.0)
        height = rng.uniform(0.75, 1.3)
        R0 = body_rotation(yaw0)
        target = start + R0 @ np.array([dist * np.cos(az), dist * np.sin(az), height - cfg.pelvis_height])
        t_step = rng.uniform(0.3, 1.6)
        d_step = max(0.0, dist - 0.5)
        t_reach = t_step + rng.uniform(0.1, 0.6)
        dur = rng.uniform(0.8, 1.5)
        step_dir = R0 @ np.array([np.cos(az), np.sin(az), 0.0])
        s_step = _ramp(times, t_step, 1.0)
        pelvis = start + s_step[:, None] * d_step * step_dir
        yaw = yaw0 + 0.5 * az * s_step
        s = _ramp(times, t_reach, dur)
        rest = np.array([_body_point(pelvis[k], yaw[k], _rest_front(side)) for k in range(K)])
        wt[side] = rest + s[:, None] * (target - rest)
        # optional return toward rest once the reach has finished
        t_back = t_reach + dur + rng.uniform(0.2, 1.0)
        if t_back < horizon:
            back = _ramp(times, t_back, 0.9)
            wt[side] = wt[side] + back[:, None] * (rest - wt[side])
        curl[side] = 0.15 + 0.9 * s
        if rng.random() < 0.5:
            wt[other] = np.array([_body_point(pelvis[k], yaw[k], _rest_front(other)) for k in range(K)])
        else:
            wt[other] = np.array([_body_point(pelvis[k], yaw[k], _hang(other)) for k in range(K)])
        gaze = np.repeat(target[None], K, axis=0)

    elif archetype == "turn-and-reach":
        side = "left" if rng.random() < 0.5 else "right"
        other = "right" if side == "left" else "left"
        sgn = 1.0 if side == "left" else -1.0
        az = sgn * rng.uniform(1.2, 2.1)
        dist = rng.uniform(0.7, 1.0)
        height = rng.uniform(0.9, 1.4)
        R0 = body_rotation(yaw0)
        target = start + R0 @ np.array([dist * np.cos(az), dist * np.sin(az), height - cfg.pelvis_height])
        # the first frames look far ahead with both hands hanging: out of view by construction
        t_turn = rng.uniform(0.3, 1.2)
        dur_turn = rng.uniform(0.8, 1.4)
        frac = rng.uniform(0.6, 1.0)
        s_turn = _ramp(times, t_turn, dur_turn)
        yaw = yaw0 + frac * az * s_turn
        d_step = max(0.0, dist - 0.5)
        step_dir = R0 @ np.array([np.cos(az), np.sin(az), 0.0])
        pelvis = start + (d_step * _ramp(times, t_turn + 0.2, 1.0))[:, None] * step_dir
        t_reach = t_turn + rng.uniform(0.3, 1.0)
        dur = rng.uniform(0.8, 1.4)
        s = _ramp(times, t_reach, dur)
        hang = np.array([_body_point(pelvis[k], yaw[k], _hang(side)) for k in range(K)])
        wt[side] = hang + s[:, None] * (target - hang)
        curl[side] = 0.1 + 0.9 * s
        wt[other] = np.array([_body_point(pelvis[k], yaw[k], _hang(other)) for k in range(K)])
        ahead = start + R0 @ np.array([3.0, 0.0, 1.55 - cfg.pelvis_height])
        look = _ramp(times, t_turn - 0.1, 0.6)
        gaze = ahead[None] + look[:, None] * (target - ahead)[None]
    else:
        raise ValueError(f"unknown archetype {archetype!r}")

    return Controls(pelvis, yaw, gaze, wt, curl, leg, target)


# ---------------------------------------------------------------------------
# Posing
# ---------------------------------------------------------------------------

def _head_orientation(pivot, body_yaw, gaze):
    d = gaze - pivot
    yaw = np.arctan2(d[1], d[0])
    rel = (yaw - body_yaw + np.pi) % (2 * np.pi) - np.pi
    rel = np.clip(rel, -1.2, 1.2)
    pitch = np.arctan2(d[2], np.hypot(d[0], d[1]))
    pitch = np.clip(pitch, -1.0, 0.3)
    return camera_rotation(body_yaw + rel, pitch)


def pose_frame(ctrl: Controls, k: int, cfg: GenConfig):
    """Joints (J, 3) and the world-from-camera (R, t) for frame ``k``."""
    pelvis, yaw = ctrl.pelvis[k], ctrl.yaw[k]
    Rb = body_rotation(yaw)
    J = np.zeros((N_JOINTS, 3))
    pivot = pelvis + Rb @ NECK_PIVOT
    Rh = _head_orientation(pivot, yaw, ctrl.gaze[k])
    head = pivot + Rh @ HEAD_CENTER_FROM_PIVOT
    J[0:5] = head + FACE @ Rh.T
    cam_t = head + Rh @ HEAD_TO_CAMERA

    shoulders = {s: pelvis + Rb @ SHOULDER[s] for s in ("left", "right")}
    J[5], J[6] = shoulders["left"], shoulders["right"]
    for i, side in enumerate(("left", "right")):
        hip = pelvis + Rb @ HIP[side]
        swing = ctrl.leg_swing[k] * (1 if side == "left" else -1)
        Rl = Rb @ _rodrigues(np.array([0.0, 1.0, 0.0]), swing)
        knee = hip + Rl @ np.array([0.0, 0.0, -THIGH])
        ankle = knee + Rl @ np.array([0.0, 0.0, -SHIN])
        J[9 + i], J[11 + i], J[13 + i] = hip, knee, ankle

        s = 1.0 if side == "left" else -1.0
        pole = Rb @ np.array([-0.2, 0.6 * s, -1.0])
        elbow, wrist = solve_arm(shoulders[side], ctrl.wrist_target[side][k], pole,
                                 cfg.upper_arm, cfg.forearm)
        J[7 + i] = elbow
        wi = LEFT_WRIST if side == "left" else RIGHT_WRIST
        J[wi:wi + 21] = hand_joints(wrist, elbow, side, Rb @ np.array([0.0, 0.3 * s, -1.0]),
                                    ctrl.curl[side][k])
    return J, Rh, cam_t


def _pick_archetype(cfg: GenConfig, rng) -> str:
    names = [a for a in ARCHETYPES if cfg.motion_mix.get(a, 0.0) > 0]
    probs = np.array([cfg.motion_mix[a] for a in names])
    return names[int(rng.choice(len(names), p=probs / probs.sum()))]


def generate_sequence(cfg: GenConfig, index: int, stream: int = 0) -> Sequence:
    """Sequence ``index`` of RNG stream ``stream``; distinct streams never share draws."""
    if index < 0 or stream < 0:
        raise ValueError("index and stream must be non-negative")
    rng = np.random.default_rng([cfg.seed, index] if stream == 0 else [cfg.seed, index, stream])
    archetype = _pick_archetype(cfg, rng)
    K = cfg.T + cfg.F
    times = np.arange(K) / cfg.fps
    ctrl = _script(archetype, times, rng, cfg)

    joints = np.zeros((K, N_JOINTS, 3))
    poses = []
    for k in range(K):
        J, R, t = pose_frame(ctrl, k, cfg)
        joints[k] = J
        if k < cfg.T:
            poses.append(CameraPose.from_matrix(R, t, cfg.intrinsics, cfg.image_size))

    poses, joints, tf = canonicalize_sequence(poses, joints)

    hands = np.zeros((cfg.T, 2, 2))
    vis = np.zeros((cfg.T, 2), dtype=bool)
    for t, pose in enumerate(poses):
        for s, wi in enumerate((LEFT_WRIST, RIGHT_WRIST)):
            v = in_view(pose, joints[t, wi])
            vis[t, s] = v
            uv = project_point(pose, joints[t, wi])[:2] if v else (0.0, 0.0)
            hands[t, s] = normalize_2d(uv, cfg.image_size, v)

    feats = np.zeros((cfg.T, cfg.d_img))
    if cfg.feature_mode == "scene-encoding" and ctrl.target is not None:
        feats[:, :3] = tf.apply_points(ctrl.target)
        feats[:, 3] = 1.0

    mask = np.ones((K, N_JOINTS), dtype=bool)
    if cfg.annotation_dropout > 0:
        groups = [slice(0, 15), slice(15, 36), slice(36, 57)]
        drop = rng.random((K, 3)) < cfg.annotation_dropout
        for g, sl in enumerate(groups):
            mask[drop[:, g], sl] = False
    joints = np.where(mask[..., None], joints, 0.0)

    return Sequence(
        id=f"syn-{cfg.seed}-{index:06d}" if stream == 0 else f"syn-{cfg.seed}-s{stream}-{index:06d}",
        activity=archetype, obs_poses=poses,
        hands2d=hands, visible=vis, features=feats,
        obs_joints=joints[:cfg.T], obs_mask=mask[:cfg.T],
        fut_joints=joints[cfg.T:], fut_mask=mask[cfg.T:], meta={"fps": cfg.fps},
    )


def generate_dataset(cfg: GenConfig, out_path, start_index: int = 0, stream: int = 0) -> dict:
    """Write ``cfg.n_sequences`` sequences to ``out_path``; returns view counts."""
    seqs = [generate_sequence(cfg, start_index + i, stream) for i in range(cfg.n_sequences)]
    parent = os.path.dirname(os.fspath(out_path))
    try:
        if parent:
            os.makedirs(parent, exist_ok=True)
        save_dataset(seqs, out_path)
    except OSError as e:
        raise OSError(f"could not write dataset to {out_path}: {e}") from e
    parts = partition_by_view(seqs)
    return {"n_sequences": len(seqs), "n_in_view_pairs": len(parts["in_view"]),
            "n_out_of_view_pairs": len(parts["out_of_view"])}
