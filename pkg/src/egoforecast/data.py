"""Sequence data model, the newline-delimited dataset format, and partitions.

Joint layout (J = 57):

* 0-14   body joints without wrists (COCO order minus the two wrists)
* 15-35  left hand, wrist first then thumb..pinky, four joints per finger
* 36-56  right hand, same order
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from .geometry import CameraPose, canonicalize_sequence

SCHEMA_VERSION = "v1"

N_JOINTS = 57
N_BODY = 15
N_HAND = 21
LEFT_WRIST = 15
RIGHT_WRIST = 36
LEFT_HAND = slice(15, 36)
RIGHT_HAND = slice(36, 57)
SIDES = ("left", "right")
WRIST_INDEX = {"left": LEFT_WRIST, "right": RIGHT_WRIST}
HAND_SLICE = {"left": LEFT_HAND, "right": RIGHT_HAND}

BODY_JOINT_NAMES = (
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_hip", "right_hip", "left_knee", "right_knee", "left_ankle", "right_ankle",
)
HEAD_JOINTS = (0, 1, 2, 3, 4)

SENTINEL = (-1.0, -1.0)


class DataError(ValueError):
    pass


class DatasetLoadError(DataError):
    pass


class VisibilityError(DataError):
    pass


class StatsError(DataError):
    pass


@dataclass(frozen=True)
class JointFrame:
    joints: np.ndarray   # (J, 3)
    mask: np.ndarray     # (J,) bool

    def __post_init__(self):
        j = np.asarray(self.joints, dtype=np.float64)
        m = np.asarray(self.mask, dtype=bool)
        if j.ndim != 2 or j.shape[1] != 3 or m.shape != (j.shape[0],):
            raise DataError(f"bad joint frame shapes {j.shape} / {m.shape}")
        j = np.where(m[:, None], j, 0.0)
        object.__setattr__(self, "joints", j)
        object.__setattr__(self, "mask", m)

    def with_joints(self, joints) -> "JointFrame":
        return JointFrame(joints, self.mask)


@dataclass(frozen=True)
class HandObservation2D:
    left: tuple
    right: tuple
    left_visible: bool
    right_visible: bool

    def __post_init__(self):
        for side in SIDES:
            xy = tuple(float(c) for c in getattr(self, side))
            vis = getattr(self, f"{side}_visible")
            if vis and not all(0.0 <= c <= 1.0 for c in xy):
                raise VisibilityError(f"{side} hand visible but at {xy}")
            if not vis and xy != SENTINEL:
                raise VisibilityError(f"{side} hand invisible but not at the sentinel: {xy}")
            object.__setattr__(self, side, xy)


def normalize_2d(pixel, image_size, visible: bool) -> np.ndarray:
    """Pixel coordinates to [0, 1]; the (-1, -1) sentinel when invisible."""
    if not visible:
        return np.array(SENTINEL)
    w, h = image_size
    u, v = float(pixel[0]), float(pixel[1])
    if not (0.0 <= u <= w and 0.0 <= v <= h):
        raise VisibilityError(f"visible pixel ({u}, {v}) outside {w}x{h} image")
    return np.array([u / w, v / h])


@dataclass
class Sequence:
    """One observation window plus its forecast targets, in the canonical frame.

    Per-frame quantities are stacked arrays; ``JointFrame`` and
    ``HandObservation2D`` views are available through accessors.
    """

    id: str
    activity: str
    obs_poses: list                 # T CameraPose
    hands2d: np.ndarray             # (T, 2, 2) normalized or sentinel, [left, right]
    visible: np.ndarray             # (T, 2) bool
    features: np.ndarray            # (T, d_img)
    obs_joints: np.ndarray          # (T, J, 3)
    obs_mask: np.ndarray            # (T, J) bool
    fut_joints: np.ndarray          # (F, J, 3)
    fut_mask: np.ndarray            # (F, J) bool
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return len(self.obs_poses)

    @property
    def F(self) -> int:
        return self.fut_joints.shape[0]

    @property
    def J(self) -> int:
        return self.obs_joints.shape[1]

    @property
    def joints(self) -> np.ndarray:
        return np.concatenate([self.obs_joints, self.fut_joints], axis=0)

    @property
    def mask(self) -> np.ndarray:
        return np.concatenate([self.obs_mask, self.fut_mask], axis=0)

    @property
    def obs_hands2d(self) -> list:
        return [HandObservation2D(tuple(h[0]), tuple(h[1]), bool(v[0]), bool(v[1]))
                for h, v in zip(self.hands2d, self.visible)]

    def joint_frames(self) -> list:
        return [JointFrame(j, m) for j, m in zip(self.joints, self.mask)]

    def cam_vectors(self) -> np.ndarray:
        return np.stack([p.c_cam for p in self.obs_poses])

    def validate(self, T: int | None = None, F: int | None = None, J: int = N_JOINTS):
        if J is not None and self.J != J:
            raise DataError(f"expected {J} joints, got {self.J}")
        if T is not None and self.T != T:
            raise DataError(f"expected T={T} observation frames, got {self.T}")
        if F is not None and self.F != F:
            raise DataError(f"expected F={F} future frames, got {self.F}")
        t = self.T
        shapes = {"hands2d": (t, 2, 2), "visible": (t, 2), "obs_joints": (t, self.J, 3),
                  "obs_mask": (t, self.J), "fut_mask": (self.F, self.J)}
        for name, shape in shapes.items():
            if getattr(self, name).shape != shape:
                raise DataError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.features.ndim != 2 or self.features.shape[0] != t:
            raise DataError(f"features must be (T, d_img), got {self.features.shape}")
        self.obs_hands2d  # raises on sentinel/visibility disagreement
        return self


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _tolist(a) -> list:
    return np.asarray(a).tolist()


def sequence_to_record(seq: Sequence) -> dict:
    pose0 = seq.obs_poses[0]
    obs = []
    for t, pose in enumerate(seq.obs_poses):
        obs.append({
            "pose_r6": _tolist(pose.rotation),
            "pose_t": _tolist(pose.translation),
            "hand2d_l": _tolist(seq.hands2d[t, 0]),
            "hand2d_r": _tolist(seq.hands2d[t, 1]),
            "vis_l": bool(seq.visible[t, 0]),
            "vis_r": bool(seq.visible[t, 1]),
            "feat": _tolist(seq.features[t]),
            "joints": _tolist(np.where(seq.obs_mask[t][:, None], seq.obs_joints[t], 0.0)),
            "joint_mask": _tolist(seq.obs_mask[t]),
        })
    fut = [{"joints": _tolist(np.where(m[:, None], j, 0.0)), "joint_mask": _tolist(m)}
           for j, m in zip(seq.fut_joints, seq.fut_mask)]
    rec = {
        "v": SCHEMA_VERSION,
        "id": seq.id,
        "activity": seq.activity,
        "intrinsics": list(pose0.intrinsics),
        "image_size": list(pose0.image_size),
        "obs": obs,
        "fut": fut,
    }
    if seq.meta:
        rec["meta"] = seq.meta
    return rec


def _arr(value, shape, what, rid):
    a = np.asarray(value, dtype=np.float64)
    if a.shape != shape:
        raise DatasetLoadError(f"record {rid!r}: {what} has shape {a.shape}, expected {shape}")
    return a


def record_to_sequence(rec: dict, T: int | None = None, F: int | None = None,
                       J: int = N_JOINTS, canonicalize: bool = True) -> Sequence:
    rid = rec.get("id", "<no id>")
    if rec.get("v") != SCHEMA_VERSION:
        raise DatasetLoadError(f"record {rid!r}: unsupported schema version {rec.get('v')!r}")
    try:
        intr = tuple(rec["intrinsics"])
        size = tuple(rec["image_size"])
        obs, fut = rec["obs"], rec["fut"]
    except KeyError as e:
        raise DatasetLoadError(f"record {rid!r}: missing field {e}") from None
    if T is not None and len(obs) != T:
        raise DatasetLoadError(f"record {rid!r}: dimension mismatch, {len(obs)} observation frames, expected {T}")
    if F is not None and len(fut) != F:
        raise DatasetLoadError(f"record {rid!r}: dimension mismatch, {len(fut)} future frames, expected {F}")
    if not obs:
        raise DatasetLoadError(f"record {rid!r}: no observation frames")
    for fr in obs + fut:
        n = len(fr["joints"])
        if n != J:
            raise DatasetLoadError(f"record {rid!r}: dimension mismatch, {n} joints, expected {J}")
    try:
        poses = [CameraPose(_arr(o["pose_r6"], (6,), "pose_r6", rid), _arr(o["pose_t"], (3,), "pose_t", rid),
                            intr, size) for o in obs]
        hands = np.stack([[_arr(o["hand2d_l"], (2,), "hand2d_l", rid), _arr(o["hand2d_r"], (2,), "hand2d_r", rid)]
                          for o in obs])
        vis = np.array([[bool(o["vis_l"]), bool(o["vis_r"])] for o in obs])
        feats = np.array([o["feat"] for o in obs], dtype=np.float64)
        oj = np.stack([_arr(o["joints"], (J, 3), "joints", rid) for o in obs])
        om = np.array([o["joint_mask"] for o in obs], dtype=bool)
        fj = np.stack([_arr(f["joints"], (J, 3), "joints", rid) for f in fut])
        fm = np.array([f["joint_mask"] for f in fut], dtype=bool)
    except KeyError as e:
        raise DatasetLoadError(f"record {rid!r}: missing field {e}") from None
    except DatasetLoadError:
        raise
    except ValueError as e:
        raise DatasetLoadError(f"record {rid!r}: {e}") from None
    if canonicalize:
        allj = np.concatenate([oj, fj])
        poses, allj, _ = canonicalize_sequence(poses, allj)
        allj = np.where(np.concatenate([om, fm])[..., None], allj, 0.0)
        oj, fj = allj[:len(obs)], allj[len(obs):]
    seq = Sequence(id=str(rid), activity=str(rec.get("activity", "")), obs_poses=poses,
                   hands2d=hands, visible=vis, features=feats, obs_joints=oj, obs_mask=om,
                   fut_joints=fj, fut_mask=fm, meta=rec.get("meta", {}))
    try:
        seq.validate(T, F, J)
    except DataError as e:
        raise DatasetLoadError(f"record {rid!r}: {e}") from None
    return seq


def dumps_record(rec: dict) -> str:
    return json.dumps(rec, separators=(",", ":"))


def save_dataset(seqs: Iterable[Sequence], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for seq in seqs:
            fh.write(dumps_record(sequence_to_record(seq)))
            fh.write("\n")


def load_dataset(path, T: int | None = None, F: int | None = None, J: int = N_JOINTS) -> list[Sequence]:
    """Parse, canonicalize and validate every record of a dataset file.

    Errors name the offending line number and record id.
    """
    if not os.path.exists(path):
        raise DatasetLoadError(f"dataset file not found: {path}")
    seqs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetLoadError(f"{path}:{lineno}: malformed record ({e.msg})") from None
            if not isinstance(rec, dict):
                raise DatasetLoadError(f"{path}:{lineno}: record is not an object")
            try:
                seqs.append(record_to_sequence(rec, T, F, J))
            except DatasetLoadError as e:
                raise DatasetLoadError(f"{path}:{lineno}: {e}") from None
    return seqs


# ---------------------------------------------------------------------------
# Partitions and statistics
# ---------------------------------------------------------------------------

def partition_by_view(seqs: Iterable[Sequence]) -> dict:
    """Split (sequence index, side) pairs by full observation-time visibility."""
    parts = {"in_view": [], "out_of_view": []}
    for i, seq in enumerate(seqs):
        for s, side in enumerate(SIDES):
            key = "in_view" if bool(np.all(seq.visible[:, s])) else "out_of_view"
            parts[key].append((i, side))
    return parts


@dataclass(frozen=True)
class DatasetStats:
    mean_pose: np.ndarray   # (J, 3)
    count: int

    def to_dict(self) -> dict:
        return {"mean_pose": _tolist(self.mean_pose), "count": self.count}

    @classmethod
    def from_dict(cls, d) -> "DatasetStats":
        return cls(np.asarray(d["mean_pose"], dtype=np.float64), int(d["count"]))


def compute_stats(train: Iterable[Sequence]) -> DatasetStats:
    total = None
    counts = None
    n_frames = 0
    for seq in train:
        j, m = seq.joints, seq.mask
        if total is None:
            total = np.zeros(j.shape[1:])
            counts = np.zeros(j.shape[1])
        total += np.where(m[..., None], j, 0.0).sum(axis=0)
        counts += m.sum(axis=0)
        n_frames += j.shape[0]
    if total is None:
        raise StatsError("no training sequences")
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        raise StatsError(f"joint indices without any annotation: {missing.tolist()}")
    return DatasetStats(total / counts[:, None], n_frames)


def with_features(seq: Sequence, features) -> Sequence:
    return replace(seq, features=np.asarray(features, dtype=np.float64))
