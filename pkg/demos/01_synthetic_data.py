# %% [markdown]
# # Synthetic egocentric sequences
#
# A head-mounted camera rides on a kinematic skeleton.  Each sequence carries
# 20 observed frames (camera poses, 2D hand detections, 3D joints) and 10
# future frames of 3D joints.  Hands that leave the camera frustum get the
# (-1, -1) sentinel in place of a 2D detection.

# %%
import numpy as np

from egoforecast.data import LEFT_WRIST, RIGHT_WRIST, partition_by_view
from egoforecast.geometry import in_view, project_point
from egoforecast.synthgen import ARCHETYPES, GenConfig, generate_sequence

cfg = GenConfig(seed=0, d_img=8)
seqs = [generate_sequence(cfg, i) for i in range(64)]
s = seqs[0]
print(s.id, s.activity, "T =", s.T, "F =", s.F, "J =", s.J)
print("joints", s.joints.shape, "hands2d", s.hands2d.shape, "features", s.features.shape)

# %% [markdown]
# Visibility is the geometric predicate applied to the true wrist, and a
# visible hand's 2D detection is just its normalized projection.

# %%
t = s.T - 1
pose = s.obs_poses[t]
for k, wi in enumerate((LEFT_WRIST, RIGHT_WRIST)):
    wrist = s.obs_joints[t, wi]
    u, v, depth = project_point(pose, wrist)
    print(("left", "right")[k], "visible" if in_view(pose, wrist) else "hidden",
          "pixel", np.round([u, v], 1), "depth", round(depth, 3), "stored", s.hands2d[t, k])

# %% [markdown]
# Motion archetypes differ mostly in how often the hands leave view.

# %%
for arch in ARCHETYPES:
    group = [generate_sequence(GenConfig(seed=0, d_img=8, motion_mix={arch: 1.0}), i) for i in range(32)]
    vis = np.array([g.visible for g in group])
    print(f"{arch:<16} visible frame-sides {vis.mean():.2f}")

parts = partition_by_view(seqs)
print({k: len(v) for k, v in parts.items()})

# %% [markdown]
# Every sequence is expressed relative to its first camera: heading yaw and
# horizontal position are removed, height and gravity are kept.

# %%
first = s.obs_poses[0]
print("first camera centre", np.round(first.translation, 3))
print("first camera forward", np.round(first.R[:, 2], 3))
