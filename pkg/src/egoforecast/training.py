"""Losses, masked supervision and the training loop."""
from __future__ import annotations

import csv
import logging
import math
import os
import warnings
from dataclasses import dataclass, asdict, field

import numpy as np
import torch

from .data import LEFT_WRIST, RIGHT_WRIST, Sequence
from .denoiser import Denoiser, DenoiserConfig, ObsConditions, load_checkpoint, save_checkpoint
from .diffusion import SCHEDULE_KINDS, DiffusionSchedule, make_schedule, q_sample

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("iteration", "L_joint", "L_vis", "L_reproj", "L_total")


class LossContractError(ValueError):
    pass


class TrainingAbort(RuntimeError):
    pass


class EmptyMaskWarning(UserWarning):
    pass


@dataclass
class TrainConfig:
    iterations: int = 40000
    learning_rate: float = 1e-4
    batch_size: int = 32
    lambda_vis: float = 0.1
    lambda_reproj: float = 0.05
    seed: int = 0
    schedule: str = "linear"
    N: int = 1000
    reproj_min_depth: float = 0.05
    checkpoint_every: int = 0      # 0: only the final checkpoint
    log_every: int = 1

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.N <= 0:
            raise ValueError("learning_rate, batch_size and N must be positive")
        if self.lambda_vis < 0 or self.lambda_reproj < 0:
            raise ValueError("loss weights must be non-negative")
        if self.schedule not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule {self.schedule!r}")

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    x0: torch.Tensor          # (B, T+F, J, 3)
    mask: torch.Tensor        # (B, T+F, J) bool
    cond: ObsConditions
    vis: torch.Tensor         # (B, T, 2) bool
    R: torch.Tensor           # (B, T, 3, 3) world-from-camera
    t: torch.Tensor           # (B, T, 3)
    intrinsics: torch.Tensor  # (B, 4)
    image_size: torch.Tensor  # (B, 2)

    def __len__(self):
        return self.x0.shape[0]

    def index(self, idx) -> "Batch":
        return Batch(self.x0[idx], self.mask[idx],
                     ObsConditions(self.cond.cam[idx], self.cond.hands2d[idx], self.cond.img[idx]),
                     self.vis[idx], self.R[idx], self.t[idx], self.intrinsics[idx], self.image_size[idx])


def collate(seqs: list[Sequence], dtype=torch.float32) -> Batch:
    def f(a):
        return torch.as_tensor(np.asarray(a), dtype=dtype)
    return Batch(
        x0=f(np.stack([s.joints for s in seqs])),
        mask=torch.as_tensor(np.stack([s.mask for s in seqs])),
        cond=ObsConditions(cam=f(np.stack([s.cam_vectors() for s in seqs])),
                           hands2d=f(np.stack([s.hands2d for s in seqs])),
                           img=f(np.stack([s.features for s in seqs]))),
        vis=torch.as_tensor(np.stack([s.visible for s in seqs])),
        R=f(np.stack([[p.R for p in s.obs_poses] for s in seqs])),
        t=f(np.stack([[p.translation for p in s.obs_poses] for s in seqs])),
        intrinsics=f(np.array([s.obs_poses[0].intrinsics for s in seqs])),
        image_size=f(np.array([s.obs_poses[0].image_size for s in seqs])),
    )


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def joint_loss(x0_hat: torch.Tensor, x0: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean absolute error over annotated (frame, joint, coordinate) entries."""
    if x0_hat.shape != x0.shape or mask.shape != x0.shape[:-1]:
        raise LossContractError(f"shapes {tuple(x0_hat.shape)}, {tuple(x0.shape)}, mask {tuple(mask.shape)}")
    m = mask.unsqueeze(-1).expand_as(x0)
    count = m.sum()
    if int(count) == 0:
        warnings.warn("joint loss on an all-masked batch", EmptyMaskWarning, stacklevel=2)
        return x0_hat.sum() * 0.0
    err = torch.where(m, (x0_hat - x0).abs(), torch.zeros_like(x0))
    return err.sum() / count


def visibility_loss(v_hat: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Binary cross-entropy averaged over every (frame, side) entry."""
    if v_hat.shape != v.shape:
        raise LossContractError(f"shapes {tuple(v_hat.shape)} vs {tuple(v.shape)}")
    if bool(((v_hat <= 0) | (v_hat >= 1)).any()):
        raise LossContractError("visibility probabilities must lie strictly inside (0, 1)")
    target = v.to(v_hat.dtype)
    return -(target * torch.log(v_hat) + (1 - target) * torch.log1p(-v_hat)).mean()


def project_normalized(x_world, R, t, intrinsics, image_size):
    """Project ``(..., 3)`` world points to [0, 1] image coordinates; also returns depth."""
    x_cam = torch.einsum("...ji,...j->...i", R, x_world - t)
    z = x_cam[..., 2]
    fx, fy, cx, cy = intrinsics.unbind(-1)
    w, h = image_size.unbind(-1)
    safe_z = torch.where(z.abs() < 1e-9, torch.ones_like(z), z)
    u = (fx * x_cam[..., 0] / safe_z + cx) / w
    v = (fy * x_cam[..., 1] / safe_z + cy) / h
    return torch.stack([u, v], dim=-1), z


def reprojection_loss(x0_hat, hands2d, R, t, intrinsics, image_size, vis,
                      wrist_idx=(LEFT_WRIST, RIGHT_WRIST), min_depth: float = 1e-9):
    """Visibility-gated L1 between observed 2D hands and projected predicted wrists.

    Batched: ``x0_hat`` (B, >=T, J, 3), ``hands2d`` (B, T, 2, 2), ``R`` (B, T, 3, 3),
    ``t`` (B, T, 3), ``intrinsics`` (B, 4), ``image_size`` (B, 2), ``vis`` (B, T, 2).
    Sums over frames and sides, averages over the batch.  Returns
    ``(loss, n_skipped)``; visible terms whose predicted wrist depth is below
    ``min_depth`` (on the camera plane, or behind it when ``min_depth > 0``)
    are skipped and counted.
    """
    T = hands2d.shape[1]
    wrists = x0_hat[:, :T, list(wrist_idx)]                      # (B, T, 2, 3)
    uv, z = project_normalized(wrists, R[:, :, None], t[:, :, None],
                               intrinsics[:, None, None], image_size[:, None, None])
    on_plane = (z.abs() < 1e-9) | (z < min_depth)
    gate = vis & ~on_plane
    err = (hands2d - uv).abs().sum(-1)
    err = torch.where(gate, err, torch.zeros_like(err))
    return err.sum() / x0_hat.shape[0], int((vis & on_plane).sum())


@dataclass
class LossParts:
    joint: float
    vis: float
    reproj: float
    total: float
    n_skipped_reproj: int = 0
    empty_mask: bool = False


def total_loss(joint, vis, reproj, lambda_vis: float = 0.1, lambda_reproj: float = 0.05):
    for name, value in (("L_joint", joint), ("L_vis", vis), ("L_reproj", reproj)):
        if not math.isfinite(float(value.detach() if isinstance(value, torch.Tensor) else value)):
            raise TrainingAbort(f"non-finite {name}: {value}")
    return joint + lambda_vis * vis + lambda_reproj * reproj


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def compute_losses(model: Denoiser, batch: Batch, schedule: DiffusionSchedule, cfg: TrainConfig,
                   n: torch.Tensor, eps: torch.Tensor, wrist_idx=(LEFT_WRIST, RIGHT_WRIST)):
    """Loss terms for fixed diffusion steps and noise; differentiable in the weights."""
    x_n = q_sample(batch.x0, n, eps, schedule)
    x0_hat, v_hat = model(x_n, batch.cond, n)
    if int(batch.mask.sum()) == 0:
        l_joint = x0_hat.sum() * 0.0
    else:
        l_joint = joint_loss(x0_hat, batch.x0, batch.mask)
    l_vis = visibility_loss(v_hat, batch.vis)
    l_rep, skipped = reprojection_loss(x0_hat, batch.cond.hands2d, batch.R, batch.t,
                                       batch.intrinsics, batch.image_size, batch.vis, wrist_idx,
                                       cfg.reproj_min_depth)
    total = total_loss(l_joint, l_vis, l_rep, cfg.lambda_vis, cfg.lambda_reproj)
    return total, (l_joint, l_vis, l_rep, skipped)


def draw_noise(batch: Batch, schedule: DiffusionSchedule, generator: torch.Generator):
    B = len(batch)
    n = torch.randint(1, schedule.N + 1, (B,), generator=generator)
    eps = torch.randn(batch.x0.shape, generator=generator, dtype=batch.x0.dtype)
    return n, eps


def train_step(model: Denoiser, optimizer: torch.optim.Optimizer, batch: Batch,
               schedule: DiffusionSchedule, cfg: TrainConfig, generator: torch.Generator,
               wrist_idx=(LEFT_WRIST, RIGHT_WRIST)) -> LossParts:
    model.train()
    n, eps = draw_noise(batch, schedule, generator)
    total, (lj, lv, lr, skipped) = compute_losses(model, batch, schedule, cfg, n, eps, wrist_idx)
    optimizer.zero_grad(set_to_none=True)
    total.backward()
    for name, p in model.named_parameters():
        if p.grad is not None and not torch.isfinite(p.grad).all():
            raise TrainingAbort(f"non-finite gradient in {name} "
                                f"(L_joint={float(lj):.4g}, L_vis={float(lv):.4g}, L_reproj={float(lr):.4g})")
    optimizer.step()
    return LossParts(float(lj.detach()), float(lv.detach()), float(lr.detach()), float(total.detach()), skipped,
                     empty_mask=int(batch.mask.sum()) == 0)


def make_optimizer(model: Denoiser, cfg: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)


@dataclass
class TrainState:
    model: Denoiser
    optimizer: torch.optim.Optimizer
    generator: torch.Generator
    iteration: int = 0
    history: list = field(default_factory=list)
    empty_batches: int = 0


def init_state(model_cfg: DenoiserConfig, cfg: TrainConfig, dtype=torch.float32) -> TrainState:
    if model_cfg.N != cfg.N or model_cfg.schedule != cfg.schedule:
        raise ValueError(f"denoiser schedule ({model_cfg.schedule}, N={model_cfg.N}) differs from "
                         f"training schedule ({cfg.schedule}, N={cfg.N})")
    torch.manual_seed(cfg.seed)
    model = Denoiser(model_cfg).to(dtype)
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    return TrainState(model, make_optimizer(model, cfg), gen)


def save_state(path, state: TrainState, cfg: TrainConfig) -> None:
    save_checkpoint(path, state.model, {
        "iteration": state.iteration,
        "optimizer": state.optimizer.state_dict(),
        "generator": state.generator.get_state(),
        "train_config": cfg.to_dict(),
    })


def resume_state(path, cfg: TrainConfig) -> TrainState:
    model, payload = load_checkpoint(path)
    opt = make_optimizer(model, cfg)
    if "optimizer" in payload:
        opt.load_state_dict(payload["optimizer"])
    gen = torch.Generator()
    if "generator" in payload:
        gen.set_state(payload["generator"])
    else:
        gen.manual_seed(cfg.seed + 1)
    return TrainState(model, opt, gen, iteration=int(payload.get("iteration", 0)))


def train(dataset: list[Sequence], cfg: TrainConfig, model_cfg: DenoiserConfig | None = None,
          out_dir=None, state: TrainState | None = None, dtype=torch.float32,
          progress=None) -> TrainState:
    """Run ``cfg.iterations`` total steps (counting any resumed ones).

    When ``out_dir`` is given, writes ``loss.csv``, periodic ``ckpt_<it>.pt``
    and the final ``model.pt``.
    """
    if not dataset:
        raise ValueError("training needs a non-empty dataset")
    schedule = make_schedule(cfg.schedule, cfg.N)
    if state is None:
        if model_cfg is None:
            s0 = dataset[0]
            model_cfg = DenoiserConfig(d_img=s0.features.shape[1], T=s0.T, F=s0.F, J=s0.J, N=cfg.N,
                                       schedule=cfg.schedule)
        state = init_state(model_cfg, cfg, dtype)
    dtype = next(state.model.parameters()).dtype
    data = collate(dataset, dtype)
    B = cfg.batch_size

    log_fh = writer = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, "loss.csv")
        fresh = state.iteration == 0 or not os.path.exists(path)
        if not fresh:
            _truncate_log(path, state.iteration)
        log_fh = open(path, "w" if fresh else "a", newline="")
        writer = csv.writer(log_fh)
        if fresh:
            writer.writerow(LOSS_COLUMNS)
    try:
        while state.iteration < cfg.iterations:
            idx = torch.randint(0, len(dataset), (B,), generator=state.generator)
            parts = train_step(state.model, state.optimizer, data.index(idx), schedule, cfg, state.generator)
            state.iteration += 1
            state.empty_batches += parts.empty_mask
            state.history.append(parts)
            if writer is not None and state.iteration % cfg.log_every == 0:
                writer.writerow([state.iteration, parts.joint, parts.vis, parts.reproj, parts.total])
            if progress is not None:
                progress(state.iteration, parts)
            if out_dir is not None and cfg.checkpoint_every and state.iteration % cfg.checkpoint_every == 0:
                save_state(os.path.join(out_dir, f"ckpt_{state.iteration:06d}.pt"), state, cfg)
    finally:
        if log_fh is not None:
            log_fh.close()
    if out_dir is not None:
        save_state(os.path.join(out_dir, "model.pt"), state, cfg)
    state.model.eval()
    return state


def _truncate_log(path, upto: int):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    keep = [rows[0]] + [r for r in rows[1:] if int(r[0]) <= upto]
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(keep)


def smoothed(values, window: int = 50) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if len(v) < window:
        return v.copy()
    kernel = np.ones(window) / window
    return np.convolve(v, kernel, mode="valid")
