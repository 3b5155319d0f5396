"""Conditional denoising transformer.

Observation frames are tokenized together with their conditioning cues
(camera 9-vector, both 2D hand locations, image features); future frames
only see their noisy joints.  All T+F tokens share a bidirectional
transformer trunk, then a linear joint decoder and a visibility head.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import torch
from torch import nn

CHECKPOINT_FORMAT = "egoforecast-denoiser"
CHECKPOINT_VERSION = 1


class DenoiserContractError(ValueError):
    pass


@dataclass(frozen=True)
class DenoiserConfig:
    d_z: int = 512
    n_layers: int = 4
    n_heads: int = 8
    d_img: int = 384
    T: int = 20
    F: int = 10
    J: int = 57
    N: int = 1000
    schedule: str = "linear"       # noise schedule the model is trained for
    d_ff: int | None = None        # defaults to 4 * d_z
    activation: str = "gelu"
    positional: str = "learned"    # or "sinusoidal"

    def __post_init__(self):
        for name in ("d_z", "n_layers", "n_heads", "d_img", "T", "F", "J", "N"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.d_z % self.n_heads:
            raise ValueError(f"d_z={self.d_z} not divisible by n_heads={self.n_heads}")
        if self.schedule not in ("linear", "scaled-linear"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.positional not in ("learned", "sinusoidal"):
            raise ValueError(f"unknown positional embedding {self.positional!r}")

    @property
    def obs_width(self) -> int:
        return 3 * self.J + 9 + 2 + 2 + self.d_img

    def to_dict(self) -> dict:
        return asdict(self)


def sinusoidal_embedding(n: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard transformer sinusoid of integer positions/steps, (B,) -> (B, dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half, 1))
    args = n.to(torch.float64)[:, None] * freqs[None]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb


@dataclass
class ObsConditions:
    """Per-frame observation cues for a batch, all tensors with leading (B, T)."""
    cam: torch.Tensor       # (B, T, 9)
    hands2d: torch.Tensor   # (B, T, 2, 2) normalized or sentinel, [left, right]
    img: torch.Tensor       # (B, T, d_img)

    def to(self, dtype) -> "ObsConditions":
        return ObsConditions(self.cam.to(dtype), self.hands2d.to(dtype), self.img.to(dtype))


class Denoiser(nn.Module):
    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_z
        act = nn.GELU() if cfg.activation == "gelu" else nn.ReLU()
        self.enc_obs = nn.Sequential(nn.Linear(cfg.obs_width, d), act, nn.Linear(d, d))
        self.enc_fut = nn.Linear(3 * cfg.J, d)
        self.noise_proj = nn.Sequential(nn.Linear(d, d), nn.GELU(), nn.Linear(d, d))
        if cfg.positional == "learned":
            self.pos = nn.Parameter(torch.randn(cfg.T + cfg.F, d) * 0.02)
        else:
            self.register_buffer("pos", sinusoidal_embedding(torch.arange(cfg.T + cfg.F), d).float())
        layer = nn.TransformerEncoderLayer(d, cfg.n_heads, dim_feedforward=cfg.d_ff or 4 * d,
                                           dropout=0.0, activation=cfg.activation,
                                           batch_first=True, norm_first=True)
        self.trunk = nn.TransformerEncoder(layer, cfg.n_layers, enable_nested_tensor=False)
        self.norm = nn.LayerNorm(d)
        self.dec_joint = nn.Linear(d, 3 * cfg.J)
        self.dec_vis = nn.Linear(d, 2)

    # -- tokenizers -----------------------------------------------------------

    def encode_obs(self, x_obs, cam, c_left, c_right, img) -> torch.Tensor:
        """``(..., J, 3), (..., 9), (..., 2), (..., 2), (..., d_img) -> (..., d_z)``."""
        cfg = self.cfg
        lead = x_obs.shape[:-2]
        if tuple(x_obs.shape[-2:]) != (cfg.J, 3):
            raise DenoiserContractError(f"noisy joints must end in ({cfg.J}, 3), got {tuple(x_obs.shape)}")
        for name, t, w in (("c_cam", cam, 9), ("c_left", c_left, 2), ("c_right", c_right, 2), ("c_img", img, cfg.d_img)):
            if tuple(t.shape) != (*lead, w):
                raise DenoiserContractError(f"{name} has shape {tuple(t.shape)}, expected {(*lead, w)}")
        flat = torch.cat([x_obs.reshape(*lead, 3 * cfg.J), cam, c_left, c_right, img], dim=-1)
        return self.enc_obs(flat)

    def encode_fut(self, x_fut) -> torch.Tensor:
        if tuple(x_fut.shape[-2:]) != (self.cfg.J, 3):
            raise DenoiserContractError(f"noisy joints must end in ({self.cfg.J}, 3), got {tuple(x_fut.shape)}")
        return self.enc_fut(x_fut.reshape(*x_fut.shape[:-2], 3 * self.cfg.J))

    # -- forward --------------------------------------------------------------

    def forward(self, x_n: torch.Tensor, cond: ObsConditions, n):
        """Predict clean joints and observation-time visibility.

        ``x_n``: (B, T+F, J, 3) or unbatched (T+F, J, 3); ``n``: int or (B,).
        Returns ``x0_hat`` shaped like ``x_n`` and ``v_hat`` (B, T, 2) in (0, 1).
        """
        cfg = self.cfg
        unbatched = x_n.dim() == 3
        if unbatched:
            x_n = x_n[None]
            cond = ObsConditions(cond.cam[None], cond.hands2d[None], cond.img[None])
        B = x_n.shape[0]
        if tuple(x_n.shape[1:]) != (cfg.T + cfg.F, cfg.J, 3):
            raise DenoiserContractError(f"x_n has shape {tuple(x_n.shape)}, expected (B, {cfg.T + cfg.F}, {cfg.J}, 3)")
        if cond.cam.shape[:2] != (B, cfg.T) or cond.hands2d.shape[:2] != (B, cfg.T) or cond.img.shape[:2] != (B, cfg.T):
            raise DenoiserContractError(f"conditions must cover exactly {cfg.T} observation frames")
        if not isinstance(n, torch.Tensor):
            n = torch.full((B,), int(n), dtype=torch.long)
        n = n.reshape(-1).expand(B) if n.numel() == 1 else n
        if bool((n < 1).any()) or bool((n > cfg.N).any()):
            raise DenoiserContractError(f"diffusion step outside [1, {cfg.N}]")

        z_obs = self.encode_obs(x_n[:, :cfg.T], cond.cam, cond.hands2d[..., 0, :], cond.hands2d[..., 1, :], cond.img)
        z_fut = self.encode_fut(x_n[:, cfg.T:])
        tokens = torch.cat([z_obs, z_fut], dim=1)
        emb = self.noise_proj(sinusoidal_embedding(n, cfg.d_z).to(tokens.dtype))
        tokens = tokens + emb[:, None, :] + self.pos.to(tokens.dtype)[None]
        h = self.norm(self.trunk(tokens))
        x0_hat = self.dec_joint(h).reshape(B, cfg.T + cfg.F, cfg.J, 3)
        # keep probabilities strictly inside (0, 1) at the dtype's resolution
        eps = 1e-6 if h.dtype in (torch.float32, torch.float16, torch.bfloat16) else 1e-12
        v_hat = torch.sigmoid(self.dec_vis(h[:, :cfg.T])).clamp(eps, 1.0 - eps)
        if unbatched:
            return x0_hat[0], v_hat[0]
        return x0_hat, v_hat


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def save_checkpoint(path, model: Denoiser, extra: dict | None = None) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "denoiser_config": model.cfg.to_dict(),
        "state_dict": model.state_dict(),
    }
    if extra:
        payload.update(extra)
    torch.save(payload, path)


def load_checkpoint(path, map_location="cpu"):
    """Returns ``(model, payload)``; the model is in eval mode."""
    payload = torch.load(path, map_location=map_location, weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a denoiser checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    cfg = DenoiserConfig(**payload["denoiser_config"])
    model = Denoiser(cfg)
    dtype = next(iter(payload["state_dict"].values())).dtype
    model.to(dtype)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload
