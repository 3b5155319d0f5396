"""DDPM machinery with an x0-predicting denoiser.

Schedule tables are float64 numpy arrays indexed by step ``n = 0..N``; the
arithmetic helpers accept numpy arrays or torch tensors (the coefficients are
plain floats, or broadcastable per-batch tensors when ``n`` is a tensor).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


class DiffusionError(ValueError):
    pass


class StepRangeError(DiffusionError):
    pass


class SingularStepError(DiffusionError):
    pass


class ContractError(DiffusionError):
    pass


@dataclass(frozen=True)
class DiffusionSchedule:
    N: int
    alpha: np.ndarray       # (N+1,), alpha[0] = 1
    alpha_bar: np.ndarray   # (N+1,), cumulative product
    sigma: np.ndarray       # (N+1,), sigma[1] = 0

    @property
    def beta(self) -> np.ndarray:
        return 1.0 - self.alpha

    def posterior_coefficients(self, n: int) -> tuple[float, float]:
        """Weights on x_n and on the predicted x0 in the posterior mean."""
        self._check(n)
        a, ab, ab_prev = self.alpha[n], self.alpha_bar[n], self.alpha_bar[n - 1]
        denom = 1.0 - ab
        if denom < 1e-12:
            raise SingularStepError(f"1 - alpha_bar[{n}] = {denom:.3g} is singular")
        return (float(np.sqrt(a) * (1.0 - ab_prev) / denom),
                float(np.sqrt(ab_prev) * (1.0 - a) / denom))

    def _check(self, n: int):
        if not 1 <= n <= self.N:
            raise StepRangeError(f"step {n} outside [1, {self.N}]")


SCHEDULE_KINDS = ("linear", "scaled-linear")


def make_schedule(kind: str = "linear", N: int = 1000,
                  beta_start: float | None = None, beta_end: float | None = None) -> DiffusionSchedule:
    """Linear beta ramp, 1e-4 to 0.02 by default.

    ``"scaled-linear"`` multiplies the default endpoints by 1000 / N (capped
    below 1) so that alpha_bar[N] ends near zero for short chains as well; at
    N = 1000 both kinds coincide.
    """
    if N < 1:
        raise DiffusionError(f"need at least one diffusion step, got N={N}")
    if kind not in SCHEDULE_KINDS:
        raise DiffusionError(f"unknown schedule kind {kind!r}")
    scale = 1000.0 / N if kind == "scaled-linear" else 1.0
    lo = 1e-4 * scale if beta_start is None else beta_start
    hi = 0.02 * scale if beta_end is None else beta_end
    beta = np.linspace(lo, hi, N) if N > 1 else np.array([lo])
    beta = np.clip(beta, 1e-12, 0.999)
    alpha = np.concatenate([[1.0], 1.0 - beta])
    alpha_bar = np.cumprod(alpha)
    sigma = np.concatenate([[0.0], np.sqrt(beta)])
    sigma[1] = 0.0
    return DiffusionSchedule(N, alpha, alpha_bar, sigma)


def _per_item(table: np.ndarray, n, like):
    """Look up ``table[n]`` as a float or as a tensor broadcastable to ``like``."""
    if isinstance(n, torch.Tensor):
        vals = torch.as_tensor(table, dtype=like.dtype, device=like.device)[n]
        return vals.reshape(-1, *([1] * (like.dim() - 1)))
    return float(table[n])


def q_sample(x0, n, eps, s: DiffusionSchedule):
    """Forward corruption x_n = sqrt(ab_n) x0 + sqrt(1 - ab_n) eps.

    ``n`` may be an int (0 allowed as the identity edge) or a per-batch tensor.
    """
    if tuple(eps.shape) != tuple(x0.shape):
        raise ContractError(f"noise shape {tuple(eps.shape)} != data shape {tuple(x0.shape)}")
    if isinstance(n, torch.Tensor):
        if bool((n < 0).any()) or bool((n > s.N).any()):
            raise StepRangeError(f"steps outside [0, {s.N}]")
    elif not 0 <= n <= s.N:
        raise StepRangeError(f"step {n} outside [0, {s.N}]")
    a = _per_item(np.sqrt(s.alpha_bar), n, x0)
    b = _per_item(np.sqrt(1.0 - s.alpha_bar), n, x0)
    return a * x0 + b * eps


def posterior_mean(x_n, x0_hat, n: int, s: DiffusionSchedule):
    c_x, c_0 = s.posterior_coefficients(n)
    return c_x * x_n + c_0 * x0_hat


def reverse_step(x_n, x0_hat, n: int, s: DiffusionSchedule, noise):
    if tuple(noise.shape) != tuple(x_n.shape):
        raise ContractError(f"noise shape {tuple(noise.shape)} != state shape {tuple(x_n.shape)}")
    mu = posterior_mean(x_n, x0_hat, n, s)
    sig = float(s.sigma[n])
    if sig == 0.0:
        return mu
    return mu + sig * noise


def sample(denoise_fn, init_noise: torch.Tensor, s: DiffusionSchedule,
           noise_source: torch.Generator | None = None):
    """Run the reverse chain from ``n = N`` down to 1.

    ``denoise_fn(x_n, n)`` returns ``(x0_hat, vis)``; the result is the final
    ``(x0, vis)`` pair.  Fresh noise comes from ``noise_source``.
    """
    x = init_noise
    vis = None
    for n in range(s.N, 0, -1):
        x0_hat, vis = denoise_fn(x, n)
        if tuple(x0_hat.shape) != tuple(x.shape):
            raise ContractError(f"denoiser returned shape {tuple(x0_hat.shape)} for state {tuple(x.shape)}")
        if s.sigma[n] > 0:
            noise = torch.randn(x.shape, generator=noise_source, dtype=x.dtype, device=x.device)
        else:
            noise = torch.zeros_like(x)
        x = reverse_step(x, x0_hat, n, s, noise)
    return x, vis
