"""Egocentric 3D hand and body forecasting with a conditional diffusion model.

Modules: ``geometry`` (rotations, cameras, canonical frame), ``data`` (records
and datasets), ``synthgen`` (synthetic sequences), ``diffusion`` (schedule and
sampler), ``denoiser`` (transformer), ``training``, ``metrics``,
``baselines``, ``evaluation``, ``plotting`` and ``cli``.
"""

__version__ = "0.1.0"
