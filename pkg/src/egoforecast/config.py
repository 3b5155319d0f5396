"""Layered run configuration: defaults < config file < environment < flags.

Every setting has a dotted, module-scoped key such as ``train.iterations``.
The config file is flat ``key = value`` text with ``#`` comments, and the
environment override for a key is its uppercase form with an ``EGOFORECAST_``
prefix (``EGOFORECAST_TRAIN_ITERATIONS``).
"""
from __future__ import annotations

import os
from dataclasses import dataclass

from .denoiser import DenoiserConfig
from .synthgen import GenConfig
from .training import TrainConfig

ENV_PREFIX = "EGOFORECAST_"


class ConfigError(ValueError):
    """Bad key, bad value or inconsistent settings (a usage error)."""


@dataclass(frozen=True)
class Setting:
    kind: type
    default: object
    help: str


def _mix_to_str(mix: dict) -> str:
    return ",".join(f"{k}:{v:g}" for k, v in mix.items())


_G, _T, _M = GenConfig(), TrainConfig(), DenoiserConfig()

SETTINGS: dict[str, Setting] = {
    "gen.seed": Setting(int, _G.seed, "generator seed"),
    "gen.n": Setting(int, _G.n_sequences, "number of training sequences"),
    "gen.n_val": Setting(int, 64, "number of validation sequences"),
    "gen.fps": Setting(float, _G.fps, "frame rate"),
    "gen.T": Setting(int, _G.T, "observation frames"),
    "gen.F": Setting(int, _G.F, "future frames"),
    "gen.motion_mix": Setting(str, _mix_to_str(_G.motion_mix), "archetype:proportion list"),
    "gen.upper_arm": Setting(float, _G.upper_arm, "upper arm length (m)"),
    "gen.forearm": Setting(float, _G.forearm, "forearm length (m)"),
    "gen.pelvis_height": Setting(float, _G.pelvis_height, "standing pelvis height (m)"),
    "gen.image_w": Setting(int, _G.image_size[0], "image width (px)"),
    "gen.image_h": Setting(int, _G.image_size[1], "image height (px)"),
    "gen.fx": Setting(float, _G.intrinsics[0], "focal length x (px)"),
    "gen.fy": Setting(float, _G.intrinsics[1], "focal length y (px)"),
    "gen.cx": Setting(float, _G.intrinsics[2], "principal point x (px)"),
    "gen.cy": Setting(float, _G.intrinsics[3], "principal point y (px)"),
    "gen.d_img": Setting(int, _G.d_img, "per-frame feature width"),
    "gen.feature_mode": Setting(str, _G.feature_mode, "zeros or scene-encoding"),
    "gen.annotation_dropout": Setting(float, _G.annotation_dropout, "per-group annotation drop rate"),
    "model.d_z": Setting(int, _M.d_z, "token width"),
    "model.n_layers": Setting(int, _M.n_layers, "transformer layers"),
    "model.n_heads": Setting(int, _M.n_heads, "attention heads"),
    "model.d_ff": Setting(int, 0, "feed-forward width, 0 for 4 * d_z"),
    "model.activation": Setting(str, _M.activation, "gelu or relu"),
    "model.positional": Setting(str, _M.positional, "learned or sinusoidal"),
    "train.iterations": Setting(int, _T.iterations, "total optimizer steps"),
    "train.learning_rate": Setting(float, _T.learning_rate, "Adam step size"),
    "train.batch_size": Setting(int, _T.batch_size, "sequences per step"),
    "train.lambda_vis": Setting(float, _T.lambda_vis, "visibility loss weight"),
    "train.lambda_reproj": Setting(float, _T.lambda_reproj, "reprojection loss weight"),
    "train.reproj_min_depth": Setting(float, _T.reproj_min_depth, "skip reprojection terms nearer than this (m)"),
    "train.seed": Setting(int, _T.seed, "initialization and sampling seed"),
    "train.N": Setting(int, _T.N, "diffusion steps"),
    "train.schedule": Setting(str, _T.schedule, "noise schedule: linear or scaled-linear"),
    "train.checkpoint_every": Setting(int, _T.checkpoint_every, "periodic checkpoint interval, 0 for none"),
    "train.log_every": Setting(int, _T.log_every, "loss log interval"),
    "train.dtype": Setting(str, "float32", "float32 or float64"),
    "train.threads": Setting(int, 0, "torch CPU threads, 0 for the library default"),
    "eval.seed": Setting(int, 0, "seed of the single diffusion sample"),
    "eval.batch_size": Setting(int, 64, "sequences per sampling batch"),
    "eval.baselines": Setting(str, "", "comma list from static,cvm"),
}


def parse_value(key: str, text: str):
    if key not in SETTINGS:
        raise ConfigError(f"unknown setting {key!r}")
    kind = SETTINGS[key].kind
    try:
        return kind(text.strip()) if kind is not str else text.strip()
    except ValueError:
        raise ConfigError(f"{key}: cannot read {text!r} as {kind.__name__}") from None


def read_config_file(path) -> dict:
    out = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e.strerror}") from None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        try:
            out[key] = parse_value(key, value)
        except ConfigError as e:
            raise ConfigError(f"{path}:{lineno}: {e}") from None
    return out


def env_name(key: str) -> str:
    return ENV_PREFIX + key.replace(".", "_").upper()


def resolve(config_file=None, overrides: dict | None = None, environ=None) -> dict:
    """Merge the layers into a complete ``{key: value}`` mapping."""
    environ = os.environ if environ is None else environ
    cfg = {k: s.default for k, s in SETTINGS.items()}
    if config_file:
        cfg.update(read_config_file(config_file))
    for key in SETTINGS:
        name = env_name(key)
        if name in environ:
            cfg[key] = parse_value(key, environ[name])
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        cfg[key] = parse_value(key, value) if isinstance(value, str) else SETTINGS[key].kind(value)
    return cfg


def dumps(cfg: dict) -> str:
    return "".join(f"{k} = {cfg[k]}\n" for k in sorted(cfg))


def write_resolved(cfg: dict, out_dir, name: str = "resolved_config.txt") -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(cfg))
    return path


# -- typed views --------------------------------------------------------------

def parse_mix(text: str) -> dict:
    mix = {}
    for item in filter(None, (p.strip() for p in text.split(","))):
        name, sep, val = item.rpartition(":")
        if not sep:
            raise ConfigError(f"gen.motion_mix entry {item!r} is not archetype:proportion")
        try:
            mix[name] = float(val)
        except ValueError:
            raise ConfigError(f"gen.motion_mix proportion {val!r} is not a number") from None
    return mix


def gen_config(cfg: dict, n: int | None = None) -> GenConfig:
    if cfg["gen.n"] <= 0:
        raise ConfigError("gen.n must be positive")
    if cfg["gen.n_val"] < 0:
        raise ConfigError("gen.n_val must be non-negative")
    try:
        return GenConfig(
            seed=cfg["gen.seed"], n_sequences=cfg["gen.n"] if n is None else n, fps=cfg["gen.fps"],
            T=cfg["gen.T"], F=cfg["gen.F"], motion_mix=parse_mix(cfg["gen.motion_mix"]),
            upper_arm=cfg["gen.upper_arm"], forearm=cfg["gen.forearm"], pelvis_height=cfg["gen.pelvis_height"],
            image_size=(cfg["gen.image_w"], cfg["gen.image_h"]),
            intrinsics=(cfg["gen.fx"], cfg["gen.fy"], cfg["gen.cx"], cfg["gen.cy"]),
            d_img=cfg["gen.d_img"], feature_mode=cfg["gen.feature_mode"],
            annotation_dropout=cfg["gen.annotation_dropout"])
    except ValueError as e:
        raise ConfigError(f"invalid generator settings: {e}") from None


def train_config(cfg: dict) -> TrainConfig:
    try:
        return TrainConfig(
            iterations=cfg["train.iterations"], learning_rate=cfg["train.learning_rate"],
            batch_size=cfg["train.batch_size"], lambda_vis=cfg["train.lambda_vis"],
            lambda_reproj=cfg["train.lambda_reproj"], seed=cfg["train.seed"], N=cfg["train.N"],
            schedule=cfg["train.schedule"],
            reproj_min_depth=cfg["train.reproj_min_depth"],
            checkpoint_every=cfg["train.checkpoint_every"], log_every=max(1, cfg["train.log_every"]))
    except ValueError as e:
        raise ConfigError(f"invalid training settings: {e}") from None


def model_config(cfg: dict, d_img: int, T: int, F: int, J: int) -> DenoiserConfig:
    """Model settings; the data determines the feature width and window sizes."""
    try:
        return DenoiserConfig(
            d_z=cfg["model.d_z"], n_layers=cfg["model.n_layers"], n_heads=cfg["model.n_heads"],
            d_img=d_img, T=T, F=F, J=J, N=cfg["train.N"], schedule=cfg["train.schedule"], d_ff=cfg["model.d_ff"] or None,
            activation=cfg["model.activation"], positional=cfg["model.positional"])
    except ValueError as e:
        raise ConfigError(f"invalid model settings: {e}") from None
