"""Command-line entry point: ``egoforecast {gen,train,eval,forecast,plot}``.

Settings resolve as defaults < ``--config`` file < ``EGOFORECAST_*``
environment variables < flags (``--set key=value`` reaches any key).  The
resolved settings are written to the output location before any long work.
Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np
import torch

from . import config as C
from .data import SIDES, WRIST_INDEX, DataError, DatasetStats, compute_stats, load_dataset
from .denoiser import load_checkpoint
from .evaluation import (CVMForecaster, DiffusionForecaster, GroundTruthForecaster, StaticForecaster,
                         evaluate, format_table, load_reports, save_reports)
from .geometry import in_view
from .synthgen import generate_dataset

FORECAST_VERSION = "v1"


class UsageError(Exception):
    pass


def _env_help() -> str:
    keys = "\n".join(f"  {k:<26} {C.env_name(k):<36} {s.help} (default {s.default})"
                     for k, s in C.SETTINGS.items())
    return ("settings (config-file key, environment variable):\n" + keys +
            "\n\nexit codes: 0 success, 1 runtime failure, 2 usage/config error")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="egoforecast", description="Egocentric hand and body forecasting toolkit.",
                                epilog=_env_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="flat key = value settings file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any setting (repeatable)")

    g = sub.add_parser("gen", help="write synthetic train/val datasets")
    common(g)
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--seed", type=int)
    g.add_argument("--n", type=int, help="training sequences")
    g.add_argument("--n-val", type=int, help="validation sequences")
    g.add_argument("--feature-mode", choices=("zeros", "scene-encoding"))
    g.add_argument("--d-img", type=int)

    t = sub.add_parser("train", help="train the denoiser")
    common(t)
    t.add_argument("--data", required=True, help="training dataset file")
    t.add_argument("--out", required=True, help="run directory")
    t.add_argument("--iterations", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--diffusion-steps", type=int)
    t.add_argument("--resume", help="checkpoint to continue from")

    e = sub.add_parser("eval", help="score a checkpoint and baselines")
    common(e)
    e.add_argument("--data", required=True, help="evaluation dataset file")
    e.add_argument("--ckpt", help="model checkpoint")
    e.add_argument("--out", help="directory for report.jsonl / report.txt")
    e.add_argument("--baselines", help="comma list from static,cvm")
    e.add_argument("--stats", help="training statistics file (default: stats.json next to --ckpt)")
    e.add_argument("--gt-as-pred", action="store_true", help="sanity mode: score ground truth against itself")
    e.add_argument("--seed", type=int)

    f = sub.add_parser("forecast", help="forecast one sequence")
    common(f)
    f.add_argument("--ckpt", required=True)
    f.add_argument("--data", required=True)
    f.add_argument("--id", required=True, help="sequence id")
    f.add_argument("--out", required=True, help="output forecast file (.json)")
    f.add_argument("--seed", type=int)

    pl = sub.add_parser("plot", help="render forecasts and reports")
    common(pl)
    pl.add_argument("--forecast", help="forecast file from the forecast command")
    pl.add_argument("--report", help="report file from the eval command")
    pl.add_argument("--per-timestep", action="store_true", help="draw error against future step from --report")
    pl.add_argument("--out", required=True, help="output directory")
    return p


_FLAG_KEYS = {
    "gen": {"seed": "gen.seed", "n": "gen.n", "n_val": "gen.n_val", "feature_mode": "gen.feature_mode",
            "d_img": "gen.d_img"},
    "train": {"iterations": "train.iterations", "seed": "train.seed", "lr": "train.learning_rate",
              "batch_size": "train.batch_size", "diffusion_steps": "train.N"},
    "eval": {"seed": "eval.seed", "baselines": "eval.baselines"},
    "forecast": {"seed": "eval.seed"},
    "plot": {},
}


def resolve_args(args) -> dict:
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise C.ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value
    for attr, key in _FLAG_KEYS[args.command].items():
        if getattr(args, attr) is not None:
            overrides[key] = getattr(args, attr)
    return C.resolve(args.config, overrides)


def _load(path, **kw):
    if not os.path.exists(path):
        raise UsageError(f"dataset not found: {path}")
    return load_dataset(path, **kw)


def _fps(seqs) -> float:
    return float(seqs[0].meta.get("fps", 10.0)) if seqs else 10.0


def _threads(cfg):
    if cfg["train.threads"] > 0:
        torch.set_num_threads(cfg["train.threads"])


# ---------------------------------------------------------------------------

def cmd_gen(args, cfg) -> int:
    train_cfg = C.gen_config(cfg)
    val_cfg = C.gen_config(cfg, n=cfg["gen.n_val"])
    C.write_resolved(cfg, args.out)
    summary = {
        "train": generate_dataset(train_cfg, os.path.join(args.out, "train.jsonl"), stream=0),
        "val": generate_dataset(val_cfg, os.path.join(args.out, "val.jsonl"), stream=1),
    }
    for split, s in summary.items():
        print(f"{split}: {s['n_sequences']} sequences, {s['n_in_view_pairs']} in-view pairs, "
              f"{s['n_out_of_view_pairs']} out-of-view pairs")
    return 0


def cmd_train(args, cfg) -> int:
    from .training import resume_state, train
    tc = C.train_config(cfg)
    if cfg["train.dtype"] not in ("float32", "float64"):
        raise C.ConfigError(f"train.dtype must be float32 or float64, got {cfg['train.dtype']!r}")
    if args.resume and not os.path.exists(args.resume):
        raise UsageError(f"checkpoint not found: {args.resume}")
    seqs = _load(args.data)
    if not seqs:
        raise UsageError(f"dataset {args.data} is empty")
    s0 = seqs[0]
    mc = C.model_config(cfg, s0.features.shape[1], s0.T, s0.F, s0.J)
    C.write_resolved(cfg, args.out)
    _threads(cfg)
    state = None
    if args.resume:
        state = resume_state(args.resume, tc)
        _check_compatible(state.model.cfg, seqs, args.resume)
        for key, got, want in (("train.N", tc.N, state.model.cfg.N), ("train.schedule", tc.schedule, state.model.cfg.schedule)):
            if got != want:
                raise C.ConfigError(f"{key}={got} differs from the checkpoint's {want}")
    stats = compute_stats(seqs)
    with open(os.path.join(args.out, "stats.json"), "w", encoding="utf-8") as fh:
        json.dump(stats.to_dict(), fh)
    every = max(1, tc.iterations // 20)

    def progress(it, parts):
        if it % every == 0 or it == tc.iterations:
            print(f"iter {it:>7d}  L_joint {parts.joint:.4f}  L_vis {parts.vis:.4f}  "
                  f"L_reproj {parts.reproj:.4f}  L_total {parts.total:.4f}", file=sys.stderr, flush=True)

    dtype = torch.float64 if cfg["train.dtype"] == "float64" else torch.float32
    state = train(seqs, tc, mc, out_dir=args.out, state=state, dtype=dtype, progress=progress)
    print(f"trained to iteration {state.iteration}; checkpoint {os.path.join(args.out, 'model.pt')}")
    return 0


def _check_compatible(mcfg, seqs, source):
    s0 = seqs[0]
    for field, want in (("J", s0.J), ("T", s0.T), ("F", s0.F), ("d_img", s0.features.shape[1])):
        got = getattr(mcfg, field)
        if got != want:
            raise C.ConfigError(f"{source}: checkpoint {field}={got} but data has {field}={want}")


def _load_model(path, seqs):
    if not os.path.exists(path):
        raise UsageError(f"checkpoint not found: {path}")
    model, payload = load_checkpoint(path)
    _check_compatible(model.cfg, seqs, path)
    return model, payload


def _stats(args):
    path = args.stats or (os.path.join(os.path.dirname(args.ckpt), "stats.json") if args.ckpt else None)
    if path is None or not os.path.exists(path):
        raise UsageError("the static baseline needs training statistics: pass --stats or a --ckpt with stats.json")
    with open(path, encoding="utf-8") as fh:
        return DatasetStats.from_dict(json.load(fh))


def cmd_eval(args, cfg) -> int:
    baselines = [b.strip().lower() for b in cfg["eval.baselines"].split(",") if b.strip()]
    unknown = set(baselines) - {"static", "cvm"}
    if unknown:
        raise C.ConfigError(f"unknown baselines {sorted(unknown)}")
    if not args.ckpt and not args.gt_as_pred and not baselines:
        raise UsageError("nothing to evaluate: pass --ckpt, --baselines or --gt-as-pred")
    seqs = _load(args.data)
    if not seqs:
        raise UsageError(f"dataset {args.data} is empty")
    forecasters = []
    if args.gt_as_pred:
        forecasters.append(GroundTruthForecaster())
    if args.ckpt:
        model, _ = _load_model(args.ckpt, seqs)
        forecasters.append(DiffusionForecaster(model, seed=cfg["eval.seed"], batch_size=cfg["eval.batch_size"]))
    if "static" in baselines:
        forecasters.append(StaticForecaster(_stats(args)))
    if "cvm" in baselines:
        forecasters.append(CVMForecaster())
    if args.out:
        C.write_resolved(cfg, args.out)
    _threads(cfg)
    fps = _fps(seqs)
    reports = [evaluate(f, seqs, fps) for f in forecasters]
    table = format_table(reports)
    print(table)
    if args.out:
        save_reports(reports, os.path.join(args.out, "report.jsonl"))
        with open(os.path.join(args.out, "report.txt"), "w", encoding="utf-8") as fh:
            fh.write(table + "\n")
    return 0


def forecast_record(model, seq, seed: int) -> dict:
    """Single-sample forecast of one sequence plus what plotting needs."""
    joints, vhat = DiffusionForecaster(model, seed=seed, batch_size=1)([seq])
    joints, vhat = joints[0], vhat[0]
    recheck = [[in_view(seq.obs_poses[t], joints[t, WRIST_INDEX[side]]) for side in SIDES]
               for t in range(seq.T)]
    first = seq.obs_poses[0]
    return {
        "v": FORECAST_VERSION, "id": seq.id, "seed": seed, "T": seq.T, "F": seq.F, "J": seq.J,
        "fps": _fps([seq]),
        "joints": joints.tolist(), "v_hat": vhat.tolist(), "in_view": recheck,
        "gt_joints": seq.joints.tolist(), "gt_visible": seq.visible.tolist(),
        "camera": [{"r6": p.rotation.tolist(), "t": p.translation.tolist()} for p in seq.obs_poses],
        "intrinsics": list(first.intrinsics), "image_size": list(first.image_size),
    }


def cmd_forecast(args, cfg) -> int:
    seqs = _load(args.data)
    match = [s for s in seqs if s.id == args.id]
    if not match:
        raise UsageError(f"sequence id {args.id!r} not found in {args.data}")
    model, _ = _load_model(args.ckpt, match)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    C.write_resolved(cfg, out_dir, name=os.path.basename(args.out) + ".config.txt")
    _threads(cfg)
    rec = forecast_record(model, match[0], cfg["eval.seed"])
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(rec, fh, separators=(",", ":"))
    agree = np.mean((np.asarray(rec["v_hat"]) > 0.5) == np.asarray(rec["in_view"]))
    print(f"{args.id}: {rec['T'] + rec['F']} frames written to {args.out}; "
          f"visibility head agrees with reprojected wrists on {agree:.0%} of observation frames")
    return 0


def cmd_plot(args, cfg) -> int:
    from . import plotting
    if not args.forecast and not args.report:
        raise UsageError("nothing to plot: pass --forecast and/or --report")
    if args.per_timestep and not args.report:
        raise UsageError("--per-timestep needs --report")
    for path in filter(None, (args.forecast, args.report)):
        if not os.path.exists(path):
            raise UsageError(f"input not found: {path}")
    reports = None
    if args.report:
        reports = load_reports(args.report)
        if not reports:
            raise UsageError(f"report {args.report} is empty")
        if args.per_timestep and not any(r.per_step for r in reports):
            raise UsageError(f"report {args.report} has no per-step errors")
    C.write_resolved(cfg, args.out)
    written = []
    if args.forecast:
        with open(args.forecast, encoding="utf-8") as fh:
            fc = json.load(fh)
        for name, fn in (("topdown", plotting.plot_topdown), ("overlay", plotting.plot_overlay)):
            path = os.path.join(args.out, f"{fc['id']}_{name}.png")
            fn(fc, path)
            written.append(path)
    if args.per_timestep:
        path = os.path.join(args.out, "ade_per_timestep.png")
        plotting.plot_per_timestep(reports, path)
        written.append(path)
    for path in written:
        print(path)
    return 0


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "forecast": cmd_forecast, "plot": cmd_plot}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:          # argparse reports usage errors as exit 2
        return int(e.code or 0)
    try:
        cfg = resolve_args(args)
        return COMMANDS[args.command](args, cfg)
    except (UsageError, C.ConfigError) as e:
        print(f"egoforecast {args.command}: error: {e}", file=sys.stderr)
        return 2
    except (DataError, OSError, RuntimeError, ValueError) as e:
        print(f"egoforecast {args.command}: failed: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
