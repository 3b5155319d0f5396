"""Forecasters, per-(sequence, side) scoring and report assembly."""
from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
import torch

from . import metrics as M
from .baselines import baseline_static, cvm_prediction
from .data import HAND_SLICE, N_BODY, SIDES, WRIST_INDEX, DatasetStats, Sequence, partition_by_view
from .denoiser import Denoiser
from .diffusion import DiffusionSchedule, make_schedule, sample
from .training import collate

REPORT_VERSION = "v1"
PARTITIONS = ("in_view", "out_of_view", "all")
SIDE_KEYS = ("left", "right", "pooled")
HAND_METRICS = ("ADE", "FDE", "MPJPE", "MPJPE-F", "MPJVE", "WR-MPJPE-obs")


# ---------------------------------------------------------------------------
# Forecasters: callables mapping sequences to (joints (B, T+F, J, 3), vis or None)
# ---------------------------------------------------------------------------

class GroundTruthForecaster:
    name = "ground-truth"

    def __call__(self, seqs):
        return np.stack([s.joints for s in seqs]), np.stack([s.visible for s in seqs]).astype(float)


class StaticForecaster:
    name = "Static"

    def __init__(self, stats: DatasetStats):
        self.stats = stats

    def __call__(self, seqs):
        return np.stack([baseline_static(s, self.stats) for s in seqs]), None


class CVMForecaster:
    """Constant velocity on ground-truth past 3D joints (oracle-privileged input)."""
    name = "CVM"

    def __call__(self, seqs):
        return np.stack([cvm_prediction(s) for s in seqs]), None


class DiffusionForecaster:
    """One reverse-diffusion sample per sequence from a fixed seed."""

    name = "Diffusion"

    def __init__(self, model: Denoiser, schedule: DiffusionSchedule | None = None,
                 seed: int = 0, batch_size: int = 64):
        self.model = model
        self.schedule = schedule or make_schedule(model.cfg.schedule, model.cfg.N)
        if self.schedule.N != model.cfg.N:
            raise ValueError(f"schedule N={self.schedule.N} differs from model N={model.cfg.N}")
        self.seed = seed
        self.batch_size = batch_size

    @torch.no_grad()
    def __call__(self, seqs):
        self.model.eval()
        dtype = next(self.model.parameters()).dtype
        gen = torch.Generator().manual_seed(self.seed)
        preds, vis = [], []
        for i in range(0, len(seqs), self.batch_size):
            batch = collate(seqs[i:i + self.batch_size], dtype)
            init = torch.randn(batch.x0.shape, generator=gen, dtype=dtype)
            x0, v = sample(lambda x, n: self.model(x, batch.cond, n), init, self.schedule, gen)
            preds.append(x0.double().numpy())
            vis.append(v.double().numpy())
        return np.concatenate(preds), np.concatenate(vis)


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------

def score_side(pred: np.ndarray, seq: Sequence, side: str, fps: float) -> dict:
    """All hand metrics for one (sequence, side); undefined entries are nan."""
    T = seq.T
    wi = WRIST_INDEX[side]
    hs = HAND_SLICE[side]
    gt_f, m_f = seq.fut_joints, seq.fut_mask
    out = {}
    wmask = m_f[:, wi]
    if wmask.all():
        out["ADE"] = M.ade(pred[T:, wi], gt_f[:, wi])
        out["FDE"] = M.fde(pred[T:, wi], gt_f[:, wi])
    elif wmask.any():
        d = np.linalg.norm(pred[T:, wi] - gt_f[:, wi], axis=-1)
        out["ADE"] = float(d[wmask].mean())
        out["FDE"] = float(d[-1]) if wmask[-1] else math.nan
    else:
        out["ADE"] = out["FDE"] = math.nan
    out["MPJPE"] = M.mpjpe(pred[T:, hs], gt_f[:, hs], m_f[:, hs])
    out["MPJPE-F"] = M.mpjpe_f(pred[T:, hs], gt_f[:, hs], m_f[:, hs])
    out["MPJVE"] = M.mpjve(pred[T:, hs], gt_f[:, hs], fps, m_f[:, hs]) if seq.F >= 2 else math.nan
    out["WR-MPJPE-obs"] = M.wrist_relative_mpjpe(pred[:T, hs], seq.obs_joints[:, hs], seq.obs_mask[:, hs])
    d = np.linalg.norm(pred[T:, wi] - gt_f[:, wi], axis=-1)
    out["_per_step"] = np.where(wmask, d, np.nan)
    return out


def score_body(pred: np.ndarray, seq: Sequence, fps: float) -> dict:
    T = seq.T
    b = slice(0, N_BODY)
    gt, m = seq.joints, seq.mask
    return {
        "obs_MPJPE": M.mpjpe(pred[:T, b], gt[:T, b], m[:T, b]),
        "obs_MPJVE": M.mpjve(pred[:T, b], gt[:T, b], fps, m[:T, b]) if T >= 2 else math.nan,
        "fut_MPJPE": M.mpjpe(pred[T:, b], gt[T:, b], m[T:, b]),
        "fut_MPJVE": M.mpjve(pred[T:, b], gt[T:, b], fps, m[T:, b]) if seq.F >= 2 else math.nan,
    }


@dataclass
class Cell:
    value: float
    count: int
    undefined: int = 0


def _cell(values) -> Cell:
    v = np.asarray(values, dtype=np.float64)
    ok = ~np.isnan(v)
    n = int(ok.sum())
    return Cell(float(v[ok].mean()) if n else math.nan, n, int((~ok).sum()))


@dataclass
class MetricsReport:
    method: str
    cells: dict = field(default_factory=dict)        # (partition, side, metric) -> Cell
    gamma: dict = field(default_factory=dict)        # (interval label, metric) -> Cell
    body: dict = field(default_factory=dict)         # metric -> Cell
    per_step: dict = field(default_factory=dict)     # partition -> list of mean wrist errors
    pair_counts: dict = field(default_factory=dict)  # partition -> number of (sequence, side) pairs
    visibility_accuracy: float | None = None
    notes: list = field(default_factory=list)

    def value(self, partition: str, side: str, metric: str) -> float:
        return self.cells[(partition, side, metric)].value

    def to_records(self) -> list[dict]:
        base = {"v": REPORT_VERSION, "method": self.method}
        recs = [{**base, "kind": "hand", "partition": p, "side": s, "metric": m,
                 "value": _num(c.value), "count": c.count, "undefined": c.undefined}
                for (p, s, m), c in self.cells.items()]
        recs += [{**base, "kind": "gamma", "interval": g, "metric": m, "value": _num(c.value),
                  "count": c.count, "undefined": c.undefined} for (g, m), c in self.gamma.items()]
        recs += [{**base, "kind": "body", "metric": m, "value": _num(c.value), "count": c.count,
                  "undefined": c.undefined} for m, c in self.body.items()]
        recs += [{**base, "kind": "per_step", "partition": p, "values": [_num(x) for x in vals]}
                 for p, vals in self.per_step.items()]
        recs.append({**base, "kind": "summary", "pair_counts": self.pair_counts,
                     "visibility_accuracy": self.visibility_accuracy, "notes": self.notes})
        return recs

    @classmethod
    def from_records(cls, recs: list[dict]) -> "MetricsReport":
        if not recs:
            raise ValueError("empty report")
        rep = cls(recs[0]["method"])
        for r in recs:
            if r.get("v") != REPORT_VERSION:
                raise ValueError(f"unsupported report version {r.get('v')!r}")
            c = lambda: Cell(_unnum(r["value"]), r["count"], r["undefined"])
            if r["kind"] == "hand":
                rep.cells[(r["partition"], r["side"], r["metric"])] = c()
            elif r["kind"] == "gamma":
                rep.gamma[(r["interval"], r["metric"])] = c()
            elif r["kind"] == "body":
                rep.body[r["metric"]] = c()
            elif r["kind"] == "per_step":
                rep.per_step[r["partition"]] = [_unnum(x) for x in r["values"]]
            elif r["kind"] == "summary":
                rep.pair_counts = r["pair_counts"]
                rep.visibility_accuracy = r["visibility_accuracy"]
                rep.notes = r["notes"]
        return rep


def _num(x):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else float(x)


def _unnum(x):
    return math.nan if x is None else float(x)


def evaluate(forecaster, dataset: list[Sequence], fps: float = 10.0, name: str | None = None) -> MetricsReport:
    preds, vhat = forecaster(dataset)
    report = MetricsReport(name or getattr(forecaster, "name", type(forecaster).__name__))
    if isinstance(forecaster, CVMForecaster):
        report.notes.append("CVM consumes ground-truth past 3D joints")
    parts = partition_by_view(dataset)
    where = {pair: p for p, pairs in parts.items() for pair in pairs}
    report.pair_counts = {p: len(v) for p, v in parts.items()}
    report.pair_counts["all"] = sum(report.pair_counts.values())

    samples = defaultdict(list)        # (partition, side) -> list of score dicts
    gamma_samples = defaultdict(list)
    body_samples = []
    for i, seq in enumerate(dataset):
        body_samples.append(score_body(preds[i], seq, fps))
        for s, side in enumerate(SIDES):
            sc = score_side(preds[i], seq, side, fps)
            p = where[(i, side)]
            for key in ((p, side), (p, "pooled"), ("all", side), ("all", "pooled")):
                samples[key].append(sc)
            g = M.bin_gamma(M.oov_ratio(seq.visible[:, s]))
            if g is not None:
                gamma_samples[M.GAMMA_LABELS[g]].append(sc)

    for p in PARTITIONS:
        for side in SIDE_KEYS:
            rows = samples.get((p, side), [])
            for m in HAND_METRICS:
                report.cells[(p, side, m)] = _cell([r[m] for r in rows])
        rows = samples.get((p, "pooled"), [])
        if rows:
            report.per_step[p] = np.nanmean(np.stack([r["_per_step"] for r in rows]), axis=0).tolist()
    for label in M.GAMMA_LABELS:
        rows = gamma_samples.get(label, [])
        for m in ("ADE", "FDE"):
            report.gamma[(label, m)] = _cell([r[m] for r in rows])
    for m in ("obs_MPJPE", "obs_MPJVE", "fut_MPJPE", "fut_MPJVE"):
        report.body[m] = _cell([b[m] for b in body_samples])
    if vhat is not None:
        truth = np.stack([s.visible for s in dataset])
        report.visibility_accuracy = float(((np.asarray(vhat) > 0.5) == truth).mean())
    return report


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def save_reports(reports: list[MetricsReport], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rep in reports:
            for rec in rep.to_records():
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def load_reports(path) -> list[MetricsReport]:
    by_method: dict[str, list] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                by_method.setdefault(rec["method"], []).append(rec)
    return [MetricsReport.from_records(r) for r in by_method.values()]


def _fmt(x: float) -> str:
    return "   -  " if x is None or math.isnan(x) else f"{x:6.3f}"


def format_table(reports: list[MetricsReport]) -> str:
    """Plain-text forecast table, out-of-view-ratio table and body table."""
    lines = []
    head = f"{'Method':<14}" + "".join(f"{p[:11]:>16}" for p in PARTITIONS) + "  |" + \
        "".join(f"{p[:11]:>20}" for p in PARTITIONS)
    lines.append("Hand trajectory (ADE FDE) | hand pose (MPJPE MPJPE-F), metres, pooled sides")
    lines.append(head)
    for r in reports:
        traj = "".join(f"  {_fmt(r.value(p, 'pooled', 'ADE'))} {_fmt(r.value(p, 'pooled', 'FDE'))}"
                       for p in PARTITIONS)
        pose = "".join(f"      {_fmt(r.value(p, 'pooled', 'MPJPE'))} {_fmt(r.value(p, 'pooled', 'MPJPE-F'))}"
                       for p in PARTITIONS)
        lines.append(f"{r.method:<14}{traj}  |{pose}")
    if reports:
        counts = reports[0].pair_counts
        lines.append("pairs: " + ", ".join(f"{k}={v}" for k, v in counts.items()))
    lines.append("")
    lines.append("ADE / FDE by out-of-view ratio interval")
    lines.append(f"{'Method':<14}" + "".join(f"{g:>16}" for g in M.GAMMA_LABELS))
    for r in reports:
        lines.append(f"{r.method:<14}" + "".join(
            f"  {_fmt(r.gamma[(g, 'ADE')].value)} {_fmt(r.gamma[(g, 'FDE')].value)}" for g in M.GAMMA_LABELS))
    if reports:
        lines.append("count         " + "".join(f"{reports[0].gamma[(g, 'ADE')].count:>16d}" for g in M.GAMMA_LABELS))
    lines.append("")
    lines.append(f"{'Body':<14}{'obs MPJPE':>11}{'obs MPJVE':>11}{'fut MPJPE':>11}{'fut MPJVE':>11}{'vis acc':>9}")
    for r in reports:
        acc = "   -" if r.visibility_accuracy is None else f"{r.visibility_accuracy:9.3f}"
        lines.append(f"{r.method:<14}" + "".join(f"{_fmt(r.body[m].value):>11}"
                                                 for m in ("obs_MPJPE", "obs_MPJVE", "fut_MPJPE", "fut_MPJVE")) + acc)
    for r in reports:
        for note in r.notes:
            lines.append(f"note [{r.method}]: {note}")
    return "\n".join(lines)
