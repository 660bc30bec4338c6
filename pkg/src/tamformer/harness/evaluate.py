"""Per-anticipation-time evaluation and report files (CSV / JSON)."""

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from ..errors import ContractError, ParseError
from ..maskgen import LearnedMask, sparsity_stats
from ..model import forward_arrays, query_step_for_time, stack_windows
from ..numerics import no_grad
from .metrics import compute_metrics

CSV_COLUMNS = ("t_a", "acc", "auc", "f1", "n_pos", "n_neg",
               "mean_frames_used", "mean_frames_available")


@dataclass
class TimeRow:
    t_a: float
    acc: float
    auc: Optional[float]  # None when the split holds a single class
    f1: float
    n_pos: int
    n_neg: int
    mean_frames_used: float
    mean_frames_available: float


@dataclass
class MetricsReport:
    rows: List[TimeRow]  # descending t_a
    threshold: float = 0.5
    mask_threshold: float = 0.5
    auc_ties: str = "midrank"
    config: dict = field(default_factory=dict)
    seed: Optional[int] = None

    @property
    def times(self):
        return [r.t_a for r in self.rows]

    @property
    def f1(self):
        return np.array([r.f1 for r in self.rows])

    def row(self, t_a):
        for r in self.rows:
            if r.t_a == t_a:
                return r
        raise KeyError(t_a)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["rows"] = [TimeRow(**r) for r in d.get("rows", [])]
        return cls(**d)


def _batched_outputs(params, samples, batch_size=64):
    """Scores ``[n, T_q]`` and encoder mask rows ``[n, T_enc, T_enc]``."""
    scores, rows = [], []
    with no_grad():
        for i in range(0, len(samples), batch_size):
            chunk = samples[i:i + batch_size]
            out = forward_arrays(params, stack_windows(chunk, params.config))
            scores.append(out.scores.data)
            rows.append(out.mask_e.rows.data)
    return np.concatenate(scores), np.concatenate(rows), out.mask_e.grid_map


def evaluate_at_times(params, samples, times, threshold=0.5, mask_threshold=0.5, seed=None):
    """Metrics at each anticipation time (seconds), latest-to-act first.

    Each sample contributes the score at the query step nearest to
    ``t_a`` seconds before its event. Duplicate times collapse.
    Mask usage is read from the encoder mask row at that step's frame.
    """
    if not samples:
        raise ContractError("evaluate_at_times needs at least one sample")
    uniq = sorted({float(t) for t in times}, reverse=True)
    if not uniq:
        raise ContractError("evaluate_at_times needs at least one time")
    config = params.config
    steps = np.array([[query_step_for_time(s, config, t) for s in samples] for t in uniq])
    scores, mask_rows, grid_map = _batched_outputs(params, samples)
    labels = np.array([s.label for s in samples], dtype=np.int64)
    used, available = sparsity_stats(LearnedMask(mask_rows, grid_map), mask_threshold)
    n = len(samples)
    idx = np.arange(n)
    rows = []
    for t, q in zip(uniq, steps):
        frame = config.query_frames[q]
        m = compute_metrics(scores[idx, q], labels, threshold)
        rows.append(TimeRow(
            t_a=t, acc=m.accuracy, auc=m.auc, f1=m.f1,
            n_pos=int(labels.sum()), n_neg=int(n - labels.sum()),
            mean_frames_used=float(used[idx, frame].mean()),
            mean_frames_available=float(available[idx, frame].mean()),
        ))
    return MetricsReport(rows=rows, threshold=threshold, mask_threshold=mask_threshold,
                         config=config.to_dict(), seed=seed)


def _fmt(v):
    return "" if v is None else f"{v:.4f}"


def emit_report(report, path, fmt=None):
    """Write ``report`` as CSV (4 decimals) or JSON (full precision)."""
    fmt = fmt or ("json" if str(path).endswith(".json") else "csv")
    if fmt not in ("csv", "json"):
        raise ContractError(f"report format must be csv or json, got {fmt!r}")
    rows = sorted(report.rows, key=lambda r: -r.t_a)
    with open(path, "w", newline="") as fh:
        if fmt == "json":
            d = report.to_dict()
            d["rows"] = [asdict(r) for r in rows]
            json.dump(d, fh, indent=2)
            fh.write("\n")
            return
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r.t_a), _fmt(r.acc), _fmt(r.auc), _fmt(r.f1), r.n_pos,
                        r.n_neg, _fmt(r.mean_frames_used), _fmt(r.mean_frames_available)])


def load_report(path):
    """Read a report written by :func:`emit_report` (JSON or CSV)."""
    path = str(path)
    with open(path) as fh:
        text = fh.read()
    if path.endswith(".json"):
        try:
            return MetricsReport.from_dict(json.loads(text))
        except (ValueError, TypeError) as exc:
            raise ParseError(path, f"not a metrics report: {exc}") from exc
    lines = text.splitlines()
    if not lines or tuple(lines[0].split(",")) != CSV_COLUMNS:
        raise ParseError(path, "missing report header", 1)
    rows = []
    for i, rec in enumerate(csv.reader(lines[1:]), start=2):
        try:
            t, acc, auc, f1, npos, nneg, used, avail = rec
            rows.append(TimeRow(float(t), float(acc), float(auc) if auc else None, float(f1),
                                int(npos), int(nneg), float(used), float(avail)))
        except ValueError as exc:
            raise ParseError(path, f"bad report row: {exc}", i) from exc
    return MetricsReport(rows=rows)
