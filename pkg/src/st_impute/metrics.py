"""Imputation and downstream metrics, and the report they are collected in."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .errors import ContractError


def _masked_errors(pred, truth, mask) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    mask = np.ones(pred.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ContractError("metric mask selects no entries")
    return pred[mask] - truth[mask]


def rmse(pred, truth, mask=None) -> float:
    e = _masked_errors(pred, truth, mask)
    return float(np.sqrt(np.mean(e * e)))


def mae(pred, truth, mask=None) -> float:
    return float(np.mean(np.abs(_masked_errors(pred, truth, mask))))


def _binary(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1).astype(bool)
    if s.shape != y.shape:
        raise ContractError(f"{s.size} scores for {y.size} labels")
    if y.all() or not y.any():
        raise ContractError("both classes must be present")
    return s, y


def auc_roc(scores, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney U statistic.

    Tied scores share their average rank, which counts a tied
    positive/negative pair as one half.
    """
    s, y = _binary(scores, labels)
    ranks = rankdata(s)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def pr_auc(scores, labels) -> float:
    """Average precision: sum over thresholds of precision x recall increment.

    Tied scores form a single threshold.
    """
    s, y = _binary(scores, labels)
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    # last index of each run of tied scores
    cut = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(y)[cut]
    fp = (cut + 1) - tp
    precision = tp / (tp + fp)
    recall = tp / y.sum()
    prev = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - prev) * precision))


REPORT_COLUMNS = (
    "method", "pattern", "rate", "rmse", "mae", "n_scored",
    "auc_roc", "pr_auc", "downstream_rmse", "status",
)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


@dataclass
class ImputationReport:
    """Rows keyed by (method, pattern, rate), in insertion order."""

    rows: list[dict] = field(default_factory=list)

    def add(self, method: str, pattern: str, rate: float, **values) -> dict:
        row = {c: None for c in REPORT_COLUMNS}
        row.update(method=method, pattern=pattern, rate=float(rate), status="ok")
        row.update(values)
        self.rows.append(row)
        return row

    def get(self, method: str, pattern: str, rate: float) -> dict:
        for row in self.rows:
            if row["method"] == method and row["pattern"] == pattern and math.isclose(row["rate"], rate):
                return row
        raise KeyError((method, pattern, rate))

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            for row in self.rows:
                w.writerow([_fmt(row[c]) for c in REPORT_COLUMNS])

    @classmethod
    def from_csv(cls, path) -> "ImputationReport":
        report = cls()
        with Path(path).open(newline="") as fh:
            for rec in csv.DictReader(fh):
                row = {}
                for c in REPORT_COLUMNS:
                    v = rec.get(c, "")
                    if c in ("method", "pattern", "status"):
                        row[c] = v
                    elif c == "n_scored":
                        row[c] = int(v) if v else None
                    else:
                        row[c] = float(v) if v else None
                report.rows.append(row)
        return report
