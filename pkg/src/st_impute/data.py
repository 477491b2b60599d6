"""Datasets: long-format CSV ingestion, synthetic sinusoids, normalization.

CSV layout, one row per timestep::

    series_id,t,<feature>...[,label]

An empty cell or the token ``NaN`` marks a missing value. The label, when
present, is repeated on every row of a series (blank rows are allowed).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .objectives import TimeSeriesBatch

MISSING_TOKENS = {"", "nan", "NaN", "NAN"}


@dataclass
class Series:
    series_id: str
    t: np.ndarray
    values: np.ndarray  # [n x f], NaN where missing
    label: float | None = None

    @property
    def natural_missing(self) -> np.ndarray:
        return np.isnan(self.values)

    @property
    def length(self) -> int:
        return self.values.shape[0]


@dataclass
class Normalization:
    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray  # channels whose train std was 0 (std forced to 1)

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def invert(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "constant": self.constant.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalization":
        return cls(np.asarray(d["mean"], float), np.asarray(d["std"], float), np.asarray(d["constant"], bool))


@dataclass
class Dataset:
    series: list[Series]
    feature_names: list[str]
    task: str = "none"
    n_classes: int = 0
    split: dict[str, str] = field(default_factory=dict)
    normalization: Normalization | None = None

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def has_labels(self) -> bool:
        return any(s.label is not None for s in self.series)

    def subset(self, tag: str) -> list[Series]:
        return [s for s in self.series if self.split.get(s.series_id, "train") == tag]

    def fit_normalization(self) -> Normalization:
        """Per-channel z-score stats from observed values of the train split only."""
        train = self.subset("train")
        if not train:
            raise DataError("no training series to normalize on")
        stacked = np.concatenate([s.values for s in train], axis=0)
        mean = np.zeros(self.n_features)
        std = np.ones(self.n_features)
        constant = np.zeros(self.n_features, dtype=bool)
        for j in range(self.n_features):
            col = stacked[:, j]
            col = col[~np.isnan(col)]
            if col.size == 0:
                constant[j] = True
                continue
            mean[j] = col.mean()
            sd = col.std()
            if sd > 0:
                std[j] = sd
            else:
                constant[j] = True
        self.normalization = Normalization(mean, std, constant)
        return self.normalization

    def normalized(self, series: list[Series]) -> list[np.ndarray]:
        if self.normalization is None:
            raise DataError("normalization has not been fitted")
        return [self.normalization.apply(s.values) for s in series]


def infer_task(labels: list[float]) -> tuple[str, int]:
    if not labels:
        return "none", 0
    arr = np.asarray(labels, dtype=np.float64)
    if np.all(arr == np.round(arr)) and arr.min() >= 0:
        return "classification", max(2, int(arr.max()) + 1)
    return "regression", 0


def _parse_float(tok: str, lineno: int, col: str) -> float:
    tok = tok.strip()
    if tok in MISSING_TOKENS:
        return math.nan
    try:
        v = float(tok)
    except ValueError:
        raise DataError(f"line {lineno}: non-numeric value {tok!r} in column {col!r}") from None
    if math.isinf(v):
        raise DataError(f"line {lineno}: infinite value in column {col!r}")
    return v


def load_csv(path) -> Dataset:
    """Read a long-format CSV into a :class:`Dataset` (all series tagged train)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 3 or header[0] != "series_id" or header[1] != "t":
            raise DataError(f"{path}: header must start with series_id,t and name at least one feature")
        has_label = header[-1] == "label"
        features = header[2:-1] if has_label else header[2:]
        if not features:
            raise DataError(f"{path}: no feature columns")
        rows: dict[str, list] = {}
        labels: dict[str, float] = {}
        seen: set[tuple[str, float]] = set()
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise DataError(f"line {lineno}: expected {len(header)} cells, got {len(rec)}")
            sid = rec[0].strip()
            if not sid:
                raise DataError(f"line {lineno}: empty series_id")
            t = _parse_float(rec[1], lineno, "t")
            if math.isnan(t):
                raise DataError(f"line {lineno}: missing t")
            if (sid, t) in seen:
                raise DataError(f"line {lineno}: duplicate (series_id, t) = ({sid}, {rec[1].strip()})")
            seen.add((sid, t))
            vals = [_parse_float(c, lineno, name) for c, name in zip(rec[2 : 2 + len(features)], features)]
            rows.setdefault(sid, []).append((t, vals))
            if has_label:
                lab = _parse_float(rec[-1], lineno, "label")
                if not math.isnan(lab):
                    if sid in labels and labels[sid] != lab:
                        raise DataError(f"line {lineno}: conflicting labels for series {sid}")
                    labels[sid] = lab
    series = []
    for sid, recs in rows.items():
        recs.sort(key=lambda r: r[0])
        series.append(
            Series(
                series_id=sid,
                t=np.array([r[0] for r in recs]),
                values=np.array([r[1] for r in recs], dtype=np.float64).reshape(len(recs), len(features)),
                label=labels.get(sid),
            )
        )
    task, n_classes = infer_task(list(labels.values())) if has_label else ("none", 0)
    return Dataset(series=series, feature_names=list(features), task=task, n_classes=n_classes)


def _fmt(v: float) -> str:
    if math.isnan(v):
        return ""
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def save_csv(dataset: Dataset, path, series: list[Series] | None = None, with_labels: bool | None = None) -> None:
    """Write series in the long CSV layout; NaN becomes an empty cell."""
    series = dataset.series if series is None else series
    if with_labels is None:
        with_labels = any(s.label is not None for s in series)
    header = ["series_id", "t", *dataset.feature_names] + (["label"] if with_labels else [])
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for s in series:
            lab = "" if s.label is None else _fmt(s.label)
            for i in range(s.length):
                row = [s.series_id, _fmt(float(s.t[i]))] + [_fmt(float(v)) for v in s.values[i]]
                if with_labels:
                    row.append(lab)
                w.writerow(row)


def generate_synthetic(
    n_series: int = 200,
    length: int = 48,
    n_features: int = 2,
    seed: int = 0,
    task: str = "classification",
    noise: float = 0.1,
    n_components: int = 2,
) -> Dataset:
    """Sums of random sinusoids plus Gaussian noise.

    Each series belongs to a frequency band: band 0 draws periods from
    [12, 24] steps, band 1 from [6, 12]. Bands are assigned half and half.
    The classification label is the band; the regression target is the mean
    component amplitude.
    """
    rng = np.random.default_rng(seed)
    bands = rng.permutation(np.arange(n_series) % 2)
    t = np.arange(length, dtype=np.float64)
    out = []
    for i in range(n_series):
        lo, hi = (12.0, 24.0) if bands[i] == 0 else (6.0, 12.0)
        periods = rng.uniform(lo, hi, size=(n_features, n_components))
        amps = rng.uniform(0.5, 1.5, size=(n_features, n_components))
        phases = rng.uniform(0.0, 2 * np.pi, size=(n_features, n_components))
        clean = (amps[..., None] * np.sin(2 * np.pi * t / periods[..., None] + phases[..., None])).sum(axis=1)
        values = clean.T + noise * rng.standard_normal((length, n_features))
        if task == "classification":
            label = float(bands[i])
        elif task == "regression":
            label = float(amps.mean())
        else:
            label = None
        out.append(Series(series_id=f"s{i:04d}", t=t.copy(), values=values, label=label))
    names = [f"x{j}" for j in range(n_features)]
    n_classes = 2 if task == "classification" else 0
    return Dataset(series=out, feature_names=names, task=task, n_classes=n_classes)


def split_train_test(dataset: Dataset, test_fraction: float, seed: int) -> None:
    """Tag series train/test in place by a seeded permutation."""
    ids = [s.series_id for s in dataset.series]
    order = np.random.default_rng(seed).permutation(len(ids))
    n_test = int(round(test_fraction * len(ids)))
    test = {ids[i] for i in order[:n_test]}
    dataset.split = {sid: ("test" if sid in test else "train") for sid in ids}


def make_batches(
    arrays: list[np.ndarray],
    labels: np.ndarray | None,
    batch_size: int,
    order=None,
) -> list[tuple[np.ndarray, TimeSeriesBatch]]:
    """Group equal-length series (in ``order``) into batches of at most ``batch_size``.

    Returns ``(indices, batch)`` pairs; the indices refer to ``arrays``.
    """
    order = np.arange(len(arrays)) if order is None else np.asarray(order)
    by_len: dict[int, list[int]] = {}
    for i in order:
        by_len.setdefault(arrays[i].shape[0], []).append(int(i))
    out = []
    for n in sorted(by_len):
        idx = by_len[n]
        for k in range(0, len(idx), batch_size):
            chunk = np.asarray(idx[k : k + batch_size])
            vals = np.stack([arrays[i] for i in chunk])
            lab = None if labels is None else np.asarray(labels, dtype=np.float64)[chunk]
            out.append((chunk, TimeSeriesBatch(vals, np.isnan(vals), labels=lab)))
    return out
