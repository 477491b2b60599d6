"""Experiment orchestration: config files, corruption sweeps, report assembly."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .baselines import BASELINES
from .data import Dataset, generate_synthetic, load_csv, make_batches, split_train_test
from .errors import ContractError, DataError
from .metrics import ImputationReport, auc_roc, mae, pr_auc, rmse
from .missingness import MissingnessSpec, normalize_pattern
from .model import ModelConfig, StImputeModel
from .training import TrainConfig, train, write_trace

log = logging.getLogger(__name__)

LEARNED_METHODS = {"st-impute": "sparse", "transformer": "softmax"}
METHODS = ("st-impute", "transformer", "mean", "last", "linear")


# ---------------------------------------------------------------------------
# flat key = value config files


def read_key_values(path) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise DataError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _coerce(value: str, kind: type, key: str):
    try:
        if kind is bool:
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        return kind(value)
    except ValueError:
        raise DataError(f"bad value {value!r} for {key!r}") from None


_TYPES = {"int": int, "float": float, "str": str, "bool": bool}


def _field_types(cls) -> dict[str, type]:
    return {f.name: _TYPES.get(f.type if isinstance(f.type, str) else f.type.__name__, str) for f in fields(cls)}


def split_config(values: dict[str, str], extra: dict[str, type] | None = None):
    """Route keys to ModelConfig, TrainConfig and ``extra``; unknown keys are errors."""
    mt, tt = _field_types(ModelConfig), _field_types(TrainConfig)
    extra = extra or {}
    model_kw, train_kw, extra_kw = {}, {}, {}
    for key, raw in values.items():
        if key in mt:
            model_kw[key] = _coerce(raw, mt[key], key)
        elif key in tt:
            train_kw[key] = _coerce(raw, tt[key], key)
        elif key in extra:
            extra_kw[key] = extra[key](raw) if extra[key] is not bool else _coerce(raw, bool, key)
        else:
            raise DataError(f"unknown config key {key!r}")
    return model_kw, train_kw, extra_kw


def _csv_list(kind):
    return lambda s: [kind(x.strip()) for x in s.split(",") if x.strip()]


@dataclass
class ExperimentSpec:
    dataset: str = "synthetic"
    n_series: int = 200
    length: int = 48
    n_features: int = 2
    synthetic_task: str = "classification"
    patterns: list[str] = field(default_factory=lambda: ["mcar"])
    rates: list[float] = field(default_factory=lambda: [0.1, 0.3, 0.5, 0.7, 0.9])
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    test_fraction: float = 0.2
    seed: int = 0
    model: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    out_dir: str | None = None

    def __post_init__(self):
        self.patterns = [normalize_pattern(p) for p in self.patterns]
        for m in self.methods:
            if m not in METHODS:
                raise ContractError(f"unknown method {m!r}; choose from {METHODS}")
        if not self.methods or not self.rates:
            raise ContractError("need at least one method and one rate")
        if self.dataset != "synthetic" and not Path(self.dataset).exists():
            raise DataError(f"dataset file not found: {self.dataset}")

    @classmethod
    def from_file(cls, path) -> "ExperimentSpec":
        extra = {
            "dataset": str, "n_series": int, "length": int, "n_features": int,
            "synthetic_task": str, "patterns": _csv_list(str), "rates": _csv_list(float),
            "methods": _csv_list(str), "test_fraction": float,
        }
        model_kw, train_kw, extra_kw = split_config(read_key_values(path), extra)
        # model-level keys derived from the data are filled in later
        for k in ("n_features", "task", "n_classes"):
            model_kw.pop(k, None)
        seed = train_kw.get("seed", 0)
        if extra_kw.get("dataset", "synthetic") != "synthetic":
            p = Path(extra_kw["dataset"])
            if not p.is_absolute():
                extra_kw["dataset"] = str((Path(path).parent / p).resolve())
        return cls(model=model_kw, train=TrainConfig(**train_kw), seed=seed, **extra_kw)


# ---------------------------------------------------------------------------
# corruption and scoring


def corrupt(arrays: list[np.ndarray], pattern: str, rate: float, seed: int, tag: int = 0):
    """Apply one missingness pattern to each series with per-series derived seeds."""
    corrupted, holdouts = [], []
    spec = MissingnessSpec(pattern, rate)
    for i, x in enumerate(arrays):
        ss = np.random.SeedSequence([seed, tag, i])
        c, h = spec.apply(x, seed=np.random.default_rng(ss))
        corrupted.append(c)
        holdouts.append(h)
    return corrupted, holdouts


def impute_with_model(model: StImputeModel, arrays: list[np.ndarray], batch_size: int = 64) -> list[np.ndarray]:
    out: list[np.ndarray | None] = [None] * len(arrays)
    for idx, batch in make_batches(arrays, None, batch_size):
        filled = model.impute(batch.values, batch.natural_missing)
        for k, i in enumerate(idx):
            out[i] = filled[k]
    return out


def predict_with_model(model: StImputeModel, arrays: list[np.ndarray], batch_size: int = 64) -> np.ndarray | None:
    if model.w_c is None:
        return None
    outs: list = [None] * len(arrays)
    for idx, batch in make_batches(arrays, None, batch_size):
        pred = model.predict_task(batch.values, batch.natural_missing)
        for k, i in enumerate(idx):
            outs[i] = pred[k]
    return np.asarray(outs)


def impute_with_baseline(method: str, arrays: list[np.ndarray], fallback: np.ndarray) -> list[np.ndarray]:
    fn = BASELINES[method]
    return [fn(x, fallback=fallback) for x in arrays]


def score(imputed: list[np.ndarray], truth: list[np.ndarray], holdouts: list[np.ndarray]) -> dict:
    pred = np.concatenate([p[h] for p, h in zip(imputed, holdouts)])
    true = np.concatenate([t[h] for t, h in zip(truth, holdouts)])
    return {"rmse": rmse(pred, true), "mae": mae(pred, true), "n_scored": int(pred.size)}


def downstream_scores(pred: np.ndarray, labels: np.ndarray, task: str) -> dict:
    keep = ~np.isnan(labels)
    pred, labels = pred[keep], labels[keep]
    if not labels.size:
        return {}
    if task == "regression":
        return {"downstream_rmse": rmse(pred, labels)}
    y = labels.astype(int)
    z = pred - pred.max(axis=1, keepdims=True)
    prob = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    classes = [c for c in range(prob.shape[1]) if 0 < (y == c).sum() < y.size]
    if not classes:
        return {}
    if prob.shape[1] == 2:
        return {"auc_roc": auc_roc(prob[:, 1], y == 1), "pr_auc": pr_auc(prob[:, 1], y == 1)}
    # one-vs-rest macro average
    return {
        "auc_roc": float(np.mean([auc_roc(prob[:, c], y == c) for c in classes])),
        "pr_auc": float(np.mean([pr_auc(prob[:, c], y == c) for c in classes])),
    }


def model_config_for(dataset: Dataset, overrides: dict, attention_kind: str) -> ModelConfig:
    kw = dict(overrides)
    kw.update(n_features=dataset.n_features, task=dataset.task, n_classes=dataset.n_classes,
              attention_kind=attention_kind)
    return ModelConfig(**kw)


def load_dataset(spec: ExperimentSpec) -> Dataset:
    if spec.dataset == "synthetic":
        task = "none" if spec.synthetic_task == "none" else spec.synthetic_task
        return generate_synthetic(spec.n_series, spec.length, spec.n_features, seed=spec.seed, task=task)
    return load_csv(spec.dataset)


def run_experiment(spec: ExperimentSpec) -> ImputationReport:
    """Train learned methods once, then sweep every (pattern, rate) on the test split."""
    dataset = load_dataset(spec)
    split_train_test(dataset, spec.test_fraction, spec.seed)
    dataset.fit_normalization()
    train_series = dataset.subset("train")
    test_series = dataset.subset("test")
    if not test_series:
        raise DataError("test split is empty")
    train_arrays = dataset.normalized(train_series)
    test_arrays = dataset.normalized(test_series)
    train_labels = np.array([np.nan if s.label is None else s.label for s in train_series])
    test_labels = np.array([np.nan if s.label is None else s.label for s in test_series])
    fallback = np.zeros(dataset.n_features)  # train mean in normalized units

    out_dir = Path(spec.out_dir) if spec.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    models: dict[str, StImputeModel | Exception] = {}
    for method in spec.methods:
        if method not in LEARNED_METHODS:
            continue
        try:
            model = StImputeModel(model_config_for(dataset, spec.model, LEARNED_METHODS[method]))
            result = train(model, train_arrays, spec.train, labels=train_labels)
            models[method] = model
            if out_dir:
                write_trace(result.trace, out_dir / f"trace_{method}.csv")
                model.save(out_dir / f"{method}.ckpt.json")
        except Exception as exc:  # isolate the failing method
            log.error("training %s failed: %s", method, exc)
            models[method] = exc

    report = ImputationReport()
    for p_i, pattern in enumerate(spec.patterns):
        for r_i, rate in enumerate(spec.rates):
            corrupted, holdouts = corrupt(test_arrays, pattern, rate, spec.seed, tag=1000 * p_i + r_i)
            for method in spec.methods:
                try:
                    if method in LEARNED_METHODS:
                        model = models[method]
                        if isinstance(model, Exception):
                            raise model
                        imputed = impute_with_model(model, corrupted)
                        extra = {}
                        if dataset.task != "none":
                            pred = predict_with_model(model, corrupted)
                            extra = downstream_scores(pred, test_labels, dataset.task)
                    else:
                        imputed = impute_with_baseline(method, corrupted, fallback)
                        extra = {}
                    report.add(method, pattern, rate, **score(imputed, test_arrays, holdouts), **extra)
                except Exception as exc:
                    log.error("cell %s/%s/%s failed: %s", method, pattern, rate, exc)
                    report.add(method, pattern, rate, status=f"error: {type(exc).__name__}")
    if out_dir:
        report.to_csv(out_dir / "report.csv")
    return report


def with_train(spec: ExperimentSpec, **changes) -> ExperimentSpec:
    return replace(spec, train=replace(spec.train, **changes))
