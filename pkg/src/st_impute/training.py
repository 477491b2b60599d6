"""Adam, the semi-supervised training loop, and the gradient-check harness."""

from __future__ import annotations

import copy
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import make_batches
from .errors import ContractError, NumericalError
from .model import StImputeModel
from .objectives import TimeSeriesBatch, loss_combined, sample_mim_mask

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 0.0002
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 100
    batch_size: int = 32
    mim_rate: float = 0.5
    seed: int = 0
    labeled_fraction: float = 1.0
    val_fraction: float = 0.2
    patience: int = 10
    # 0 disables clipping
    clip_norm: float = 0.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ContractError("learning_rate must be positive")
        if not 0.0 <= self.labeled_fraction <= 1.0:
            raise ContractError("labeled_fraction must be in [0, 1]")
        if not 0.0 <= self.mim_rate < 1.0:
            raise ContractError("mim_rate must be in [0, 1)")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ContractError("val_fraction must be in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ContractError("epochs and batch_size must be positive")


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict[str, T.Tensor], state: AdamState, config: TrainConfig) -> None:
    """One bias-corrected Adam update using each parameter's ``grad``.

    Parameters without a gradient are skipped. A non-finite gradient aborts
    the whole step before anything is modified.
    """
    for name, p in params.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise NumericalError(f"non-finite gradient for parameter {name!r}")
    step = state.step + 1
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1**step
    bc2 = 1.0 - b2**step
    pending = {}
    with np.errstate(over="ignore", invalid="ignore"):
        for name, p in params.items():
            g = p.grad
            if g is None:
                continue
            m = b1 * state.m.get(name, 0.0) + (1.0 - b1) * g
            v = b2 * state.v.get(name, 0.0) + (1.0 - b2) * g * g
            delta = config.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + config.adam_eps)
            if not (np.all(np.isfinite(v)) and np.all(np.isfinite(delta))):
                raise NumericalError(f"Adam moments overflowed for parameter {name!r}")
            pending[name] = (m, v, delta)
    # commit only once every update is known to be finite
    for name, (m, v, delta) in pending.items():
        state.m[name], state.v[name] = m, v
        params[name].data -= delta
    state.step = step


def _clip(params: dict[str, T.Tensor], max_norm: float) -> None:
    grads = [p.grad for p in params.values() if p.grad is not None]
    total = np.sqrt(sum(float((g * g).sum()) for g in grads))
    if total > max_norm:
        for g in grads:
            g *= max_norm / total


@dataclass
class TrainResult:
    model: StImputeModel
    trace: list[dict]
    best_epoch: int
    stopped_early: bool


def _hide_labels(labels: np.ndarray | None, fraction: float, rng: np.random.Generator):
    if labels is None:
        return None
    labels = np.asarray(labels, dtype=np.float64).copy()
    have = np.flatnonzero(~np.isnan(labels))
    n_keep = int(round(fraction * have.size))
    hidden = rng.permutation(have)[n_keep:]
    labels[hidden] = np.nan
    return labels


def train(
    model: StImputeModel,
    series: list[np.ndarray],
    config: TrainConfig,
    labels=None,
) -> TrainResult:
    """Fit ``model`` on normalized ``[n x f]`` arrays (NaN = missing).

    A ``val_fraction`` share of the series is held back for early stopping on
    the masked-imputation loss; the best parameters are restored at the end.
    ``labels`` is one float per series (NaN = unlabeled); only a
    ``labeled_fraction`` share of the available labels is used.
    """
    if not series:
        raise ContractError("empty training set")
    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(len(series))
    n_val = int(round(config.val_fraction * len(series))) if len(series) >= 5 else 0
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    lab = None if labels is None else np.asarray(labels, dtype=np.float64)
    if lab is not None and model.config.task == "none":
        lab = None
    lab = _hide_labels(lab, config.labeled_fraction, rng)

    train_arrays = [series[i] for i in train_idx]
    train_labels = None if lab is None else lab[train_idx]
    val_batches = []
    if n_val:
        val_rng = np.random.default_rng(config.seed + 1)
        for _, b in make_batches([series[i] for i in val_idx], None, config.batch_size):
            val_batches.append(sample_mim_mask(b, config.mim_rate, val_rng))

    params = model.parameters()
    state = AdamState()
    trace: list[dict] = []
    best = (np.inf, 0, None)
    stale = 0
    stopped = False
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_arrays))
        sums = {"mim": 0.0, "nrl": 0.0, "task": 0.0, "total": 0.0}
        batches = make_batches(train_arrays, train_labels, config.batch_size, order)
        for bi, (_, batch) in enumerate(batches):
            batch = sample_mim_mask(batch, config.mim_rate, rng)
            T.zero_grads(params.values())
            try:
                loss, terms = loss_combined(batch, model, mode="train", rng=rng)
                T.backward(loss)
                if config.clip_norm > 0:
                    _clip(params, config.clip_norm)
                adam_step(params, state, config)
            except NumericalError as exc:
                raise NumericalError(f"epoch {epoch}, batch {bi}: {exc}") from exc
            for k in sums:
                sums[k] += terms[k]
        row = {k: v / len(batches) for k, v in sums.items()}
        row["epoch"] = epoch
        if val_batches:
            row["val_mim"] = validation_loss(model, val_batches)
            if row["val_mim"] < best[0]:
                best = (row["val_mim"], epoch, copy.deepcopy([p.data for p in params.values()]))
                stale = 0
            else:
                stale += 1
        trace.append(row)
        log.info("epoch %d %s", epoch, row)
        if val_batches and stale >= config.patience:
            stopped = True
            break
    T.zero_grads(params.values())
    best_epoch = trace[-1]["epoch"]
    if best[2] is not None:
        for p, data in zip(params.values(), best[2]):
            p.data[...] = data
        best_epoch = best[1]
    return TrainResult(model=model, trace=trace, best_epoch=best_epoch, stopped_early=stopped)


def validation_loss(model: StImputeModel, batches: list[TimeSeriesBatch]) -> float:
    """Masked-imputation MAE over fixed validation masks, dropout off."""
    err, count = 0.0, 0.0
    for b in batches:
        if not b.mim_mask.any():
            continue
        recon, _ = model.forward(b, mode="eval")
        err += float(np.abs(recon.data - b.targets)[b.mim_mask].sum())
        count += float(b.mim_mask.sum())
    return err / count if count else float("nan")


TRACE_COLUMNS = ("epoch", "L_MIM", "L_NRL", "L_c", "total", "val_mim")


def write_trace(trace: list[dict], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in trace:
            val = r.get("val_mim")
            w.writerow([r["epoch"], repr(r["mim"]), repr(r["nrl"]), repr(r["task"]), repr(r["total"]),
                        "" if val is None else repr(val)])


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Largest entrywise ``|a - b| / max(|a|, |b|, floor)``."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def gradient_check(model: StImputeModel, batch: TimeSeriesBatch, eps: float = 1e-5, seed: int = 0) -> dict[str, float]:
    """Max relative error between tape and central-difference gradients, per tensor.

    The combined loss is evaluated in train mode with a dropout generator
    re-seeded on every call, so each evaluation sees the same dropout masks.
    Tensors with ``requires_grad`` False are skipped.
    """
    params = {k: p for k, p in model.parameters().items() if p.requires_grad}

    def loss_value(_=None):
        loss, _terms = loss_combined(batch, model, mode="train", rng=np.random.default_rng(seed))
        return loss

    T.zero_grads(model.parameters().values())
    T.backward(loss_value())
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
    T.zero_grads(model.parameters().values())
    report = {}
    for name, p in params.items():
        numeric = T.finite_difference_gradient(lambda _x: loss_value(), p, eps)
        report[name] = relative_error(analytic[name], numeric)
    return report


def tiny_gradcheck_setup(attention_kind: str = "sparse", seed: int = 0) -> tuple[StImputeModel, TimeSeriesBatch]:
    """1 layer, d_model 16, two labeled series of 8 steps x 2 features, 50% MIM.

    Parameters get a small random jitter: zero-initialized biases would put
    ReLU inputs of fully hidden timesteps exactly on the kink, where the
    finite-difference estimate is meaningless.
    """
    from .model import ModelConfig

    cfg = ModelConfig(
        n_layers=1, n_heads=2, d_model=16, dropout=0.15, attention_kind=attention_kind,
        n_features=2, task="classification", n_classes=2, init_seed=seed,
    )
    model = StImputeModel(cfg)
    rng = np.random.default_rng(seed + 100)
    for p in model.parameters().values():
        p.data += rng.normal(0.0, 0.05, size=p.shape)
    values = rng.uniform(-2, 2, size=(2, 8, 2))
    missing = np.zeros(values.shape, dtype=bool)
    missing[0, 3, 1] = True
    values[missing] = np.nan
    batch = TimeSeriesBatch(values, missing, labels=np.array([0.0, 1.0]))
    return model, sample_mim_mask(batch, 0.5, rng)
