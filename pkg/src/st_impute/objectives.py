"""Training losses: masked imputation, observed reconstruction, downstream task.

Masks partition every entry of a batch into three disjoint groups:
naturally missing, artificially masked for the MIM task (``mim_mask``), and
observed-and-visible (``observed_mask``).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .tensor import Tensor

log = logging.getLogger(__name__)

TASKS = ("none", "classification", "regression")


@dataclass
class TimeSeriesBatch:
    """Equal-length series stacked as [b x n x f].

    ``values`` may hold NaN at naturally missing entries. ``labels`` is a float
    vector of length b with NaN for series whose label is hidden or absent.
    """

    values: np.ndarray
    natural_missing: np.ndarray
    mim_mask: np.ndarray | None = None
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 2:
            self.values = self.values[None]
        self.natural_missing = np.asarray(self.natural_missing, dtype=bool).reshape(self.values.shape)
        if self.mim_mask is None:
            self.mim_mask = np.zeros(self.values.shape, dtype=bool)
        else:
            self.mim_mask = np.asarray(self.mim_mask, dtype=bool).reshape(self.values.shape)
        if np.any(self.mim_mask & self.natural_missing):
            raise ContractError("MIM mask overlaps naturally missing entries")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.float64).reshape(-1)
            if self.labels.shape[0] != self.values.shape[0]:
                raise ShapeError(f"{self.labels.shape[0]} labels for {self.values.shape[0]} series")

    @property
    def observed_mask(self) -> np.ndarray:
        return ~self.natural_missing & ~self.mim_mask

    @property
    def targets(self) -> np.ndarray:
        """Values with naturally missing entries zeroed (they are never scored)."""
        return np.where(self.natural_missing, 0.0, self.values)

    def model_input(self) -> tuple[np.ndarray, np.ndarray]:
        """Zero-filled values and the 0/1 visibility channel fed to the embedding."""
        visible = self.observed_mask
        return np.where(visible, self.values, 0.0), visible.astype(np.float64)

    def labeled_index(self) -> np.ndarray:
        if self.labels is None:
            return np.zeros(0, dtype=np.int64)
        return np.flatnonzero(~np.isnan(self.labels))


def sample_mim_mask(batch: TimeSeriesBatch, rate: float, seed) -> TimeSeriesBatch:
    """Mask each observed entry independently with probability ``rate``.

    ``seed`` is an int or a ``numpy.random.Generator``. Every series keeps at
    least one visible entry; if sampling would remove all of them one masked
    entry is restored and a warning logged.
    """
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"MIM rate must be in [0, 1), got {rate}")
    rng = np.random.default_rng(seed)
    observed = ~batch.natural_missing
    mim = (rng.random(batch.values.shape) < rate) & observed
    for i in range(mim.shape[0]):
        if observed[i].any() and not (observed[i] & ~mim[i]).any():
            flat = np.flatnonzero(mim[i])
            keep = flat[rng.integers(flat.size)]
            mim[i].reshape(-1)[keep] = False
            log.warning("MIM masking would hide every observed value of series %d; kept one", i)
    return replace(batch, mim_mask=mim)


def _masked_mae(target: np.ndarray, pred: Tensor, mask: np.ndarray, what: str) -> Tensor:
    pred = T.as_tensor(pred)
    mask = np.asarray(mask, dtype=np.float64).reshape(pred.shape)
    total = mask.sum()
    if total <= 0:
        raise ContractError(f"{what}: mask selects no entries")
    target = np.where(mask > 0, np.asarray(target, dtype=np.float64).reshape(pred.shape), 0.0)
    err = T.mul(T.absolute(T.sub(pred, Tensor(target))), Tensor(mask))
    return T.scale(T.sum_all(err), 1.0 / total)


def loss_mim(target, pred: Tensor, mim_mask) -> Tensor:
    """Mean absolute error over artificially masked entries."""
    return _masked_mae(target, pred, mim_mask, "loss_mim")


def loss_nrl(target, pred: Tensor, observed_mask) -> Tensor:
    """Mean absolute error over observed entries the model could see."""
    return _masked_mae(target, pred, observed_mask, "loss_nrl")


def loss_downstream(task_output: Tensor, labels, task: str) -> Tensor:
    """Cross-entropy for classification, mean absolute error for regression."""
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if task == "classification":
        return T.cross_entropy(task_output, y.astype(np.int64))
    if task == "regression":
        pred = T.as_tensor(task_output)
        pred = T.reshape(pred, (pred.size,))
        if pred.size != y.size:
            raise ShapeError(f"{pred.size} predictions for {y.size} targets")
        return T.scale(T.sum_all(T.absolute(T.sub(pred, Tensor(y)))), 1.0 / y.size)
    if task == "none":
        raise ContractError("labels supplied but the model has no downstream task")
    raise ContractError(f"unknown task {task!r}")


def loss_combined(batch: TimeSeriesBatch, model, mode: str = "train", rng=None) -> tuple[Tensor, dict]:
    """Unweighted sum of the MIM, reconstruction and downstream losses.

    Terms whose mask (or labeled subset) is empty are skipped. Returns the
    total and a dict of the float value of each term.
    """
    recon, task_out = model.forward(batch, mode=mode, rng=rng)
    target = batch.targets
    terms: dict[str, float] = {"mim": 0.0, "nrl": 0.0, "task": 0.0}
    parts = []
    if batch.mim_mask.any():
        l = loss_mim(target, recon, batch.mim_mask)
        terms["mim"] = l.item()
        parts.append(l)
    if batch.observed_mask.any():
        l = loss_nrl(target, recon, batch.observed_mask)
        terms["nrl"] = l.item()
        parts.append(l)
    idx = batch.labeled_index()
    if idx.size:
        task = model.config.task
        if task == "none":
            raise ContractError("labels supplied but the model has no downstream task")
        l = loss_downstream(T.take_rows(task_out, idx), batch.labels[idx], task)
        terms["task"] = l.item()
        parts.append(l)
    if not parts:
        raise ContractError("batch has nothing to score")
    total = parts[0]
    for p in parts[1:]:
        total = T.add(total, p)
    terms["total"] = total.item()
    return total, terms
