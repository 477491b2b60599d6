"""The imputation network: mask-aware embedding, sparse encoder stack, two heads."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import tensor as T
from .attention import (
    ATTENTION_KINDS,
    AttentionBlockParams,
    _uniform,
    diagonal_mask,
    encoder_layer,
    positional_encoding,
)
from .errors import ContractError, DataError, ShapeError
from .objectives import TASKS, TimeSeriesBatch
from .tensor import Tensor

CHECKPOINT_FORMAT = "st-impute-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    n_layers: int = 4
    n_heads: int = 4
    d_model: int = 128
    dropout: float = 0.15
    sparsegen_lambda: float = 0.5
    attention_kind: str = "sparse"
    # ablation switch; the method always uses the mask
    diagonal_mask: bool = True
    n_features: int = 1
    task: str = "none"
    n_classes: int = 0
    init_seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ContractError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.d_model % 2:
            raise ContractError("d_model must be even for the positional table")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError(f"dropout must be in [0, 1), got {self.dropout}")
        if not self.sparsegen_lambda < 1.0:
            raise ContractError(f"sparsegen_lambda must be < 1, got {self.sparsegen_lambda}")
        if self.attention_kind not in ATTENTION_KINDS:
            raise ContractError(f"attention_kind must be one of {ATTENTION_KINDS}")
        if self.task not in TASKS:
            raise ContractError(f"task must be one of {TASKS}")
        if self.task == "classification" and self.n_classes < 2:
            raise ContractError("classification needs n_classes >= 2")
        if self.n_features < 1 or self.n_layers < 1:
            raise ContractError("n_features and n_layers must be positive")

    @property
    def task_width(self) -> int:
        return {"none": 0, "classification": self.n_classes, "regression": 1}[self.task]


class StImputeModel:
    """Parameters plus the forward pass.

    Inputs are [n x f] or [b x n x f] arrays in the (normalized) space the
    model was trained in.
    """

    def __init__(self, config: ModelConfig):
        self.config = config
        c = config
        rng = np.random.default_rng(c.init_seed)
        f, d = c.n_features, c.d_model
        self.w_e = _uniform(rng, 2 * f, (2 * f, d), "embed.w")
        self.b_e = Tensor(np.zeros(d), requires_grad=True, name="embed.b")
        self.layers = [AttentionBlockParams.init(d, c.n_heads, rng, prefix=f"layer{i}.") for i in range(c.n_layers)]
        self.ln_gamma = Tensor(np.ones(d), requires_grad=True, name="final_ln.gamma")
        self.ln_beta = Tensor(np.zeros(d), requires_grad=True, name="final_ln.beta")
        self.w_r = _uniform(rng, d, (d, f), "recon.w")
        self.b_r = Tensor(np.zeros(f), requires_grad=True, name="recon.b")
        if c.task_width:
            self.w_c = _uniform(rng, d, (d, c.task_width), "task.w")
            self.b_c = Tensor(np.zeros(c.task_width), requires_grad=True, name="task.b")
        else:
            self.w_c = self.b_c = None
        self._pe_cache: dict[int, np.ndarray] = {}
        self._mask_cache: dict[int, np.ndarray] = {}

    def parameters(self) -> dict[str, Tensor]:
        out = {t.name: t for t in (self.w_e, self.b_e)}
        for layer in self.layers:
            out.update({t.name: t for t in layer.tensors()})
        for t in (self.ln_gamma, self.ln_beta, self.w_r, self.b_r, self.w_c, self.b_c):
            if t is not None:
                out[t.name] = t
        return out

    def _positional(self, n: int) -> np.ndarray:
        if n not in self._pe_cache:
            self._pe_cache[n] = positional_encoding(n, self.config.d_model)
        return self._pe_cache[n]

    def _attention_mask(self, n: int) -> np.ndarray:
        if n not in self._mask_cache:
            self._mask_cache[n] = diagonal_mask(n) if self.config.diagonal_mask else np.zeros((n, n))
        return self._mask_cache[n]

    def embed_input(self, values, visible) -> Tensor:
        """``ReLU([values ; visible] W_e + b_e)`` plus the positional table."""
        values = np.asarray(values, dtype=np.float64)
        visible = np.asarray(visible, dtype=np.float64)
        if values.shape != visible.shape:
            raise ShapeError(f"values {values.shape} and mask {visible.shape} differ")
        if values.shape[-1] != self.config.n_features:
            raise ShapeError(f"expected {self.config.n_features} features, got {values.shape[-1]}")
        x = Tensor(np.concatenate([values, visible], axis=-1))
        h = T.relu(T.add_bias(T.matmul(x, self.w_e), self.b_e))
        pe = self._positional(values.shape[-2])
        return T.add(h, Tensor(np.broadcast_to(pe, h.shape)))

    def encode(self, values, visible, rng=None, attention_out: list | None = None) -> Tensor:
        c = self.config
        x = self.embed_input(values, visible)
        mask = self._attention_mask(x.shape[-2])
        for layer in self.layers:
            heads: list | None = [] if attention_out is not None else None
            x = encoder_layer(x, layer, mask, c.sparsegen_lambda, c.attention_kind, c.dropout, rng, heads)
            if attention_out is not None:
                attention_out.append(heads)
        return T.layer_norm(x, self.ln_gamma, self.ln_beta)

    def forward_arrays(self, values, visible, mode: str = "eval", rng=None, attention_out: list | None = None):
        """Reconstruction [.. x n x f] and task output (or None).

        Dropout is applied only in train mode with a generator supplied.
        """
        if mode not in ("train", "eval"):
            raise ContractError(f"mode must be 'train' or 'eval', got {mode!r}")
        drop_rng = rng if mode == "train" else None
        h = self.encode(values, visible, drop_rng, attention_out)
        recon = T.add_bias(T.matmul(h, self.w_r), self.b_r)
        task_out = None
        if self.w_c is not None:
            pooled = T.mean_axis(h, -2)
            task_out = T.add_bias(T.matmul(pooled, self.w_c), self.b_c)
            if self.config.task == "regression":
                task_out = T.reshape(task_out, task_out.shape[:-1])
        return recon, task_out

    def forward(self, batch: TimeSeriesBatch, mode: str = "eval", rng=None, attention_out: list | None = None):
        values, visible = batch.model_input()
        return self.forward_arrays(values, visible, mode, rng, attention_out)

    def impute(self, values, missing=None) -> np.ndarray:
        """Fill missing entries (NaN, or ``missing`` True) from the reconstruction.

        Observed entries are returned unchanged.
        """
        values = np.asarray(values, dtype=np.float64)
        if missing is None:
            missing = np.isnan(values)
        missing = np.asarray(missing, dtype=bool)
        filled = np.where(missing, 0.0, values)
        recon, _ = self.forward_arrays(filled, (~missing).astype(np.float64), mode="eval")
        return np.where(missing, recon.data, values)

    def predict_task(self, values, missing=None) -> np.ndarray | None:
        values = np.asarray(values, dtype=np.float64)
        if missing is None:
            missing = np.isnan(values)
        filled = np.where(missing, 0.0, values)
        _, out = self.forward_arrays(filled, (~missing).astype(np.float64), mode="eval")
        return None if out is None else out.data

    # ------------------------------------------------------------------
    # checkpoints

    def to_document(self, extra: dict | None = None) -> dict:
        doc = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": asdict(self.config),
            "params": [
                {"name": name, "shape": list(t.shape), "data": t.data.ravel().tolist()}
                for name, t in self.parameters().items()
            ],
        }
        if extra:
            doc["extra"] = extra
        return doc

    def save(self, path, extra: dict | None = None) -> None:
        Path(path).write_text(json.dumps(self.to_document(extra)))

    @classmethod
    def from_document(cls, doc: dict) -> "StImputeModel":
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise DataError("not an st-impute checkpoint")
        if doc.get("version") != CHECKPOINT_VERSION:
            raise DataError(f"unsupported checkpoint version {doc.get('version')}")
        known = {f.name for f in fields(ModelConfig)}
        config = ModelConfig(**{k: v for k, v in doc["config"].items() if k in known})
        model = cls(config)
        params = model.parameters()
        seen = set()
        for entry in doc["params"]:
            name = entry["name"]
            if name not in params:
                raise DataError(f"checkpoint has unknown parameter {name!r}")
            shape = tuple(entry["shape"])
            if shape != params[name].shape:
                raise DataError(f"parameter {name!r}: shape {shape} != {params[name].shape}")
            params[name].data[...] = np.asarray(entry["data"], dtype=np.float64).reshape(shape)
            seen.add(name)
        missing = set(params) - seen
        if missing:
            raise DataError(f"checkpoint lacks parameters {sorted(missing)}")
        return model

    @classmethod
    def load(cls, path) -> tuple["StImputeModel", dict]:
        doc = json.loads(Path(path).read_text())
        return cls.from_document(doc), doc.get("extra", {})


def forward(batch: TimeSeriesBatch, model: StImputeModel, mode: str = "eval", rng=None):
    return model.forward(batch, mode, rng)


def impute(values, model: StImputeModel, missing=None) -> np.ndarray:
    return model.impute(values, missing)
