"""Diagonal-masked multi-head self-attention and the encoder layer built on it."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .sparse import sparsegen_rows
from .tensor import NEG_SENTINEL, Tensor

ATTENTION_KINDS = ("sparse", "softmax")


def diagonal_mask(n: int) -> np.ndarray:
    """Additive [n x n] mask: 0 off the diagonal, the -inf sentinel on it."""
    if n < 2:
        raise ContractError(f"diagonal mask needs n >= 2, got {n}")
    m = np.zeros((n, n))
    np.fill_diagonal(m, NEG_SENTINEL)
    return m


def positional_encoding(n: int, d_model: int) -> np.ndarray:
    """Sinusoidal position table of shape [n x d_model]."""
    if d_model % 2:
        raise ContractError(f"d_model must be even, got {d_model}")
    pos = np.arange(n, dtype=np.float64)[:, None]
    two_i = np.arange(0, d_model, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, two_i / d_model)
    pe = np.zeros((n, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


def _uniform(rng: np.random.Generator, fan_in: int, shape, name: str) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


def _zeros(shape, name: str) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


def _ones(shape, name: str) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True, name=name)


@dataclass
class AttentionBlockParams:
    """Weights of one encoder layer.

    ``wq``/``wk``/``wv`` hold one [d_model x d_k] matrix per head; ``wo`` maps
    the concatenated heads back to d_model.
    """

    wq: list[Tensor]
    wk: list[Tensor]
    wv: list[Tensor]
    wo: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor
    n_heads: int = field(init=False)

    def __post_init__(self):
        self.n_heads = len(self.wq)
        if not (len(self.wk) == len(self.wv) == self.n_heads):
            raise ShapeError("per-head weight lists differ in length")
        d_model, d_k = self.wq[0].shape
        if d_k * self.n_heads != d_model:
            raise ShapeError(f"d_k={d_k} x heads={self.n_heads} != d_model={d_model}")

    @classmethod
    def init(cls, d_model: int, n_heads: int, rng: np.random.Generator, prefix: str = "") -> "AttentionBlockParams":
        if d_model % n_heads:
            raise ContractError(f"d_model={d_model} not divisible by n_heads={n_heads}")
        d_k = d_model // n_heads
        d_ff = 4 * d_model
        return cls(
            wq=[_uniform(rng, d_model, (d_model, d_k), f"{prefix}wq.{h}") for h in range(n_heads)],
            wk=[_uniform(rng, d_model, (d_model, d_k), f"{prefix}wk.{h}") for h in range(n_heads)],
            wv=[_uniform(rng, d_model, (d_model, d_k), f"{prefix}wv.{h}") for h in range(n_heads)],
            wo=_uniform(rng, d_model, (d_model, d_model), f"{prefix}wo"),
            ffn_w1=_uniform(rng, d_model, (d_model, d_ff), f"{prefix}ffn_w1"),
            ffn_b1=_zeros((d_ff,), f"{prefix}ffn_b1"),
            ffn_w2=_uniform(rng, d_ff, (d_ff, d_model), f"{prefix}ffn_w2"),
            ffn_b2=_zeros((d_model,), f"{prefix}ffn_b2"),
            ln1_gamma=_ones((d_model,), f"{prefix}ln1_gamma"),
            ln1_beta=_zeros((d_model,), f"{prefix}ln1_beta"),
            ln2_gamma=_ones((d_model,), f"{prefix}ln2_gamma"),
            ln2_beta=_zeros((d_model,), f"{prefix}ln2_beta"),
        )

    def tensors(self) -> list[Tensor]:
        return [
            *self.wq, *self.wk, *self.wv, self.wo,
            self.ffn_w1, self.ffn_b1, self.ffn_w2, self.ffn_b2,
            self.ln1_gamma, self.ln1_beta, self.ln2_gamma, self.ln2_beta,
        ]


def attention_weights(scores: Tensor, mask: np.ndarray, kind: str, lam: float) -> Tensor:
    if kind == "sparse":
        return sparsegen_rows(scores, mask, lam)
    if kind == "softmax":
        return T.softmax_rows(scores, mask)
    raise ContractError(f"unknown attention kind {kind!r}")


def sparse_self_attention(
    x: Tensor,
    params: AttentionBlockParams,
    mask: np.ndarray,
    lam: float = 0.5,
    kind: str = "sparse",
    weights_out: list | None = None,
) -> Tensor:
    """Multi-head self-attention with scores ``K Q^T / sqrt(d_k) + mask``.

    ``x`` is [n x d_model] or [batch x n x d_model]. When ``weights_out`` is a
    list, each head's attention matrix (numpy) is appended to it.
    """
    n = x.shape[-2]
    if mask.shape != (n, n):
        raise ShapeError(f"mask {mask.shape} does not match sequence length {n}")
    d_k = params.wq[0].shape[1]
    inv_sqrt = 1.0 / math.sqrt(d_k)
    heads = []
    for wq, wk, wv in zip(params.wq, params.wk, params.wv):
        q = T.matmul(x, wq)
        k = T.matmul(x, wk)
        v = T.matmul(x, wv)
        scores = T.scale(T.matmul(k, T.transpose(q)), inv_sqrt)
        p = attention_weights(scores, mask, kind, lam)
        if weights_out is not None:
            weights_out.append(p.data)
        heads.append(T.matmul(p, v))
    return T.matmul(T.concat_last(heads), params.wo)


def feed_forward(x: Tensor, params: AttentionBlockParams) -> Tensor:
    h = T.relu(T.add_bias(T.matmul(x, params.ffn_w1), params.ffn_b1))
    return T.add_bias(T.matmul(h, params.ffn_w2), params.ffn_b2)


def encoder_layer(
    x: Tensor,
    params: AttentionBlockParams,
    mask: np.ndarray,
    lam: float = 0.5,
    kind: str = "sparse",
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
    weights_out: list | None = None,
) -> Tensor:
    """Pre-norm residual layer: attention sublayer, then a 4x-wide ReLU FFN.

    Dropout is active only when ``rng`` is given.
    """
    h = T.layer_norm(x, params.ln1_gamma, params.ln1_beta)
    a = sparse_self_attention(h, params, mask, lam, kind, weights_out)
    x = T.add(x, T.dropout(a, dropout, rng))
    h = T.layer_norm(x, params.ln2_gamma, params.ln2_beta)
    f = feed_forward(h, params)
    return T.add(x, T.dropout(f, dropout, rng))
