"""Sparsemax and sparsegen-lin: projections of scores onto the probability simplex.

sparsegen-lin solves ``argmin_p ||p - a||^2 - lam * ||p||^2`` over the simplex.
Completing the square gives ``(1 - lam) * ||p - a / (1 - lam)||^2 + const``,
so it is sparsemax applied to ``a / (1 - lam)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DegenerateRowError
from .tensor import MASKED_BELOW, Tensor, _accumulate, _make


@dataclass(frozen=True)
class SparseDistribution:
    """Output of a simplex projection.

    Attributes:
        p: probabilities, summing to one.
        support: sorted indices with ``p > 0``.
        tau: threshold subtracted from the (scaled) scores.
        lam: sparsegen coefficient used; 0 for plain sparsemax.
    """

    p: np.ndarray
    support: tuple[int, ...]
    tau: float
    lam: float = 0.0


def _check_lambda(lam: float) -> None:
    if not lam < 1.0:
        raise ContractError(f"sparsegen lambda must be < 1, got {lam}")


def _project_rows(z: np.ndarray, masked: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise simplex projection of ``z`` ignoring ``masked`` entries.

    Returns ``(p, tau)`` with ``tau`` shaped like ``z[..., :1]``.
    """
    if np.any(masked.all(axis=-1)):
        raise DegenerateRowError("every entry of a row is masked")
    work = np.where(masked, -np.inf, z)
    srt = -np.sort(-work, axis=-1, kind="stable")
    finite = np.isfinite(srt)
    csum = np.cumsum(np.where(finite, srt, 0.0), axis=-1)
    k = np.arange(1, z.shape[-1] + 1, dtype=np.float64)
    cond = finite & (1.0 + k * np.where(finite, srt, 0.0) > csum)
    # cond holds on a prefix of each sorted row, so its count is the support size
    kk = cond.sum(axis=-1, keepdims=True)
    tau = (np.take_along_axis(csum, kk - 1, axis=-1) - 1.0) / kk
    p = np.where(masked, 0.0, np.maximum(z - tau, 0.0))
    return p, tau


def sparsemax(a) -> SparseDistribution:
    """Euclidean projection of a score vector onto the simplex.

    Entries at or below the mask sentinel never enter the support.

    >>> sparsemax([3.0, 0.0, 0.0]).p.tolist()
    [1.0, 0.0, 0.0]
    """
    return sparsegen_lin(a, 0.0)


def sparsegen_lin(a, lam: float) -> SparseDistribution:
    """sparsegen-lin of a score vector; ``lam = 0`` is exactly sparsemax."""
    _check_lambda(lam)
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 1 or a.size < 1:
        raise ContractError(f"expected a non-empty vector, got shape {a.shape}")
    if np.any(np.isnan(a)):
        raise ContractError("scores contain NaN")
    masked = a <= MASKED_BELOW
    z = a / (1.0 - lam)
    p, tau = _project_rows(z, masked)
    support = tuple(int(i) for i in np.flatnonzero(p > 0))
    return SparseDistribution(p=p, support=support, tau=float(tau[0]), lam=float(lam))


def sparsemax_backward(dist: SparseDistribution, upstream) -> np.ndarray:
    """Vector-Jacobian product of the projection at ``dist``.

    On the support the upstream gradient is centred; off the support it is
    zero. sparsegen-lin adds the chain factor ``1 / (1 - lam)``.
    """
    g = np.asarray(upstream, dtype=np.float64)
    if not dist.support:
        raise ContractError("empty support")
    idx = np.asarray(dist.support)
    out = np.zeros_like(g)
    out[idx] = g[idx] - g[idx].mean()
    return out / (1.0 - dist.lam)


def brute_force_simplex_projection(a, lam: float = 0.0) -> np.ndarray:
    """Minimize ``||p - a||^2 - lam ||p||^2`` on the simplex by support enumeration.

    For each candidate support S the stationarity conditions give
    ``p_i = (a_i - nu) / (1 - lam)`` on S with ``nu`` fixed by ``sum p = 1``.
    Feasible candidates (all p_i >= 0) are scored and the best is returned.
    Test oracle only: refuses vectors longer than 8.
    """
    _check_lambda(lam)
    a = np.asarray(a, dtype=np.float64)
    n = a.size
    if n > 8:
        raise ContractError("brute-force projection is limited to n <= 8")
    best, best_obj = None, np.inf
    for r in range(1, n + 1):
        for S in itertools.combinations(range(n), r):
            S = list(S)
            nu = (a[S].sum() - (1.0 - lam)) / r
            p = np.zeros(n)
            p[S] = (a[S] - nu) / (1.0 - lam)
            if np.any(p < -1e-12):
                continue
            p = np.maximum(p, 0.0)
            obj = np.sum((p - a) ** 2) - lam * np.sum(p**2)
            if obj < best_obj - 1e-15:
                best, best_obj = p, obj
    return best


def sparsegen_rows(scores: Tensor, additive_mask, lam: float) -> Tensor:
    """Differentiable row-wise sparsegen-lin of ``scores + additive_mask``.

    Backward uses the support found in the forward pass.
    """
    _check_lambda(lam)
    mask = np.asarray(additive_mask, dtype=np.float64)
    masked = np.broadcast_to(mask <= MASKED_BELOW, scores.shape)
    z = np.where(masked, 0.0, scores.data + mask) / (1.0 - lam)
    p, _ = _project_rows(z, masked)
    supp = p > 0
    count = supp.sum(axis=-1, keepdims=True)
    factor = 1.0 / (1.0 - lam)

    def bw(g):
        gs = np.where(supp, g, 0.0)
        centred = gs - gs.sum(axis=-1, keepdims=True) / count
        _accumulate(scores, np.where(supp, centred, 0.0) * factor)

    return _make(p, (scores,), bw, "sparsegen_rows")
