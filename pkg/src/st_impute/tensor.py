"""Dense float64 tensors with reverse-mode gradient accumulation.

Every differentiable operation builds a node that remembers its parents and a
closure that pushes the output gradient back into them. :func:`backward`
orders the recorded graph topologically and replays the closures in reverse,
so each node is visited exactly once.

Only what the imputation network needs is supported: elementwise arithmetic
on equal shapes, scalar scaling, bias addition over the last axis, (batched)
matrix products, row softmax with an additive mask, layer normalization,
reductions and a fused cross-entropy.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DegenerateRowError, NumericalError, ShapeError

# Stand-in for -inf in additive attention masks; keeps arithmetic finite.
NEG_SENTINEL = -1e30
# Anything at or below this value is treated as masked.
MASKED_BELOW = -1e29


class Tensor:
    """A float64 array plus an optional gradient slot.

    ``data`` is a C-contiguous numpy array, so the flat row-major view is
    ``data.ravel()``. ``grad`` is allocated lazily by :func:`backward`.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericalError(f"{op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True).reshape(t.shape)
    else:
        t.grad += g


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "add")

    def bw(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "sub")

    def bw(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "mul")

    def bw(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _make(a.data * b.data, (a, b), bw, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)

    def bw(g):
        _accumulate(a, g * c)

    return _make(a.data * c, (a,), bw, "scale")


def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0

    def bw(g):
        _accumulate(a, g * pos)

    return _make(np.where(pos, a.data, 0.0), (a,), bw, "relu")


def absolute(a: Tensor) -> Tensor:
    a = as_tensor(a)
    sign = np.sign(a.data)

    def bw(g):
        _accumulate(a, g * sign)

    return _make(np.abs(a.data), (a,), bw, "abs")


def elementwise(op: str, *args, **kwargs) -> Tensor:
    """Dispatch by name: ``add``, ``sub``, ``mul``, ``relu``, ``scale``, ``abs``."""
    table = {"add": add, "sub": sub, "mul": mul, "relu": relu, "scale": scale, "abs": absolute}
    try:
        fn = table[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}") from None
    return fn(*args, **kwargs)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """``x + b`` where ``b`` is a vector matching the last axis of ``x``."""
    if b.data.ndim != 1 or b.shape[0] != x.shape[-1]:
        raise ShapeError(f"add_bias: bias {b.shape} does not match last axis of {x.shape}")
    lead = tuple(range(x.data.ndim - 1))

    def bw(g):
        _accumulate(x, g)
        _accumulate(b, g.sum(axis=lead))

    return _make(x.data + b.data, (x, b), bw, "add_bias")


# ---------------------------------------------------------------------------
# linear algebra and reshaping


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    ``a`` may carry one leading batch axis. ``b`` is either a plain matrix
    shared across the batch or has the same batch axis as ``a``.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim not in (2, 3) or b.data.ndim not in (2, 3):
        raise ShapeError(f"matmul: only 2-D/3-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")
    if b.data.ndim == 3 and (a.data.ndim != 3 or a.shape[0] != b.shape[0]):
        raise ShapeError(f"matmul: batch dimensions differ, {a.shape} x {b.shape}")
    shared = b.data.ndim == 2
    k = a.shape[-1]
    if shared:
        # one GEMM over all batch rows
        out = (a.data.reshape(-1, k) @ b.data).reshape(a.shape[:-1] + (b.shape[1],))
    else:
        out = np.matmul(a.data, b.data)

    def bw(g):
        if a.requires_grad:
            if shared:
                ga = (g.reshape(-1, g.shape[-1]) @ b.data.T).reshape(a.shape)
            else:
                ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _accumulate(a, ga)
        if b.requires_grad:
            if shared:
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            _accumulate(b, gb)

    return _make(out, (a, b), bw, "matmul")


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""

    def bw(g):
        _accumulate(a, np.swapaxes(g, -1, -2))

    return _make(np.ascontiguousarray(np.swapaxes(a.data, -1, -2)), (a,), bw, "transpose")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape

    def bw(g):
        _accumulate(a, g.reshape(src))

    return _make(a.data.reshape(tuple(shape)), (a,), bw, "reshape")


def concat_last(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    widths = [p.shape[-1] for p in parts]
    lead = parts[0].shape[:-1]
    for p in parts:
        if p.shape[:-1] != lead:
            raise ShapeError(f"concat_last: leading shapes differ {p.shape[:-1]} vs {lead}")
    edges = np.cumsum([0] + widths)

    def bw(g):
        for p, lo, hi in zip(parts, edges[:-1], edges[1:]):
            _accumulate(p, g[..., lo:hi])

    return _make(np.concatenate([p.data for p in parts], axis=-1), tuple(parts), bw, "concat")


def take_rows(a: Tensor, idx: Sequence[int]) -> Tensor:
    """Select entries of the first axis."""
    idx = np.asarray(idx, dtype=np.int64)

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accumulate(a, full)

    return _make(a.data[idx], (a,), bw, "take_rows")


# ---------------------------------------------------------------------------
# reductions


def sum_all(a: Tensor) -> Tensor:
    def bw(g):
        _accumulate(a, np.broadcast_to(g.reshape(()), a.shape))

    return _make(np.array([a.data.sum()]), (a,), bw, "sum")


def mean_axis(a: Tensor, axis: int) -> Tensor:
    """Mean over one axis (the axis is removed)."""
    n = a.shape[axis]

    def bw(g):
        _accumulate(a, np.broadcast_to(np.expand_dims(g, axis) / n, a.shape))

    return _make(a.data.mean(axis=axis), (a,), bw, "mean")


# ---------------------------------------------------------------------------
# normalization, attention weights, losses


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the affine ``gamma``/``beta``."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    lead = tuple(range(x.data.ndim - 1))

    def bw(g):
        if gamma.requires_grad:
            _accumulate(gamma, (g * xhat).sum(axis=lead))
        if beta.requires_grad:
            _accumulate(beta, g.sum(axis=lead))
        if x.requires_grad:
            dxhat = g * gamma.data
            dx = inv * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
            _accumulate(x, dx)

    return _make(xhat * gamma.data + beta.data, (x, gamma, beta), bw, "layer_norm")


def _masked_rows(additive_mask: np.ndarray) -> np.ndarray:
    masked = additive_mask <= MASKED_BELOW
    if np.any(masked.all(axis=-1)):
        raise DegenerateRowError("attention row has every entry masked")
    return masked


def softmax_rows(scores: Tensor, additive_mask) -> Tensor:
    """Row softmax of ``scores + additive_mask``.

    Masked entries (sentinel ``NEG_SENTINEL``) come out as exact zeros.
    """
    mask = np.asarray(additive_mask, dtype=np.float64)
    if mask.shape != scores.shape[-mask.ndim:]:
        raise ShapeError(f"softmax_rows: mask {mask.shape} vs scores {scores.shape}")
    masked = _masked_rows(mask)
    z = np.where(masked, -np.inf, scores.data + mask)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        _accumulate(scores, p * (g - (g * p).sum(axis=-1, keepdims=True)))

    return _make(p, (scores,), bw, "softmax_rows")


def cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean cross-entropy of row-softmaxed ``logits`` [b x C] against class indices."""
    y = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or y.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {y.shape}")
    if y.size == 0:
        raise ContractError("cross_entropy needs at least one label")
    if np.any((y < 0) | (y >= logits.shape[1])):
        raise ContractError("cross_entropy: label out of range")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(y.size)
    loss = -logp[rows, y].mean()

    def bw(g):
        d = np.exp(logp)
        d[rows, y] -= 1.0
        _accumulate(logits, d * (float(g.reshape(())) / y.size))

    return _make(np.array([loss]), (logits,), bw, "cross_entropy")


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rng`` is None or ``rate`` is 0."""
    if rng is None or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, Tensor(keep))


# ---------------------------------------------------------------------------
# backward pass and the finite-difference oracle


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every tensor reachable from a scalar ``loss``.

    Gradients accumulate, so call ``zero_grad`` on parameters between steps.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("backward() on a tensor that does not require grad")
    order = _topological_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def finite_difference_gradient(f: Callable[[Tensor], object], x: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central-difference estimate of d f / d x, one coordinate at a time.

    ``f`` may return a float or a one-element Tensor. ``x.data`` is perturbed
    in place and restored afterwards.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")

    def value() -> float:
        out = f(x)
        v = out.item() if isinstance(out, Tensor) else float(out)
        if not np.isfinite(v):
            raise NumericalError("finite_difference_gradient: f returned a non-finite value")
        return v

    flat = x.data.reshape(-1)
    grad = np.zeros(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = value()
        flat[i] = orig - eps
        down = value()
        flat[i] = orig
        grad[i] = (up - down) / (2.0 * eps)
    return grad.reshape(x.shape)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
