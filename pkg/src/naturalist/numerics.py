"""Dense float64 tensors with reverse-mode automatic differentiation.

Only the operations the captioning model needs are provided. Broadcasting is
restricted to a right-aligned operand whose shape equals the trailing
dimensions of the other operand (bias-style, leading-batch broadcasting).
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True
CHECK_FINITE = False
_KINKS: list | None = None  # activation patterns of relu/maximum while grad_check probes


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


@contextlib.contextmanager
def finite_checks(enabled: bool = True):
    global CHECK_FINITE
    previous = CHECK_FINITE
    CHECK_FINITE = enabled
    try:
        yield
    finally:
        CHECK_FINITE = previous


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = "leaf"
        self.name = name

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf requiring grad."""
        if grad is None:
            if self.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        pending: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by {op}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape:
        return
    small, big = (b, a) if b.ndim <= a.ndim else (a, b)
    if small.ndim == 0 or big.shape[big.ndim - small.ndim:] == small.shape:
        return
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.reshape((-1,) + shape).sum(axis=0) if lead > 0 else g.sum().reshape(shape)


# elementwise -----------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")
    sa, sb = a.shape, b.shape
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, sa), _unbroadcast(g * ad, sb)), "mul")


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; the subgradient goes to the larger input, ties to ``a``."""
    if a.shape != b.shape:
        raise ShapeError(f"maximum: incompatible shapes {a.shape} and {b.shape}")
    first = a.data >= b.data
    if _KINKS is not None:
        _KINKS.append(first)
    return _result(np.where(first, a.data, b.data), (a, b),
                   lambda g: (g * first, g * ~first), "maximum")


def scale(a: Tensor, c: float) -> Tensor:
    return _result(a.data * c, (a,), lambda g: (g * c,), "scale")


def relu(a: Tensor) -> Tensor:
    positive = a.data > 0
    if _KINKS is not None:
        _KINKS.append(positive)
    return _result(a.data * positive, (a,), lambda g: (g * positive,), "relu")


# structural ------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` where ``b`` is a matrix, or both operands share batch dims."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    if b.ndim == 2:
        def backward(g):
            ga = g @ bd.T
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return ga, gb
    elif a.shape[:-2] == b.shape[:-2]:
        def backward(g):
            return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g
    else:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _result(ad @ bd, (a, b), backward, "matmul")


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,),
                   lambda g: (np.transpose(g, inverse),), "transpose")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    original = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(original),), "reshape")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat: nothing to concatenate")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {ref} and {t.shape} along axis {axis}")
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _result(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors),
                   backward, "concat")


def total(a: Tensor) -> Tensor:
    shape = a.shape
    return _result(np.asarray(a.data.sum()), (a,),
                   lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def mean(a: Tensor) -> Tensor:
    return scale(total(a), 1.0 / a.size)


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``weight[ids]``."""
    ids = np.asarray(ids, dtype=np.int64)
    vocab, width = weight.shape
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise IndexError(f"embedding: id out of range for vocabulary of {vocab}")

    def backward(g):
        flat = ids.reshape(-1)
        onehot = np.zeros((flat.size, vocab))
        onehot[np.arange(flat.size), flat] = 1.0
        return (onehot.T @ g.reshape(-1, width),)

    return _result(weight.data[ids], (weight,), backward, "embedding")


# normalisation and losses ----------------------------------------------------

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (a,), backward, "softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean and unit population variance, then scale and shift."""
    n = x.shape[-1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise ShapeError(f"layer_norm: gain/bias {gain.shape}/{bias.shape} vs input {x.shape}")
    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    gd = gain.data

    def backward(g):
        gx = g * gd
        dx = inv_std * (gx - gx.mean(axis=-1, keepdims=True)
                        - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        lead = g.reshape(-1, n)
        return dx, (lead * xhat.reshape(-1, n)).sum(axis=0), lead.sum(axis=0)

    return _result(xhat * gd + bias.data, (x, gain, bias), backward, "layer_norm")


def cross_entropy(logits: Tensor, targets, mask=None) -> Tensor:
    """Mean negative log-likelihood in nats over unmasked positions.

    ``logits`` has shape ``(..., vocab)``; ``targets`` and ``mask`` have the
    leading shape.
    """
    targets = np.asarray(targets, dtype=np.int64)
    vocab = logits.shape[-1]
    if targets.shape != logits.shape[:-1]:
        raise ShapeError(f"cross_entropy: targets {targets.shape} vs logits {logits.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        raise IndexError(f"cross_entropy: target id out of range for vocabulary of {vocab}")
    weights = np.ones(targets.shape) if mask is None else np.asarray(mask, dtype=np.float64)
    count = weights.sum()
    if count == 0:
        raise ValueError("cross_entropy: mask selects no positions")
    flat = logits.data.reshape(-1, vocab)
    tflat = targets.reshape(-1)
    wflat = weights.reshape(-1)
    shifted = flat - flat.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(tflat.size)
    nll = logz - shifted[rows, tflat]
    loss = float((nll * wflat).sum() / count)

    def backward(g):
        p = np.exp(shifted - logz[:, None])
        p[rows, tflat] -= 1.0
        p *= (wflat / count)[:, None] * g
        return (p.reshape(logits.shape),)

    return _result(np.asarray(loss), (logits,), backward, "cross_entropy")


# gradient checking -----------------------------------------------------------

def _pattern(fn) -> tuple[float, list]:
    global _KINKS
    _KINKS = []
    try:
        value = float(fn().data)
        return value, _KINKS
    finally:
        _KINKS = None


def _same_pattern(a: list, b: list) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(fn: Callable[[], Tensor], inputs: Iterable[Tensor], step: float = 1e-5,
               max_per_tensor: int | None = None, rng=None,
               analytic: dict[int, np.ndarray] | None = None, atol: float = 1e-6,
               stats: dict | None = None) -> float:
    """Largest relative error between reverse-mode and central-difference gradients.

    ``fn`` must rebuild the scalar from ``inputs`` on every call. With
    ``max_per_tensor`` only that many randomly chosen components of each input
    are probed. ``analytic`` overrides the reverse-mode gradients (keyed by
    ``id(tensor)``), which is how a corrupted gradient is injected in tests.

    The error of one component is ``|a - n| / max(|a|, |n|, atol)``; the
    ``atol`` floor keeps gradients that are exactly zero (e.g. attention key
    biases, which softmax ignores) from turning finite-difference round-off
    into a large relative error.

    A probe whose ``+-step`` stencil flips any relu/maximum decision is not
    differentiable there and is skipped; ``stats`` (if given) receives the
    ``probed`` and ``skipped`` counts.
    """
    inputs = list(inputs)
    for t in inputs:
        t.grad = None
    fn().backward()
    grads = {id(t): (np.zeros_like(t.data) if t.grad is None else t.grad.copy()) for t in inputs}
    if analytic:
        grads.update(analytic)
    rng = np.random.default_rng(0) if rng is None else rng
    worst = 0.0
    probed = skipped = 0
    with no_grad():
        _, base = _pattern(fn)
        for t in inputs:
            flat = t.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_per_tensor is not None and flat.size > max_per_tensor:
                idx = rng.choice(flat.size, size=max_per_tensor, replace=False)
            g = grads[id(t)].reshape(-1)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + step
                up, up_kinks = _pattern(fn)
                flat[i] = orig - step
                down, down_kinks = _pattern(fn)
                flat[i] = orig
                probed += 1
                if not (_same_pattern(base, up_kinks) and _same_pattern(base, down_kinks)):
                    skipped += 1
                    continue
                numeric = (up - down) / (2 * step)
                denom = max(abs(numeric), abs(g[i]), atol)
                worst = max(worst, abs(numeric - g[i]) / denom)
    for t in inputs:
        t.grad = None
    if stats is not None:
        stats.update(probed=probed, skipped=skipped)
    return worst
