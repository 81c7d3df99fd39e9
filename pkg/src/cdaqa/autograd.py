"""Dense float64 tensors with reverse-mode automatic differentiation.

Storage and elementwise kernels are numpy; the tape, the gradient rules and
the op surface are local.  Graph recording is explicit: ops executed outside a
``record()`` scope just compute values (evaluation runs graph-free).  A graph
is single-threaded; independent graphs may live on different threads, so the
active graph is thread-local.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np
from scipy.special import erf

from .errors import ContractError, ShapeError

_SQRT2 = float(np.sqrt(2.0))
_INV_SQRT_2PI = float(1.0 / np.sqrt(2.0 * np.pi))

# Additive attention-mask value.  Finite so max-subtraction stays NaN-free;
# exp(MASK_NEG - max) underflows to exactly 0.0 after softmax.
MASK_NEG = -1e30


class Tensor:
    """A dense float64 array, optionally tracked by the active graph."""

    __slots__ = ("data", "grad", "requires_grad", "node_id")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            # ascontiguousarray would promote 0-d to 1-d on older numpy, but
            # 0-d arrays are always flagged contiguous so they never get here.
            arr = np.ascontiguousarray(arr)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.node_id: int | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("out", "inputs", "vjps")

    def __init__(self, out, inputs, vjps):
        self.out = out
        self.inputs = inputs
        self.vjps = vjps


class Graph:
    """Append-only op tape; backward walks it in reverse creation order."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self.recording = True

    def add(self, out: Tensor, inputs, vjps) -> None:
        out.node_id = len(self.nodes)
        self.nodes.append(_Node(out, inputs, vjps))


_local = threading.local()


def active_graph() -> Graph | None:
    return getattr(_local, "graph", None)


@contextmanager
def record():
    """Open a recording scope; ops inside it become differentiable."""
    g = Graph()
    prev = active_graph()
    _local.graph = g
    try:
        yield g
    finally:
        g.recording = False
        _local.graph = prev


def backward(loss: Tensor, graph: Graph | None = None) -> dict[Tensor, np.ndarray]:
    """Populate .grad for every requires_grad tensor reachable from ``loss``.

    Returns a map from parameter tensor to this call's gradient contribution
    (the same array accumulated into .grad).  Deterministic: nodes are visited
    in strict reverse creation order.
    """
    g = graph if graph is not None else active_graph()
    if g is None:
        raise ContractError("backward: no active or supplied graph")
    if loss.data.shape != ():
        raise ContractError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    accum: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(g.nodes):
        gout = accum.pop(id(node.out), None)
        if gout is None:
            continue
        for inp, vjp in zip(node.inputs, node.vjps):
            if vjp is None:
                continue
            if not (inp.requires_grad or inp.node_id is not None):
                continue
            contrib = vjp(gout)
            key = id(inp)
            if key in accum:
                accum[key] = accum[key] + contrib
            else:
                accum[key] = contrib
            if inp.requires_grad and inp.node_id is None:
                leaves[key] = inp
    result: dict[Tensor, np.ndarray] = {}
    for key, tensor in leaves.items():
        gradient = accum[key]
        result[tensor] = gradient
        tensor.grad = gradient if tensor.grad is None else tensor.grad + gradient
    return result


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    """Wrap an array as a non-differentiable tensor."""
    return Tensor(x)


def _maybe_emit(out: Tensor, inputs, vjps) -> Tensor:
    g = active_graph()
    if g is not None and any(t.requires_grad or t.node_id is not None for t in inputs):
        g.add(out, inputs, vjps)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)
    return _maybe_emit(out, (a, b), (
        lambda g: _unbroadcast(g, a.data.shape),
        lambda g: _unbroadcast(g, b.data.shape),
    ))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data)
    return _maybe_emit(out, (a, b), (
        lambda g: _unbroadcast(g, a.data.shape),
        lambda g: _unbroadcast(-g, b.data.shape),
    ))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)
    return _maybe_emit(out, (a, b), (
        lambda g: _unbroadcast(g * b.data, a.data.shape),
        lambda g: _unbroadcast(g * a.data, b.data.shape),
    ))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    out = Tensor(a.data * c)
    return _maybe_emit(out, (a,), (lambda g: g * c,))


def neg(a) -> Tensor:
    return scale(a, -1.0)


def add_n(parts: list[Tensor]) -> Tensor:
    """Sum a list of same-shape tensors, left to right."""
    if not parts:
        raise ContractError("add_n: empty list")
    acc = np.zeros_like(parts[0].data)
    for p in parts:
        acc = acc + p.data
    out = Tensor(acc)
    return _maybe_emit(out, tuple(parts), tuple(lambda g: g for _ in parts))


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.sum())
    return _maybe_emit(out, (a,), (lambda g: np.full(a.data.shape, g, dtype=np.float64),))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """2-D matrix product; gradient rule dA = dC·Bᵀ, dB = Aᵀ·dC."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul: need 2-D operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree: {a.data.shape} x {b.data.shape}")
    out = Tensor(a.data @ b.data)
    return _maybe_emit(out, (a, b), (
        lambda g: g @ b.data.T,
        lambda g: a.data.T @ g,
    ))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: need 2-D, got {a.data.shape}")
    out = Tensor(a.data.T)
    return _maybe_emit(out, (a,), (lambda g: g.T,))


def linear(x, w, b=None) -> Tensor:
    """x @ wᵀ (+ b) with w stored as (out_dim × in_dim); fused for tape brevity."""
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[1]:
        raise ShapeError(f"linear: incompatible shapes {x.data.shape} and {w.data.shape}")
    y = x.data @ w.data.T
    if b is None:
        out = Tensor(y)
        return _maybe_emit(out, (x, w), (
            lambda g: g @ w.data,
            lambda g: g.T @ x.data,
        ))
    b = as_tensor(b)
    out = Tensor(y + b.data)
    return _maybe_emit(out, (x, w, b), (
        lambda g: g @ w.data,
        lambda g: g.T @ x.data,
        lambda g: g.sum(axis=0),
    ))


def concat(parts: list[Tensor], axis: int = 1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        lo, hi = offsets[i], offsets[i + 1]

        def vjp(g):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            return g[tuple(index)]

        return vjp

    return _maybe_emit(out, tuple(parts), tuple(make_vjp(i) for i in range(len(parts))))


def getcol(x, j: int) -> Tensor:
    """Column j of a 2-D tensor as a 1-D tensor."""
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"getcol: need 2-D, got {x.data.shape}")
    out = Tensor(x.data[:, j].copy())

    def vjp(g):
        z = np.zeros_like(x.data)
        z[:, j] = g
        return z

    return _maybe_emit(out, (x,), (vjp,))


def embedding(table, ids) -> Tensor:
    """Row gather; gradient scatter-adds into the table."""
    table = as_tensor(table)
    idx = np.asarray(ids, dtype=np.int64)
    out = Tensor(table.data[idx])

    def vjp(g):
        acc = np.zeros_like(table.data)
        np.add.at(acc, idx, g)
        return acc

    return _maybe_emit(out, (table,), (vjp,))


# ---------------------------------------------------------------------------
# nonlinearities and normalization


def softmax(x, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``; rows sum to 1 within 1e-12."""
    x = as_tensor(x)
    rank = x.data.ndim
    if not -rank <= axis < rank:
        raise ShapeError(f"softmax: axis {axis} out of range for rank {rank}")
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def vjp(g):
        return y * (g - (g * y).sum(axis=axis, keepdims=True))

    return _maybe_emit(out, (x,), (vjp,))


def layer_norm(x, gain, bias, eps: float = 1e-12) -> Tensor:
    """Normalize the last axis to mean 0 / variance 1, then apply gain and bias."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.data.shape[-1] if x.data.ndim else 0
    if d == 0:
        raise ShapeError("layer_norm: last dimension must be nonzero")
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data)

    lead = tuple(range(x.data.ndim - 1))

    def vjp_x(g):
        dxhat = g * gain.data
        return inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                      - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))

    def vjp_gain(g):
        return (g * xhat).sum(axis=lead) if lead else g * xhat

    def vjp_bias(g):
        return g.sum(axis=lead) if lead else g

    return _maybe_emit(out, (x, gain, bias), (vjp_x, vjp_gain, vjp_bias))


def gelu(x) -> Tensor:
    """Gaussian-error linear unit, exact erf form: x·Φ(x).

    The exact formula (not the tanh approximation) is used everywhere so the
    derivative Φ(x) + x·φ(x) matches finite differences tightly.
    """
    x = as_tensor(x)
    phi = 0.5 * (1.0 + erf(x.data / _SQRT2))
    out = Tensor(x.data * phi)

    def vjp(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
        return g * (phi + x.data * pdf)

    return _maybe_emit(out, (x,), (vjp,))


def cross_entropy(logits, target: int) -> Tensor:
    """−log softmax(logits)[target] for a 1-D logits vector."""
    logits = as_tensor(logits)
    if logits.data.ndim != 1:
        raise ShapeError(f"cross_entropy: need 1-D logits, got {logits.data.shape}")
    n = logits.data.shape[0]
    if not 0 <= target < n:
        raise IndexError(f"cross_entropy: target {target} out of range [0, {n})")
    m = logits.data.max()
    z = logits.data - m
    lse = np.log(np.exp(z).sum())
    out = Tensor(np.asarray(lse - z[target]))

    def vjp(g):
        p = np.exp(z - lse)
        p[target] -= 1.0
        return g * p

    return _maybe_emit(out, (logits,), (vjp,))


def dropout(x, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; mask drawn from the supplied generator."""
    x = as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout: rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    keep = 1.0 - rate
    mask = (rng.random(x.data.shape) < keep).astype(np.float64) / keep
    out = Tensor(x.data * mask)
    return _maybe_emit(out, (x,), (lambda g: g * mask,))
