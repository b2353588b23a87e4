"""Reverse-mode automatic differentiation over float64 numpy arrays.

A Tensor wraps an ndarray plus an optional gradient buffer. Every op that
sees at least one `requires_grad` input records a closure computing the
local vector-Jacobian product; `backward()` on a scalar loss topologically
sorts the recorded graph and runs the closures once, accumulating into
`.grad`. The tape is single use: a second backward on the same root raises.

Design constraints baked in here rather than left to callers:
  - float64 everywhere, so finite-difference checks can run at tight
    tolerances and algebraic identities (like the gate split summing back
    to its input) hold to ~1e-15,
  - broadcasting limited to what the model needs (equal shapes, leading-axis
    broadcast of bias vectors, scalars); gradients are summed back onto the
    smaller operand's shape,
  - matmul counts multiply-accumulates into the global counters so relative
    cost claims are assertable without a clock.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .counters import COUNTERS

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / frozen paths)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_backward", "_parents", "_done")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        # zeros rather than None so a parameter disconnected from the loss
        # still reports a well-defined (zero) gradient after backward
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._backward = None
        self._parents = ()
        self._done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operators ----------------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division only by python scalars")
        return mul(self, _as_tensor(1.0 / other))

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)

    def backward(self) -> None:
        """Reverse sweep from a scalar root; consumes the tape."""
        if self.size != 1:
            raise ValueError("backward requires a scalar loss")
        if self._done:
            raise RuntimeError("tape already consumed by a previous backward")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += 1.0
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()
        self._done = True


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _make(data: np.ndarray, parents: tuple, backward_fn) -> Tensor:
    requires = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = requires
    out.grad = None
    out._done = False
    if requires:
        out._parents = tuple(p for p in parents if p.requires_grad or p._parents)
        out._backward = backward_fn(out)
    else:
        out._parents = ()
        out._backward = None
    return out


# -- arithmetic ---------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bw(out):
        def run():
            if a.requires_grad:
                _accum(a, _unbroadcast(out.grad, a.data.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(out.grad, b.data.shape))
        return run

    return _make(data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bw(out):
        def run():
            if a.requires_grad:
                _accum(a, _unbroadcast(out.grad * b.data, a.data.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(out.grad * a.data, b.data.shape))
        return run

    return _make(data, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    def bw(out):
        def run():
            if a.requires_grad:
                _accum(a, -out.grad)
        return run

    return _make(-a.data, (a,), bw)


def one_minus(a: Tensor) -> Tensor:
    """1 - a, the complement-gate arm."""

    def bw(out):
        def run():
            if a.requires_grad:
                _accum(a, -out.grad)
        return run

    return _make(1.0 - a.data, (a,), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D or batched 3-D matrix product; counts MACs into COUNTERS."""
    data = a.data @ b.data
    m, k = a.data.shape[-2], a.data.shape[-1]
    n = b.data.shape[-1]
    batch = int(np.prod(data.shape[:-2])) if data.ndim > 2 else 1
    COUNTERS.macs += batch * m * k * n

    def bw(out):
        def run():
            g = out.grad
            if a.requires_grad:
                ga = g @ np.swapaxes(b.data, -1, -2)
                _accum(a, _unbroadcast(ga, a.data.shape))
            if b.requires_grad:
                gb = np.swapaxes(a.data, -1, -2) @ g
                _accum(b, _unbroadcast(gb, b.data.shape))
        return run

    return _make(data, (a, b), bw)


# -- nonlinearities -----------------------------------------------------------


def sigmoid(a: Tensor) -> Tensor:
    # exp of the negative magnitude only, to avoid overflow on either tail
    x = a.data
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def bw(out):
        def run():
            if a.requires_grad:
                _accum(a, out.grad * s * (1.0 - s))
        return run

    return _make(s, (a,), bw)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a: Tensor) -> Tensor:
    """tanh-approximation GELU; the analytic gradient matches this form."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    data = 0.5 * x * (1.0 + t)

    def bw(out):
        def run():
            if a.requires_grad:
                d_inner = _GELU_C * (1.0 + 3.0 * 0.044715 * x ** 2)
                d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * d_inner
                _accum(a, out.grad * d)
        return run

    return _make(data, (a,), bw)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = x.data.shape[-1]
    if d == 0:
        raise ValueError("layernorm over an empty axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xh = (x.data - mu) * inv
    data = gamma.data * xh + beta.data

    def bw(out):
        def run():
            g = out.grad
            if gamma.requires_grad:
                _accum(gamma, (g * xh).reshape(-1, d).sum(axis=0))
            if beta.requires_grad:
                _accum(beta, g.reshape(-1, d).sum(axis=0))
            if x.requires_grad:
                dxh = g * gamma.data
                m1 = dxh.mean(axis=-1, keepdims=True)
                m2 = (dxh * xh).mean(axis=-1, keepdims=True)
                _accum(x, (dxh - m1 - xh * m2) * inv)
        return run

    return _make(data, (x, gamma, beta), bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(out):
        def run():
            if x.requires_grad:
                g = out.grad
                _accum(x, s * (g - (g * s).sum(axis=axis, keepdims=True)))
        return run

    return _make(s, (x,), bw)


# -- reductions and losses ----------------------------------------------------


def tsum(x: Tensor, axis=None) -> Tensor:
    data = x.data.sum(axis=axis)

    def bw(out):
        def run():
            if x.requires_grad:
                g = out.grad
                if axis is not None:
                    g = np.expand_dims(g, axis)
                _accum(x, np.broadcast_to(g, x.data.shape).copy())
        return run

    return _make(np.asarray(data), (x,), bw)


def tmean(x: Tensor, axis=None) -> Tensor:
    n = x.data.size if axis is None else x.data.shape[axis]
    return mul(tsum(x, axis), _as_tensor(1.0 / n))


def bce_with_logits(z: Tensor, y) -> Tensor:
    """Mean binary cross entropy from logits, in the stable log-sum form."""
    t = y.data if isinstance(y, Tensor) else np.asarray(y, dtype=np.float64)
    if not np.all((t == 0.0) | (t == 1.0)):
        raise ValueError("targets must be 0/1")
    x = z.data
    loss = np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))
    n = x.size
    data = np.asarray(loss.sum() / n)

    def bw(out):
        def run():
            if z.requires_grad:
                s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                             np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
                _accum(z, out.grad * (s - t) / n)
        return run

    return _make(data, (z,), bw)


def mse(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError("mse requires equal shapes")
    diff = a.data - b.data
    n = diff.size
    data = np.asarray((diff * diff).sum() / n)

    def bw(out):
        def run():
            scale = out.grad * 2.0 / n
            if a.requires_grad:
                _accum(a, scale * diff)
            if b.requires_grad:
                _accum(b, -scale * diff)
        return run

    return _make(data, (a, b), bw)


def avg_pool2d(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Window-average N masks at once; truncates non-divisible extents.

    Windows are kh x kw with kh = H // out_h, kw = W // out_w, tiling the
    top-left region; trailing rows/cols are dropped. Counts one pool call
    per mask in the batch.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError("pooling grid extents must be positive")
    nb, h, w = x.data.shape
    kh, kw = h // out_h, w // out_w
    if kh < 1 or kw < 1:
        raise ValueError("pooling grid larger than input extent")
    COUNTERS.pool_calls += nb
    trimmed = x.data[:, : out_h * kh, : out_w * kw]
    data = trimmed.reshape(nb, out_h, kh, out_w, kw).sum(axis=(2, 4)) / float(kh * kw)

    def bw(out):
        def run():
            if x.requires_grad:
                g = np.zeros_like(x.data)
                spread = np.broadcast_to(
                    out.grad[:, :, None, :, None] / float(kh * kw),
                    (nb, out_h, kh, out_w, kw),
                )
                g[:, : out_h * kh, : out_w * kw] = spread.reshape(
                    nb, out_h * kh, out_w * kw
                )
                _accum(x, g)
        return run

    return _make(data, (x,), bw)


# -- shape ops ----------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    def bw(out):
        def run():
            if x.requires_grad:
                _accum(x, out.grad.reshape(x.data.shape))
        return run

    return _make(x.data.reshape(shape), (x,), bw)


def transpose(x: Tensor, axes) -> Tensor:
    inv = tuple(np.argsort(axes))

    def bw(out):
        def run():
            if x.requires_grad:
                _accum(x, out.grad.transpose(inv))
        return run

    return _make(np.ascontiguousarray(x.data.transpose(axes)), (x,), bw)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(out):
        def run():
            for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
                if t.requires_grad:
                    sl = [slice(None)] * out.grad.ndim
                    sl[axis] = slice(lo, hi)
                    _accum(t, out.grad[tuple(sl)])
        return run

    return _make(data, tuple(tensors), bw)


def take_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows along axis 0 (differentiable scatter-add on backward)."""
    idx = np.asarray(idx, dtype=np.int64)

    def bw(out):
        def run():
            if x.requires_grad:
                g = np.zeros_like(x.data)
                np.add.at(g, idx, out.grad)
                _accum(x, g)
        return run

    return _make(x.data[idx], (x,), bw)
