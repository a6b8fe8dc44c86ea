"""Reverse-mode automatic differentiation on dense float64 numpy arrays.

Define-by-run: every operation returns a Tensor that records its parents
and a backward closure.  Calling ``backward`` on a scalar (or with an
explicit output gradient) accumulates ``.grad`` on every tensor in the
graph that has ``requires_grad`` set -- including plain inputs, whose
gradients drive the sampling-time guidance.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes do not match the operation contract."""


class StaleGraphError(RuntimeError):
    """Raised when backward is invoked on an already-released graph."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None,
                 name=None):
        arr = np.asarray(data, dtype=np.float64)
        if _backward is None and not np.all(np.isfinite(arr)):
            raise ValueError(f"non-finite entries entering the graph ({name or 'leaf'})")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate gradients of this output into every graph tensor.

        The graph is released afterwards; a second call raises
        StaleGraphError.  ``grad`` defaults to 1.0 for scalar outputs.
        """
        if self._backward is None and self._parents == () and self.requires_grad:
            raise StaleGraphError(
                "backward() needs a recorded forward pass (leaf or released graph)")
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("non-scalar backward() needs an explicit gradient")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.data.shape:
            raise ShapeError(
                f"output gradient shape {grad.shape} != value shape {self.data.shape}")
        if not np.all(np.isfinite(grad)):
            raise ValueError("non-finite output gradient")

        order = []
        seen = set()
        stack = [(self, False)]
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            node._parents = ()
            node._backward = None

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad=False, name=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand shape."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _make(data, parents, backward, name=None) -> Tensor:
    requires = any(p.requires_grad for p in parents)
    if not requires:
        return Tensor.__new__(Tensor)._init_plain(data)
    return Tensor(data, requires_grad=True, _parents=tuple(parents),
                  _backward=backward, name=name)


def _init_plain(self, data):
    self.data = np.asarray(data, dtype=np.float64)
    self.grad = None
    self.requires_grad = False
    self._parents = ()
    self._backward = None
    self.name = None
    return self


Tensor._init_plain = _init_plain


# -- elementwise and linear algebra ----------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: {a.shape} vs {b.shape}: {exc}") from None

    def backward(grad):
        if a.requires_grad:
            a._accumulate(_unbroadcast(grad, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(grad, b.shape))

    return _make(out, (a, b), backward, "add")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: {a.shape} vs {b.shape}: {exc}") from None

    def backward(grad):
        if a.requires_grad:
            a._accumulate(_unbroadcast(grad * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(grad * a.data, b.shape))

    return _make(out, (a, b), backward, "mul")


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(grad):
        if a.requires_grad:
            a._accumulate(grad @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ grad)

    return _make(out, (a, b), backward, "matmul")


def power(x, exponent: float) -> Tensor:
    x = _as_tensor(x)
    out = x.data ** exponent

    def backward(grad):
        if x.requires_grad:
            x._accumulate(grad * exponent * x.data ** (exponent - 1.0))

    return _make(out, (x,), backward, "power")


def texp(x) -> Tensor:
    x = _as_tensor(x)
    out = np.exp(x.data)

    def backward(grad):
        if x.requires_grad:
            x._accumulate(grad * out)

    return _make(out, (x,), backward, "exp")


def tlog(x) -> Tensor:
    x = _as_tensor(x)
    out = np.log(x.data)

    def backward(grad):
        if x.requires_grad:
            x._accumulate(grad / x.data)

    return _make(out, (x,), backward, "log")


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    out = 1.0 / (1.0 + np.exp(-x.data))

    def backward(grad):
        if x.requires_grad:
            x._accumulate(grad * out * (1.0 - out))

    return _make(out, (x,), backward, "sigmoid")


def silu(x) -> Tensor:
    """x * sigmoid(x), smooth everywhere."""
    x = _as_tensor(x)
    s = 1.0 / (1.0 + np.exp(-x.data))
    out = x.data * s

    def backward(grad):
        if x.requires_grad:
            x._accumulate(grad * s * (1.0 + x.data * (1.0 - s)))

    return _make(out, (x,), backward, "silu")


def log_sigmoid(x) -> Tensor:
    """log(sigmoid(x)) computed stably; output is always <= 0."""
    x = _as_tensor(x)
    out = np.where(x.data < 0, x.data - np.log1p(np.exp(x.data)),
                   -np.log1p(np.exp(-x.data)))

    def backward(grad):
        if x.requires_grad:
            x._accumulate(grad / (1.0 + np.exp(x.data)))  # = grad * sigmoid(-x)

    return _make(out, (x,), backward, "log_sigmoid")


def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = _as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(grad):
        if not x.requires_grad:
            return
        g = grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.shape).copy())

    return _make(out, (x,), backward, "sum")


def tmean(x, axis=None, keepdims=False) -> Tensor:
    x = _as_tensor(x)
    out = x.data.mean(axis=axis, keepdims=keepdims)
    scale = x.data.size / out.size

    def backward(grad):
        if not x.requires_grad:
            return
        g = grad / scale
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.shape).copy())

    return _make(out, (x,), backward, "mean")


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    out = x.data.reshape(shape)

    def backward(grad):
        if x.requires_grad:
            x._accumulate(grad.reshape(x.shape))

    return _make(out, (x,), backward, "reshape")


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(grad):
        for t, piece in zip(tensors, np.split(grad, splits, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    return _make(out, tuple(tensors), backward, "concat")


# -- spatial operations ------------------------------------------------------

def _im2col(x: np.ndarray, kh, kw, stride, pad):
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d: kernel {(kh, kw)} too large for input {(h, w)}")
    cols = np.empty((n, c, kh, kw, oh, ow))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * oh:stride,
                                  j:j + stride * ow:stride]
    return cols, oh, ow


def _col2im(dcols: np.ndarray, x_shape, stride, pad):
    n, c, h, w = x_shape
    kh, kw, oh, ow = dcols.shape[2], dcols.shape[3], dcols.shape[4], dcols.shape[5]
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * oh:stride,
                j:j + stride * ow:stride] += dcols[:, :, i, j]
    return dxp[:, :, pad:pad + h, pad:pad + w] if pad else dxp


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation; x (N,C,H,W), weight (O,C,kh,kw), bias (O,)."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError("conv2d expects 4-d input and weight")
    n, c, _, _ = x.shape
    o, cw, kh, kw = weight.shape
    if c != cw:
        raise ShapeError(f"conv2d: input channels {c} != weight channels {cw}")
    cols, oh, ow = _im2col(x.data, kh, kw, stride, padding)
    cols_mat = cols.reshape(n, c * kh * kw, oh * ow)
    w_mat = weight.data.reshape(o, -1)
    out = np.matmul(w_mat[None], cols_mat).reshape(n, o, oh, ow)
    parents = [x, weight]
    if bias is not None:
        bias = _as_tensor(bias)
        out = out + bias.data[None, :, None, None]
        parents.append(bias)

    def backward(grad):
        g = grad.reshape(n, o, oh * ow)
        if weight.requires_grad:
            dw = np.einsum("nol,nkl->ok", g, cols_mat, optimize=True)
            weight._accumulate(dw.reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias._accumulate(grad.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dcols = np.matmul(w_mat.T[None], g).reshape(n, c, kh, kw, oh, ow)
            x._accumulate(_col2im(dcols, x.shape, stride, padding))

    return _make(out, tuple(parents), backward, "conv2d")


def upsample_nearest(x, factor: int = 2) -> Tensor:
    x = _as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError("upsample_nearest expects a 4-d tensor")
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)
    n, c, h, w = x.shape

    def backward(grad):
        if x.requires_grad:
            x._accumulate(
                grad.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)))

    return _make(out, (x,), backward, "upsample_nearest")


# -- optimizer ---------------------------------------------------------------

@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params) -> dict:
    return {
        "step": 0,
        "m": [np.zeros_like(p) for p in params],
        "v": [np.zeros_like(p) for p in params],
    }


def adam_step(params, grads, state, hyper: AdamHyper):
    """One bias-corrected Adam update; pure in its array arguments."""
    if len(params) != len(grads):
        raise ShapeError("adam_step: params/grads length mismatch")
    step = state["step"] + 1
    c1 = 1.0 - hyper.beta1 ** step
    c2 = 1.0 - hyper.beta2 ** step
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        if p.shape != g.shape:
            raise ShapeError(f"adam_step: param {p.shape} vs grad {g.shape}")
        m = hyper.beta1 * m + (1.0 - hyper.beta1) * g
        v = hyper.beta2 * v + (1.0 - hyper.beta2) * g * g
        update = hyper.lr * (m / c1) / (np.sqrt(v / c2) + hyper.eps)
        new_params.append(p - update)
        new_m.append(m)
        new_v.append(v)
    return new_params, {"step": step, "m": new_m, "v": new_v}


class Adam:
    """Adam over a list of parameter Tensors (in-place on .data)."""

    def __init__(self, tensors, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.tensors = list(tensors)
        self.hyper = AdamHyper(lr, beta1, beta2, eps)
        self.state = adam_init([t.data for t in self.tensors])

    def step(self):
        grads = [t.grad if t.grad is not None else np.zeros_like(t.data)
                 for t in self.tensors]
        new, self.state = adam_step([t.data for t in self.tensors], grads,
                                    self.state, self.hyper)
        for t, value in zip(self.tensors, new):
            t.data = value

    def zero_grad(self):
        for t in self.tensors:
            t.zero_grad()


# -- verification ------------------------------------------------------------

def grad_check(fn, inputs, step: float = 1e-5, max_entries: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Max relative error between backward grads and central differences.

    ``fn(*inputs)`` must return a scalar Tensor.  With ``max_entries`` set,
    a random subset of coordinates per tensor is checked (seeded by ``rng``).
    """
    inputs = list(inputs)
    for t in inputs:
        t.zero_grad()
    out = fn(*inputs)
    out.backward()
    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            if rng is None:
                rng = np.random.default_rng(0)
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        for i in idx:
            keep = flat[i]
            flat[i] = keep + step
            hi = float(fn(*inputs).data)
            flat[i] = keep - step
            lo = float(fn(*inputs).data)
            flat[i] = keep
            fd = (hi - lo) / (2.0 * step)
            ad = analytic.reshape(-1)[i]
            err = abs(ad - fd) / max(1.0, abs(ad), abs(fd))
            worst = max(worst, err)
    return worst
