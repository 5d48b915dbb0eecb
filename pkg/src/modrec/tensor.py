"""Dense numeric arrays with reverse-mode automatic differentiation.

Covers exactly what the classifier needs: matrix products, 1-D
convolution, pointwise activations, softmax, a handful of movement ops,
and a finite-difference gradient checker. Gradients are accumulated by
per-node backward closures over a topologically ordered tape, in the
style of the usual scratch-built engines.

Layout is row-major throughout. Precision defaults to float64; float32
can be switched on for training speed, but gradient checks are only
meaningful at float64.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ShapeError

_DEFAULT_DTYPE = np.dtype(np.float64)


def set_default_dtype(dtype) -> None:
    """Switch the precision of newly constructed tensors."""
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt.kind != "f" or dt.itemsize not in (4, 8):
        raise ValueError(f"unsupported dtype {dtype!r}; use float32 or float64")
    _DEFAULT_DTYPE = dt


def default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


class Tensor:
    """A dense array plus an optional gradient and a backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"]) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        # prune the tape below non-differentiable results so inference
        # builds no graph at all
        out._parents = tuple(parents) if out.requires_grad else ()
        out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def backward(self) -> None:
        """Populate .grad on every tensor this scalar depends on.

        Grads across the reachable graph are reset first, so running
        backward twice on the same graph gives bitwise-identical
        results.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {self.shape}")
        order = _topo_order(self)
        for node in order:
            if node.requires_grad:
                node.grad = None
        if not self.requires_grad:
            return
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _topo_order(root: Tensor) -> list[Tensor]:
    # iterative postorder: LSTM graphs are far deeper than the default
    # recursion limit
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
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _acc_new(t: Tensor, g: np.ndarray) -> None:
    """Accumulate a freshly allocated gradient (the tensor may keep it)."""
    if t.grad is None:
        t.grad = g
    else:
        t.grad += g


def _acc_shared(t: Tensor, g: np.ndarray) -> None:
    """Accumulate a gradient that may alias another node's buffer."""
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def _grad_buffer(t: Tensor) -> np.ndarray:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    return t.grad


def tensor_new(shape: Iterable[int], data: Iterable[float]) -> Tensor:
    """Build a tensor from an extent list and flat row-major values."""
    shape = tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise ShapeError(f"extents must be >= 1, got {shape}")
    flat = np.asarray(list(data), dtype=_DEFAULT_DTYPE)
    expected = math.prod(shape) if shape else 1
    if flat.size != expected:
        raise ShapeError(f"shape {shape} needs {expected} values, got {flat.size}")
    return Tensor(flat.reshape(shape))


def backward(loss: Tensor) -> None:
    loss.backward()


# ---------------------------------------------------------------------------
# arithmetic


def _check_addable(a_shape, b_shape) -> None:
    if a_shape == b_shape:
        return
    # trailing-suffix broadcast only (bias adds); anything wider is out
    # of scope
    small, big = sorted((a_shape, b_shape), key=len)
    if len(small) < len(big) and big[len(big) - len(small) :] == small:
        return
    raise ShapeError(f"cannot add shapes {a_shape} and {b_shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_addable(a.shape, b.shape)
    out = Tensor._from_op(a.data + b.data, (a, b))
    if out.requires_grad:

        def _bw():
            for t in (a, b):
                if t.requires_grad:
                    if out.grad.shape == t.data.shape:
                        _acc_shared(t, out.grad)
                    else:
                        extra = out.grad.ndim - t.data.ndim
                        _acc_new(t, out.grad.sum(axis=tuple(range(extra))))

        out._backward = _bw
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"elementwise mul needs equal shapes, got {a.shape} and {b.shape}")
    out = Tensor._from_op(a.data * b.data, (a, b))
    if out.requires_grad:

        def _bw():
            if a.requires_grad:
                _acc_new(a, out.grad * b.data)
            if b.requires_grad:
                _acc_new(b, out.grad * a.data)

        out._backward = _bw
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.ndim == 0 or bd.ndim == 0 or (ad.ndim == 1 and bd.ndim == 1):
        raise ShapeError(f"unsupported matmul arrangement {ad.shape} @ {bd.shape}")
    if ad.ndim > 3 or bd.ndim > 3 or (ad.ndim == 2 and bd.ndim == 3):
        raise ShapeError(f"unsupported matmul arrangement {ad.shape} @ {bd.shape}")
    inner_a = ad.shape[-1]
    inner_b = bd.shape[-2] if bd.ndim >= 2 else bd.shape[0]
    if inner_a != inner_b:
        raise ShapeError(f"inner extents disagree: {ad.shape} @ {bd.shape}")
    if ad.ndim == 3 and bd.ndim == 3 and ad.shape[0] != bd.shape[0]:
        raise ShapeError(f"batch extents disagree: {ad.shape} @ {bd.shape}")

    out = Tensor._from_op(np.matmul(ad, bd), (a, b))
    if out.requires_grad:

        def _bw():
            g = out.grad
            if ad.ndim == 2 and bd.ndim == 1:
                if a.requires_grad:
                    _acc_new(a, np.outer(g, bd))
                if b.requires_grad:
                    _acc_new(b, ad.T @ g)
            elif ad.ndim == 1 and bd.ndim == 2:
                if a.requires_grad:
                    _acc_new(a, bd @ g)
                if b.requires_grad:
                    _acc_new(b, np.outer(ad, g))
            elif ad.ndim == 2 and bd.ndim == 2:
                if a.requires_grad:
                    _acc_new(a, g @ bd.T)
                if b.requires_grad:
                    _acc_new(b, ad.T @ g)
            elif ad.ndim == 3 and bd.ndim == 3:
                if a.requires_grad:
                    _acc_new(a, np.matmul(g, bd.transpose(0, 2, 1)))
                if b.requires_grad:
                    _acc_new(b, np.matmul(ad.transpose(0, 2, 1), g))
            else:  # (B,m,k) @ (k,n)
                if a.requires_grad:
                    _acc_new(a, np.matmul(g, bd.T))
                if b.requires_grad:
                    _acc_new(b, np.einsum("bmk,bmn->kn", ad, g))

        out._backward = _bw
    return out


def conv1d(x: Tensor, kernels: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation along the time axis (no kernel flip).

    x is (C_in, T) or batched (B, C_in, T); kernels are
    (C_out, C_in, k); bias is (C_out,).
    """
    xd, wd, bd = x.data, kernels.data, bias.data
    if xd.ndim not in (2, 3) or wd.ndim != 3:
        raise ShapeError(f"conv1d expects (C,T) or (B,C,T) input and (O,C,k) kernels, got {xd.shape} and {wd.shape}")
    c_out, c_in, k = wd.shape
    if xd.shape[-2] != c_in:
        raise ShapeError(f"input has {xd.shape[-2]} channels, kernels expect {c_in}")
    if bd.shape != (c_out,):
        raise ShapeError(f"bias shape {bd.shape} does not match {c_out} output channels")
    if stride < 1 or padding < 0:
        raise ShapeError(f"stride must be >= 1 and padding >= 0, got {stride}, {padding}")
    t_in = xd.shape[-1]
    t_padded = t_in + 2 * padding
    if k > t_padded:
        raise ShapeError(f"kernel length {k} exceeds padded input length {t_padded}")
    t_out = (t_padded - k) // stride + 1

    batched = xd.ndim == 3
    pad_spec = [(0, 0)] * (xd.ndim - 1) + [(padding, padding)]
    xp = np.pad(xd, pad_spec) if padding else xd
    stop = stride * (t_out - 1) + 1
    # channel-first accumulation keeps each tap a single large gemm
    acc = np.zeros((c_out,) + xd.shape[:-2] + (t_out,), dtype=xd.dtype)
    for j in range(k):
        seg = xp[..., :, j : j + stop : stride]
        acc += np.tensordot(wd[:, :, j], seg, axes=(1, seg.ndim - 2))
    data = np.ascontiguousarray(np.moveaxis(acc, 0, -2))
    data += bd.reshape((c_out, 1))

    out = Tensor._from_op(data, (x, kernels, bias))
    if out.requires_grad:

        def _bw():
            g = out.grad
            if bias.requires_grad:
                _acc_new(bias, g.sum(axis=tuple(i for i in range(g.ndim) if i != g.ndim - 2)))
            gxp = np.zeros((c_in,) + xd.shape[:-2] + (t_padded,), dtype=xd.dtype) if x.requires_grad else None
            kgrad = _grad_buffer(kernels) if kernels.requires_grad else None
            sum_axes = ((0, 2), (0, 2)) if batched else (1, 1)
            for j in range(k):
                if kgrad is not None:
                    seg = xp[..., :, j : j + stop : stride]
                    kgrad[:, :, j] += np.tensordot(g, seg, axes=sum_axes)
                if gxp is not None:
                    gxp[..., j : j + stop : stride] += np.tensordot(wd[:, :, j], g, axes=(0, g.ndim - 2))
            if gxp is not None:
                dx = np.moveaxis(gxp, 0, -2)[..., :, padding : padding + t_in]
                _acc_shared(x, dx)

        out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# pointwise and reductions


def _sigmoid_values(v: np.ndarray) -> np.ndarray:
    # tanh form never overflows: sigma(v) = (tanh(v/2) + 1) / 2
    return 0.5 * np.tanh(0.5 * v) + 0.5


def apply_activation(x: Tensor, kind: str) -> Tensor:
    xd = x.data
    if kind == "relu":
        y = np.maximum(xd, 0.0)
    elif kind == "sigmoid":
        y = _sigmoid_values(xd)
    elif kind == "tanh":
        y = np.tanh(xd)
    else:
        raise ValueError(f"unknown activation {kind!r}")
    out = Tensor._from_op(y, (x,))
    if out.requires_grad:

        def _bw():
            if kind == "relu":
                # subgradient at 0 is 0
                _acc_new(x, out.grad * (xd > 0))
            elif kind == "sigmoid":
                _acc_new(x, out.grad * (y * (1.0 - y)))
            else:
                _acc_new(x, out.grad * (1.0 - y * y))

        out._backward = _bw
    return out


def relu(x: Tensor) -> Tensor:
    return apply_activation(x, "relu")


def sigmoid(x: Tensor) -> Tensor:
    return apply_activation(x, "sigmoid")


def tanh(x: Tensor) -> Tensor:
    return apply_activation(x, "tanh")


def softmax(x: Tensor) -> Tensor:
    """Stable softmax over the last axis."""
    xd = x.data
    if xd.ndim == 0:
        raise ShapeError("softmax needs at least one axis")
    m = xd.max(axis=-1, keepdims=True)
    e = np.exp(xd - m)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor._from_op(y, (x,))
    if out.requires_grad:

        def _bw():
            g = out.grad
            _acc_new(x, (g - (g * y).sum(axis=-1, keepdims=True)) * y)

        out._backward = _bw
    return out


def sum_all(x: Tensor) -> Tensor:
    out = Tensor._from_op(np.asarray(x.data.sum()), (x,))
    if out.requires_grad:

        def _bw():
            _acc_new(x, np.full_like(x.data, float(out.grad)))

        out._backward = _bw
    return out


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    out = Tensor._from_op(np.asarray(x.data.mean()), (x,))
    if out.requires_grad:

        def _bw():
            _acc_new(x, np.full_like(x.data, float(out.grad) / n))

        out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# movement


def transpose(x: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    perm = tuple(axes) if axes is not None else tuple(reversed(range(x.ndim)))
    out = Tensor._from_op(np.transpose(x.data, perm), (x,))
    if out.requires_grad:
        inv = tuple(np.argsort(perm))

        def _bw():
            _acc_shared(x, np.transpose(out.grad, inv))

        out._backward = _bw
    return out


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor._from_op(x.data.reshape(shape), (x,))
    if out.requires_grad:

        def _bw():
            _acc_shared(x, out.grad.reshape(x.data.shape))

        out._backward = _bw
    return out


def take_index(x: Tensor, index: int, axis: int) -> Tensor:
    """Select one slice along an axis, dropping that axis."""
    out = Tensor._from_op(np.take(x.data, index, axis=axis), (x,))
    if out.requires_grad:
        slicer = [slice(None)] * x.ndim
        slicer[axis] = index
        slicer = tuple(slicer)

        def _bw():
            _grad_buffer(x)[slicer] += out.grad

        out._backward = _bw
    return out


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along an axis, keeping the axis."""
    slicer = [slice(None)] * x.ndim
    slicer[axis] = slice(start, start + length)
    slicer = tuple(slicer)
    out = Tensor._from_op(x.data[slicer], (x,))
    if out.requires_grad:

        def _bw():
            _grad_buffer(x)[slicer] += out.grad

        out._backward = _bw
    return out


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    out = Tensor._from_op(np.concatenate([t.data for t in tensors], axis=axis), tensors)
    if out.requires_grad:
        ax = axis if axis >= 0 else tensors[0].ndim + axis
        sizes = [t.shape[ax] for t in tensors]

        def _bw():
            offset = 0
            for t, size in zip(tensors, sizes):
                if t.requires_grad:
                    slicer = [slice(None)] * out.ndim
                    slicer[ax] = slice(offset, offset + size)
                    _acc_shared(t, out.grad[tuple(slicer)])
                offset += size

        out._backward = _bw
    return out


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    out = Tensor._from_op(np.stack([t.data for t in tensors], axis=axis), tensors)
    if out.requires_grad:

        def _bw():
            for idx, t in enumerate(tensors):
                if t.requires_grad:
                    _acc_new(t, np.take(out.grad, idx, axis=axis))

        out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# verification


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference grads.

    Returns max_i |analytic_i - fd_i| / max(1, |fd_i|). f must be
    re-evaluable; x is perturbed in place and restored.
    """
    x.requires_grad = True
    loss = f(x)
    loss.backward()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    flat = x.data.reshape(-1)
    fd = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x).item()
        flat[i] = orig - eps
        fm = f(x).item()
        flat[i] = orig
        fd[i] = (fp - fm) / (2.0 * eps)
    fd = fd.reshape(x.data.shape)
    denom = np.maximum(1.0, np.abs(fd))
    return float(np.max(np.abs(analytic - fd) / denom))
