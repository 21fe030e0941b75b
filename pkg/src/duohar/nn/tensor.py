"""Reverse-mode automatic differentiation over numpy arrays.

Tape-based: each op records its parents and a backward closure; backward()
walks the graph in reverse topological order.  Gradient work is skipped
wherever no parent requires gradients, so frozen subgraphs cost nothing on
the backward pass.  Convolutions delegate to the selected kernel backend.
"""

from __future__ import annotations

import numpy as np

from .. import kernels


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar")
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))
        running = {id(self): np.asarray(grad)}
        for node in reversed(topo):
            g = running.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                acc = running.get(id(parent))
                running[id(parent)] = pg if acc is None else acc + pg

    # operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(np.asarray(value))


def const(value, like) -> Tensor:
    """Constant tensor matching ``like``'s dtype (avoids silent float64 upcasts)."""
    dtype = like.dtype if isinstance(like, (Tensor, np.ndarray)) else like
    return Tensor(np.asarray(value, dtype=dtype))


def _node(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# elementwise ---------------------------------------------------------------


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    return _node(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    return _node(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)),
    )


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    return _node(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def div(a, b):
    a, b = _wrap(a), _wrap(b)
    return _node(
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        ),
    )


def neg(a):
    a = _wrap(a)
    return _node(-a.data, (a,), lambda g: (-g,))


def power(a, exponent: float):
    a = _wrap(a)
    out = a.data**exponent
    return _node(out, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),))


def exp(a):
    a = _wrap(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a):
    a = _wrap(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def relu(a):
    a = _wrap(a)
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: (g * mask,))


def clamp_min(a, floor: float):
    a = _wrap(a)
    mask = a.data >= floor
    return _node(np.maximum(a.data, floor), (a,), lambda g: (g * mask,))


# reductions / shape --------------------------------------------------------


def tsum(a, axis=None, keepdims: bool = False):
    a = _wrap(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape),)

    return _node(out, (a,), bwd)


def mean(a, axis=None, keepdims: bool = False):
    a = _wrap(a)
    count = a.data.size if axis is None else np.prod(
        [a.data.shape[i] for i in np.atleast_1d(axis)]
    )
    return tsum(a, axis=axis, keepdims=keepdims) * const(1.0 / float(count), a)


def max_pool(a, axes):
    """Global max over the given axes (squeezed); ties split the gradient."""
    a = _wrap(a)
    axes = tuple(axes)
    kept = a.data.max(axis=axes, keepdims=True)
    out = np.squeeze(kept, axis=axes)

    def bwd(g):
        mask = a.data == kept
        counts = mask.sum(axis=axes, keepdims=True)
        return ((mask / counts) * g.reshape(kept.shape),)

    return _node(out, (a,), bwd)


def reshape(a, shape):
    a = _wrap(a)
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.data.shape),))


def astype(a, dtype):
    a = _wrap(a)
    return _node(
        a.data.astype(dtype), (a,), lambda g: (g.astype(a.data.dtype, copy=False),)
    )


def transpose(a, axes=None):
    a = _wrap(a)
    inverse = None if axes is None else tuple(np.argsort(axes))
    return _node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def concat(tensors, axis: int = -1):
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes[:-1])

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bwd)


# linear algebra / convolutions ---------------------------------------------


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)

    def bwd(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _node(a.data @ b.data, (a, b), bwd)


def conv1d(x, w, b):
    x, w, b = _wrap(x), _wrap(w), _wrap(b)
    out = kernels.conv1d_forward(x.data, w.data, b.data)

    def bwd(g):
        g = np.ascontiguousarray(g, dtype=x.data.dtype)
        gx, gw = kernels.conv1d_backward(x.data, w.data, g, x.requires_grad, w.requires_grad)
        gb = g.sum(axis=(0, 1)) if b.requires_grad else None
        return gx, gw, gb

    return _node(out, (x, w, b), bwd)


def conv2d(x, w, b):
    x, w, b = _wrap(x), _wrap(w), _wrap(b)
    out = kernels.conv2d_forward(x.data, w.data, b.data)

    def bwd(g):
        g = np.ascontiguousarray(g, dtype=x.data.dtype)
        gx, gw = kernels.conv2d_backward(x.data, w.data, g, x.requires_grad, w.requires_grad)
        gb = g.sum(axis=(0, 1, 2)) if b.requires_grad else None
        return gx, gw, gb

    return _node(out, (x, w, b), bwd)


# composite helpers ----------------------------------------------------------


def softmax(a, axis: int = -1):
    """Shift-stabilized softmax; the shift is detached (gradient-neutral)."""
    a = _wrap(a)
    shift = Tensor(a.data.max(axis=axis, keepdims=True))
    e = exp(sub(a, shift))
    return div(e, tsum(e, axis=axis, keepdims=True))
