"""Dense float64 tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array; every op records its parents and a
backward closure on the result, so `backward(loss)` can replay the tape
in reverse topological order. The networks here are small, so clarity
and 64-bit precision win over speed; the only fused op is the LSTM,
whose forward/backward kernels live in `streamtemp.kernels`.
"""

import numpy as np

from .. import kernels
from ..errors import NumericError


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, op={self._op}{tag})"

    def item(self):
        return float(self.data)

    # operator sugar; everything routes through the module-level ops
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, shape):
        return reshape(self, shape)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out._op = op
    return out


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to `shape`."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def back(g):
        return (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), back, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def back(g):
        return (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape))

    return _make(out_data, (a, b), back, "sub")


def mul(a, b):
    """Element-wise product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def back(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), back, "mul")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    out_data = a.data @ b.data

    def back(g):
        return (g @ b.data.T, a.data.T @ g)

    return _make(out_data, (a, b), back, "matmul")


def mv(a, v):
    """Matrix-vector product: [n,m] @ [m] -> [n]."""
    a, v = as_tensor(a), as_tensor(v)
    out_data = a.data @ v.data

    def back(g):
        return (np.outer(g, v.data), a.data.T @ g)

    return _make(out_data, (a, v), back, "mv")


def dot(u, v):
    """Inner product of two vectors -> scalar."""
    u, v = as_tensor(u), as_tensor(v)
    out_data = np.dot(u.data, v.data)

    def back(g):
        return (g * v.data, g * u.data)

    return _make(out_data, (u, v), back, "dot")


def transpose(a):
    a = as_tensor(a)
    if a.ndim != 2:
        raise ValueError("transpose expects a 2-D tensor")

    def back(g):
        return (g.T,)

    return _make(a.data.T, (a,), back, "transpose")


def reshape(a, shape):
    a = as_tensor(a)
    old = a.data.shape

    def back(g):
        return (g.reshape(old),)

    return _make(a.data.reshape(shape), (a,), back, "reshape")


def broadcast_to(a, shape):
    a = as_tensor(a)

    def back(g):
        return (_unbroadcast(g, a.data.shape),)

    return _make(np.broadcast_to(a.data, shape).copy(), (a,), back, "broadcast")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)

    def back(g):
        return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))

    return _make(out_data, tuple(tensors), back, "concat")


def getitem(a, idx):
    a = as_tensor(a)
    out_data = a.data[idx]
    if np.isscalar(out_data):
        out_data = np.asarray(out_data)

    def back(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _make(out_data.copy(), (a,), back, "slice")


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return _make(out_data, (a,), back, "sum")


def tmean(a):
    a = as_tensor(a)
    n = a.data.size

    def back(g):
        return (np.full(a.data.shape, float(g) / n),)

    return _make(a.data.mean(), (a,), back, "mean")


def sqrt(a):
    a = as_tensor(a)
    out_data = np.sqrt(a.data)

    def back(g):
        return (g * 0.5 / np.sqrt(a.data),)

    return _make(out_data, (a,), back, "sqrt")


def exp(a):
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def back(g):
        return (g * out_data,)

    return _make(out_data, (a,), back, "exp")


def sigmoid(a):
    a = as_tensor(a)
    out_data = 1.0 / (1.0 + np.exp(-np.clip(a.data, -500.0, 500.0)))

    def back(g):
        return (g * out_data * (1.0 - out_data),)

    return _make(out_data, (a,), back, "sigmoid")


def tanh(a):
    a = as_tensor(a)
    out_data = np.tanh(a.data)

    def back(g):
        return (g * (1.0 - out_data * out_data),)

    return _make(out_data, (a,), back, "tanh")


def relu(a):
    a = as_tensor(a)
    out_data = np.maximum(a.data, 0.0)

    def back(g):
        return (g * (a.data > 0.0),)

    return _make(out_data, (a,), back, "relu")


def softmax_row(a, support_mask=None):
    """Stabilized softmax along the last axis, optionally masked.

    Entries where support_mask is False come out exactly 0; the rest of
    each row sums to 1. Every row must have at least one supported entry.
    """
    a = as_tensor(a)
    x = a.data
    if support_mask is None:
        mask = np.ones(x.shape, dtype=bool)
    else:
        mask = np.broadcast_to(np.asarray(support_mask, dtype=bool), x.shape)
    if not mask.any(axis=-1).all():
        raise ValueError("softmax_row: empty support row")
    shifted = np.where(mask, x, -np.inf)
    m = shifted.max(axis=-1, keepdims=True)
    e = np.exp(np.where(mask, x - m, -np.inf))
    e = np.where(mask, e, 0.0)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        inner = (g * out_data).sum(axis=-1, keepdims=True)
        return (out_data * (g - inner),)

    return _make(out_data, (a,), back, "softmax_row")


def graph_mix(adj, h3):
    """Aggregate per-node sequences with a weight matrix.

    adj: [n, n], h3: [n, T, H]; out[i, t, :] = sum_j adj[i, j] h3[j, t, :].
    """
    adj, h3 = as_tensor(adj), as_tensor(h3)
    out_data = np.tensordot(adj.data, h3.data, axes=(1, 0))

    def back(g):
        da = np.tensordot(g, h3.data, axes=([1, 2], [1, 2]))
        dh = np.tensordot(adj.data.T, g, axes=(1, 0))
        return (da, dh)

    return _make(out_data, (adj, h3), back, "graph_mix")


def lstm_seq(x, wx, wh, b):
    """Fused LSTM over node-major sequences: [N,T,F] -> [N,T,H].

    Forward/backward run on the active kernel backend; see
    `streamtemp.kernels`.
    """
    x, wx, wh, b = as_tensor(x), as_tensor(wx), as_tensor(wh), as_tensor(b)
    xt = np.ascontiguousarray(np.swapaxes(x.data, 0, 1))
    h, gi, gf, gg, go, cs, tc = kernels.lstm_forward(xt, wx.data, wh.data, b.data)
    out_data = np.ascontiguousarray(np.swapaxes(h, 0, 1))

    def back(g):
        dh_out = np.ascontiguousarray(np.swapaxes(g, 0, 1))
        dx, dwx, dwh, db = kernels.lstm_backward(
            xt, wx.data, wh.data, h, gi, gf, gg, go, cs, tc, dh_out)
        return (np.swapaxes(dx, 0, 1), dwx, dwh, db)

    return _make(out_data, (x, wx, wh, b), back, "lstm_seq")


def _toposort(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss, params=None):
    """Reverse-mode sweep from a scalar loss.

    Returns a gradient map {tensor name: ndarray} for every *named*
    requires_grad leaf reached by the computation. When `params` (an
    iterable of named Tensors) is given, unreached entries are filled
    with zeros so the map is keyed identically to the parameter set.
    Leaf tensors additionally get their `.grad` attribute set.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    if not np.isfinite(loss.data):
        raise NumericError(loss._op, "non-finite loss value")

    grads = {id(loss): np.ones_like(loss.data)}
    gmap = {}
    if not loss.requires_grad:
        if params is not None:
            gmap = {p.name: np.zeros_like(p.data) for p in params}
        return gmap

    for node in reversed(_toposort(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is not None:
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if not parent.requires_grad or pg is None:
                    continue
                if not np.all(np.isfinite(pg)):
                    raise NumericError(node._op, "NaN/Inf gradient")
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg.reshape(parent.data.shape)
        else:
            node.grad = g.copy()
            if node.name is not None:
                gmap[node.name] = g.copy()

    if params is not None:
        for p in params:
            if p.name not in gmap:
                gmap[p.name] = np.zeros_like(p.data)
    return gmap
