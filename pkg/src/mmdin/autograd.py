"""Reverse-mode automatic differentiation over dense float64 arrays.

Implements exactly the operations the recommendation models need: dense
matmul, elementwise arithmetic with broadcasting, embedding gather, outer
products, PReLU and sigmoid activations, weighted history pooling and
binary cross-entropy.  Graphs are built eagerly as ops run; calling
``backward()`` on a scalar walks the graph once in reverse topological
order and accumulates into each reachable tensor's ``grad``.

Gradient zeroing is the caller's job (``Tensor.zero_grad``); repeated
``backward()`` calls without zeroing add their contributions.
"""

from __future__ import annotations

import numpy as np

PROB_EPS = 1e-7  # clamp bound for probabilities inside bce_loss


class DimensionError(ValueError):
    """Operand shapes incompatible with the requested operation."""


class GraphError(RuntimeError):
    """Autodiff contract violation, e.g. backward on a non-scalar."""


class Tensor:
    """Dense float64 value node, optionally part of the autodiff graph.

    ``data`` is never mutated by operations; only ``backward`` touches
    ``grad``, and only an optimizer is expected to write ``data`` in
    place.  ``grad`` is lazily allocated and always matches ``data`` in
    shape once present.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    # -- backward pass ---------------------------------------------------
    def backward(self):
        """Accumulate d(self)/d(node) into ``grad`` for every reachable node.

        ``self`` must hold a single element.  Each call contributes one
        full pass; grads from earlier calls are kept, not overwritten.
        """
        if self.data.size != 1:
            raise GraphError(
                f"backward requires a scalar, got shape {self.data.shape}"
            )
        order = _topo_order(self)
        pending = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            if node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg


def _topo_order(root):
    """Iterative post-order DFS; avoids recursion limits on deep graphs."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _from_op(data, parents, vjp):
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` to undo numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise arithmetic ----------------------------------------------

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _from_op(data, (a, b), vjp)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _from_op(data, (a, b), vjp)


def neg(a):
    a = _as_tensor(a)
    return _from_op(-a.data, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _from_op(data, (a, b), vjp)


# -- linear algebra --------------------------------------------------------

def matmul(a, b):
    """Strict 2-D matrix product (m,k) x (k,n) -> (m,n)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul expects (m,k) x (k,n), got {a.data.shape} and {b.data.shape}"
        )

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return _from_op(a.data @ b.data, (a, b), vjp)


def outer_product(u, v):
    """Outer product of two vectors: out[i, j] = u[i] * v[j]."""
    u, v = _as_tensor(u), _as_tensor(v)
    if u.data.ndim != 1 or v.data.ndim != 1:
        raise DimensionError(
            f"outer_product expects two vectors, got {u.data.shape} and {v.data.shape}"
        )

    def vjp(g):
        return g @ v.data, g.T @ u.data

    return _from_op(np.outer(u.data, v.data), (u, v), vjp)


def batched_outer(a, b):
    """Row-wise outer products: (M,d), (M,e) -> (M,d,e)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[0] != b.data.shape[0]:
        raise DimensionError(
            f"batched_outer expects (M,d) and (M,e), got {a.data.shape} and {b.data.shape}"
        )
    data = a.data[:, :, None] * b.data[:, None, :]

    def vjp(g):
        return (g * b.data[:, None, :]).sum(axis=2), (g * a.data[:, :, None]).sum(axis=1)

    return _from_op(data, (a, b), vjp)


# -- shape manipulation ----------------------------------------------------

def reshape(x, shape):
    x = _as_tensor(x)
    data = x.data.reshape(shape)

    def vjp(g):
        return (g.reshape(x.data.shape),)

    return _from_op(data, (x,), vjp)


def concat(tensors, axis=0):
    """Concatenate tensors along ``axis``; gradients split back per input."""
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("concat needs at least one tensor")
    data = np.concatenate([t.data for t in ts], axis=axis)
    splits = np.cumsum([t.data.shape[axis] for t in ts])[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _from_op(data, tuple(ts), vjp)


def tile_to_rows(v, k):
    """Repeat a vector (d,) into k rows -> (k, d)."""
    v = _as_tensor(v)
    if v.data.ndim != 1:
        raise DimensionError(f"tile_to_rows expects a vector, got {v.data.shape}")
    data = np.broadcast_to(v.data, (k, v.data.shape[0])).copy()

    def vjp(g):
        return (g.sum(axis=0),)

    return _from_op(data, (v,), vjp)


def repeat_middle(x, k):
    """Repeat each row of (B,d) k times -> (B,k,d)."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise DimensionError(f"repeat_middle expects (B,d), got {x.data.shape}")
    b, d = x.data.shape
    data = np.broadcast_to(x.data[:, None, :], (b, k, d)).copy()

    def vjp(g):
        return (g.sum(axis=1),)

    return _from_op(data, (x,), vjp)


# -- reductions -------------------------------------------------------------

def tensor_sum(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.ones_like(x.data) * g,)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, x.data.shape).copy(),)

    return _from_op(data, (x,), vjp)


def tensor_mean(x, axis=None, keepdims=False):
    x = _as_tensor(x)
    data = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size // max(data.size, 1)

    def vjp(g):
        scale = 1.0 / count
        if axis is None:
            return (np.ones_like(x.data) * (g * scale),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, x.data.shape) * scale,)

    return _from_op(data, (x,), vjp)


# -- activations -------------------------------------------------------------

def prelu(x, alpha):
    """Parametric ReLU: x where x > 0, else alpha * x (alpha is size-1)."""
    x, alpha = _as_tensor(x), _as_tensor(alpha)
    if alpha.data.size != 1:
        raise DimensionError(f"prelu alpha must hold one value, got shape {alpha.data.shape}")
    a = float(alpha.data.reshape(-1)[0])
    pos = x.data > 0
    data = np.where(pos, x.data, a * x.data)

    def vjp(g):
        gx = np.where(pos, g, a * g)
        ga = np.sum(g * np.where(pos, 0.0, x.data))
        return gx, np.asarray(ga).reshape(alpha.data.shape)

    return _from_op(data, (x, alpha), vjp)


def sigmoid(x):
    """Numerically stable logistic function; no overflow for any float64."""
    x = _as_tensor(x)
    z = x.data
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _from_op(out, (x,), vjp)


# -- model-specific ops -------------------------------------------------------

def embedding_lookup(table, indices):
    """Gather rows of a (vocab, dim) table; gradients scatter-add back.

    ``indices`` may be a python int or any integer array; the output has
    the indices' shape plus the embedding dimension.  Repeated indices
    accumulate their gradients on the shared row.
    """
    table = _as_tensor(table)
    if table.data.ndim != 2:
        raise DimensionError(f"embedding table must be 2-D, got {table.data.shape}")
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise DimensionError(f"embedding indices must be integers, got dtype {idx.dtype}")
    vocab = table.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= vocab):
        raise IndexError(
            f"embedding index out of range [0, {vocab}): min {idx.min()}, max {idx.max()}"
        )
    data = table.data[idx]

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _from_op(data, (table,), vjp)


def weighted_sum_pool(vectors, weights):
    """Weighted sum of history vectors.

    Accepts (K,d) with (K,) weights, or batched (B,K,d) with (B,K).
    K must be at least 1; callers pad short histories beforehand.
    """
    v, w = _as_tensor(vectors), _as_tensor(weights)
    if v.data.ndim == 2 and w.data.ndim == 1:
        if v.data.shape[0] != w.data.shape[0]:
            raise DimensionError(
                f"weighted_sum_pool got {v.data.shape[0]} vectors but {w.data.shape[0]} weights"
            )
        if v.data.shape[0] == 0:
            raise DimensionError("weighted_sum_pool needs K >= 1 (pad empty histories)")
        data = w.data @ v.data

        def vjp(g):
            return np.outer(w.data, g), v.data @ g

        return _from_op(data, (v, w), vjp)
    if v.data.ndim == 3 and w.data.ndim == 2:
        if v.data.shape[:2] != w.data.shape:
            raise DimensionError(
                f"weighted_sum_pool got vectors {v.data.shape} but weights {w.data.shape}"
            )
        if v.data.shape[1] == 0:
            raise DimensionError("weighted_sum_pool needs K >= 1 (pad empty histories)")
        data = np.einsum("bk,bkd->bd", w.data, v.data)

        def vjp(g):
            return w.data[:, :, None] * g[:, None, :], np.einsum("bd,bkd->bk", g, v.data)

        return _from_op(data, (v, w), vjp)
    raise DimensionError(
        f"weighted_sum_pool expects (K,d)+(K,) or (B,K,d)+(B,K), got {v.data.shape} and {w.data.shape}"
    )


def bce_loss(pred, label):
    """Mean binary cross-entropy of probabilities against 0/1 labels.

    Predictions are clamped to [PROB_EPS, 1 - PROB_EPS] before the logs;
    entries at or beyond the clamp bounds get zero gradient, matching
    the flat clipped forward.
    """
    pred = _as_tensor(pred)
    y = label.data if isinstance(label, Tensor) else np.asarray(label, dtype=np.float64)
    if y.shape != pred.data.shape:
        raise DimensionError(f"labels shape {y.shape} != predictions shape {pred.data.shape}")
    if y.size == 0:
        raise DimensionError("bce_loss needs at least one element")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("bce_loss labels must be exactly 0 or 1")
    p = np.clip(pred.data, PROB_EPS, 1.0 - PROB_EPS)
    data = np.asarray(np.mean(-(y * np.log(p) + (1.0 - y) * np.log1p(-p))))
    inside = (pred.data > PROB_EPS) & (pred.data < 1.0 - PROB_EPS)
    n = p.size

    def vjp(g):
        gp = np.where(inside, (p - y) / (p * (1.0 - p) * n), 0.0) * g
        return (gp,)

    return _from_op(data, (pred,), vjp)
