"""Dense float64 tensors and a reverse-mode automatic differentiation engine.

The graph is define-by-run: every primitive application creates a `Node`
holding the computed value, references to its parents, and the primitive id
used to look up the backward rule in `BACKWARD_RULES`.  Values are plain
numpy float64 arrays wrapped in immutable `Tensor` objects; non-finite
values are rejected at node creation so NaN/Inf can never propagate
silently through a graph.

Forward math lives in module-level `_fwd_*` functions (dispatched through
`FORWARD_FNS`) so that gradient-free code paths can reuse exactly the same
arithmetic; see `icarec.nn.Net.forward_array`.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .errors import GraphError, NonFiniteError, ShapeMismatchError


class Tensor:
    """Immutable dense float64 array in row-major order."""

    __slots__ = ("data",)

    def __init__(self, values):
        arr = np.ascontiguousarray(values, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError("tensor contains NaN or Inf")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def flat(self):
        """Row-major flat view of the values."""
        return self.data.ravel()

    def __repr__(self):
        return f"Tensor(shape={self.shape})"

    @staticmethod
    def zeros(shape):
        return Tensor(np.zeros(shape, dtype=np.float64))

    @staticmethod
    def full(shape, value):
        return Tensor(np.full(shape, value, dtype=np.float64))


class Node:
    """Vertex of the autodiff graph: a Tensor value plus gradient bookkeeping."""

    __slots__ = ("value", "parents", "op", "attrs", "requires_grad", "grad",
                 "ctx", "name")

    def __init__(self, value, parents=(), op="leaf", attrs=None,
                 requires_grad=False, name=None):
        self.value = value
        self.parents = tuple(parents)
        self.op = op
        self.attrs = attrs or {}
        self.requires_grad = requires_grad or any(
            p.requires_grad for p in self.parents)
        self.grad = None
        self.ctx = {}
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape})"


def constant(values, name=None):
    """Leaf node that does not receive a gradient."""
    t = values if isinstance(values, Tensor) else Tensor(values)
    return Node(t, name=name)


def parameter(values, name=None):
    """Leaf node flagged as trainable."""
    t = values if isinstance(values, Tensor) else Tensor(values)
    return Node(t, requires_grad=True, name=name)


# ---------------------------------------------------------------------------
# forward math
# ---------------------------------------------------------------------------

def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _pad_same(x, k):
    p = (k - 1) // 2
    return np.pad(x, ((0, 0), (0, 0), (p, p)))


def _check_conv_shapes(xs, ws):
    if len(ws) != 3:
        raise ShapeMismatchError(f"conv1d: weight must be 3-d, got {ws}")
    if len(xs) != 3:
        raise ShapeMismatchError(f"conv1d: input must be 1-d or 3-d, got {xs}")
    if xs[1] != ws[1]:
        raise ShapeMismatchError(
            f"conv1d: input channels {xs[1]} != weight channels {ws[1]}")
    if ws[2] % 2 == 0:
        raise ShapeMismatchError(f"conv1d: kernel length {ws[2]} must be odd")
    if xs[2] < 1:
        raise ShapeMismatchError("conv1d: empty input")


def _fwd_matmul(a, b, attrs):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"matmul: invalid shapes {a.shape} @ {b.shape}")
    return _kernels.matmul(a, b)


def _broadcastable(sa, sb):
    try:
        np.broadcast_shapes(sa, sb)
        return True
    except ValueError:
        return False


def _fwd_add(a, b, attrs):
    if not _broadcastable(a.shape, b.shape):
        raise ShapeMismatchError(f"add: shapes {a.shape} and {b.shape}")
    return a + b


def _fwd_sub(a, b, attrs):
    if not _broadcastable(a.shape, b.shape):
        raise ShapeMismatchError(f"sub: shapes {a.shape} and {b.shape}")
    return a - b


def _fwd_mul(a, b, attrs):
    if not _broadcastable(a.shape, b.shape):
        raise ShapeMismatchError(f"mul: shapes {a.shape} and {b.shape}")
    return a * b


def _fwd_div(a, b, attrs):
    if not _broadcastable(a.shape, b.shape):
        raise ShapeMismatchError(f"div: shapes {a.shape} and {b.shape}")
    return a / b


def _fwd_scalar_mul(a, attrs):
    return a * attrs["c"]


def _fwd_sum(a, attrs):
    return np.array(a.sum())


def _fwd_mean(a, attrs):
    return np.array(a.mean())


def _fwd_abs(a, attrs):
    return np.abs(a)


def _fwd_square(a, attrs):
    return a * a


def _fwd_sqrt(a, attrs):
    return np.sqrt(a)


def _fwd_log(a, attrs):
    return np.log(a)


def _fwd_exp(a, attrs):
    return np.exp(a)


def _fwd_logsumexp(a, attrs):
    m = a.max(axis=-1)
    return m + np.log(np.exp(a - m[..., None]).sum(axis=-1))


def _fwd_concat(*arrays, attrs):
    axis = attrs["axis"]
    nd = arrays[0].ndim
    for arr in arrays[1:]:
        if arr.ndim != nd:
            raise ShapeMismatchError(
                f"concat: rank mismatch {[a.shape for a in arrays]}")
    try:
        return np.concatenate(arrays, axis=axis)
    except ValueError as exc:
        raise ShapeMismatchError(f"concat: {exc}") from exc


def _fwd_slice(a, attrs):
    return a[attrs["index"]]


def _fwd_tanh(a, attrs):
    return np.tanh(a)


def _fwd_relu(a, attrs):
    return np.maximum(a, 0.0)


def _fwd_leaky_relu(a, attrs):
    return np.where(a > 0.0, a, attrs["alpha"] * a)


def _fwd_softplus(a, attrs):
    return np.logaddexp(0.0, a)


def _fwd_sigmoid(a, attrs):
    return _sigmoid(a)


def _fwd_softmax(a, attrs):
    return _softmax(a)


def _fwd_conv1d(x, w, attrs):
    squeeze = x.ndim == 1
    if squeeze:
        if w.ndim != 1:
            raise ShapeMismatchError(
                f"conv1d: 1-d input needs 1-d kernel, got {w.shape}")
        x = x[None, None, :]
        w = w[None, None, :]
    _check_conv_shapes(x.shape, w.shape)
    xp = _pad_same(x, w.shape[2])
    out = _kernels.conv1d_fwd(xp, np.ascontiguousarray(w))
    return out[0, 0] if squeeze else out


def _fwd_batchnorm1d(x, gamma, beta, attrs):
    if x.ndim != 3:
        raise ShapeMismatchError(f"batchnorm1d: input must be 3-d, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeMismatchError(
            f"batchnorm1d: scale/shift must have shape ({c},)")
    eps = attrs.get("eps", 1e-5)
    if attrs.get("mode", "train") == "train":
        mean = x.mean(axis=(0, 2))
        var = x.var(axis=(0, 2))
    else:
        mean = attrs["running_mean"]
        var = attrs["running_var"]
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None]) * inv[None, :, None]
    return xhat * gamma[None, :, None] + beta[None, :, None]


def _fwd_frobenius_norm(a, attrs):
    return np.array(np.sqrt((a * a).sum()))


def _fwd_take_rows(table, attrs):
    idx = attrs["indices"]
    if table.ndim != 2:
        raise ShapeMismatchError(f"take_rows: table must be 2-d, got {table.shape}")
    if np.any(idx < 0) or np.any(idx >= table.shape[0]):
        raise ShapeMismatchError(
            f"take_rows: index out of range for table of {table.shape[0]} rows")
    return table[idx]


FORWARD_FNS = {
    "matmul": _fwd_matmul,
    "add": _fwd_add,
    "sub": _fwd_sub,
    "mul": _fwd_mul,
    "div": _fwd_div,
    "scalar_mul": _fwd_scalar_mul,
    "sum": _fwd_sum,
    "mean": _fwd_mean,
    "abs": _fwd_abs,
    "square": _fwd_square,
    "sqrt": _fwd_sqrt,
    "log": _fwd_log,
    "exp": _fwd_exp,
    "logsumexp": _fwd_logsumexp,
    "slice": _fwd_slice,
    "tanh": _fwd_tanh,
    "relu": _fwd_relu,
    "leaky_relu": _fwd_leaky_relu,
    "softplus": _fwd_softplus,
    "sigmoid": _fwd_sigmoid,
    "softmax": _fwd_softmax,
    "conv1d": _fwd_conv1d,
    "batchnorm1d": _fwd_batchnorm1d,
    "frobenius_norm": _fwd_frobenius_norm,
    "take_rows": _fwd_take_rows,
}


def forward_value(kind, arrays, attrs=None):
    """Apply a primitive's forward math to raw arrays (no graph)."""
    attrs = attrs or {}
    if kind == "concat":
        return _fwd_concat(*arrays, attrs=attrs)
    if kind not in FORWARD_FNS:
        raise KeyError(f"unknown primitive {kind!r}")
    return FORWARD_FNS[kind](*arrays, attrs)


# ---------------------------------------------------------------------------
# backward rules
# ---------------------------------------------------------------------------
# Each rule receives (node, g, needs) where g is the gradient at the node's
# output and needs[i] says whether parent i requires a gradient; it returns
# one array (or None) per parent.

def _unbroadcast(g, shape):
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _bwd_matmul(node, g, needs):
    a, b = (p.value.data for p in node.parents)
    ga = _kernels.matmul(g, np.ascontiguousarray(b.T)) if needs[0] else None
    gb = _kernels.matmul(np.ascontiguousarray(a.T), g) if needs[1] else None
    return [ga, gb]


def _bwd_add(node, g, needs):
    sa, sb = (p.value.shape for p in node.parents)
    return [_unbroadcast(g, sa) if needs[0] else None,
            _unbroadcast(g, sb) if needs[1] else None]


def _bwd_sub(node, g, needs):
    sa, sb = (p.value.shape for p in node.parents)
    return [_unbroadcast(g, sa) if needs[0] else None,
            _unbroadcast(-g, sb) if needs[1] else None]


def _bwd_mul(node, g, needs):
    a, b = (p.value.data for p in node.parents)
    return [_unbroadcast(g * b, a.shape) if needs[0] else None,
            _unbroadcast(g * a, b.shape) if needs[1] else None]


def _bwd_div(node, g, needs):
    a, b = (p.value.data for p in node.parents)
    ga = _unbroadcast(g / b, a.shape) if needs[0] else None
    gb = _unbroadcast(-g * a / (b * b), b.shape) if needs[1] else None
    return [ga, gb]


def _bwd_scalar_mul(node, g, needs):
    return [node.attrs["c"] * g]


def _bwd_sum(node, g, needs):
    a = node.parents[0].value.data
    return [np.full(a.shape, g.item())]


def _bwd_mean(node, g, needs):
    a = node.parents[0].value.data
    return [np.full(a.shape, g.item() / a.size)]


def _bwd_abs(node, g, needs):
    return [g * np.sign(node.parents[0].value.data)]


def _bwd_square(node, g, needs):
    return [2.0 * node.parents[0].value.data * g]


def _bwd_sqrt(node, g, needs):
    return [g / (2.0 * node.value.data)]


def _bwd_log(node, g, needs):
    return [g / node.parents[0].value.data]


def _bwd_exp(node, g, needs):
    return [g * node.value.data]


def _bwd_logsumexp(node, g, needs):
    a = node.parents[0].value.data
    return [g[..., None] * np.exp(a - node.value.data[..., None])]


def _bwd_concat(node, g, needs):
    axis = node.attrs["axis"]
    sizes = [p.value.shape[axis] for p in node.parents]
    splits = np.cumsum(sizes[:-1])
    pieces = np.split(g, splits, axis=axis)
    return [pc if need else None for pc, need in zip(pieces, needs)]


def _bwd_slice(node, g, needs):
    a = node.parents[0].value.data
    out = np.zeros(a.shape)
    out[node.attrs["index"]] = g
    return [out]


def _bwd_tanh(node, g, needs):
    y = node.value.data
    return [g * (1.0 - y * y)]


def _bwd_relu(node, g, needs):
    return [g * (node.parents[0].value.data > 0.0)]


def _bwd_leaky_relu(node, g, needs):
    a = node.parents[0].value.data
    alpha = node.attrs["alpha"]
    return [g * np.where(a > 0.0, 1.0, alpha)]


def _bwd_softplus(node, g, needs):
    return [g * _sigmoid(node.parents[0].value.data)]


def _bwd_sigmoid(node, g, needs):
    y = node.value.data
    return [g * y * (1.0 - y)]


def _bwd_softmax(node, g, needs):
    y = node.value.data
    return [y * (g - (g * y).sum(axis=-1, keepdims=True))]


def _bwd_conv1d(node, g, needs):
    x, w = (p.value.data for p in node.parents)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, None, :]
        w = w[None, None, :]
        g = g[None, None, :]
    kk = w.shape[2]
    gx = gw = None
    if needs[0]:
        wt = np.ascontiguousarray(w.transpose(1, 0, 2)[:, :, ::-1])
        gx = _kernels.conv1d_fwd(_pad_same(g, kk), wt)
    if needs[1]:
        gw = _kernels.conv1d_grad_w(np.ascontiguousarray(g), _pad_same(x, kk), kk)
    if squeeze:
        gx = None if gx is None else gx[0, 0]
        gw = None if gw is None else gw[0, 0]
    return [gx, gw]


def _bwd_batchnorm1d(node, g, needs):
    x, gamma, _ = (p.value.data for p in node.parents)
    eps = node.attrs.get("eps", 1e-5)
    if node.attrs.get("mode", "train") == "train":
        mean = x.mean(axis=(0, 2))
        var = x.var(axis=(0, 2))
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x - mean[None, :, None]) * inv[None, :, None]
        gx = None
        if needs[0]:
            gh = g * gamma[None, :, None]
            m = x.shape[0] * x.shape[2]
            gh_mean = gh.mean(axis=(0, 2))[None, :, None]
            ghx_mean = (gh * xhat).mean(axis=(0, 2))[None, :, None]
            gx = inv[None, :, None] * (gh - gh_mean - xhat * ghx_mean)
    else:
        mean = node.attrs["running_mean"]
        var = node.attrs["running_var"]
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x - mean[None, :, None]) * inv[None, :, None]
        gx = g * (gamma * inv)[None, :, None] if needs[0] else None
    ggamma = (g * xhat).sum(axis=(0, 2)) if needs[1] else None
    gbeta = g.sum(axis=(0, 2)) if needs[2] else None
    return [gx, ggamma, gbeta]


def _bwd_frobenius_norm(node, g, needs):
    a = node.parents[0].value.data
    return [g.item() * a / node.value.data.item()]


def _bwd_take_rows(node, g, needs):
    table = node.parents[0].value.data
    out = np.zeros(table.shape)
    np.add.at(out, node.attrs["indices"], g)
    return [out]


BACKWARD_RULES = {
    "matmul": _bwd_matmul,
    "add": _bwd_add,
    "sub": _bwd_sub,
    "mul": _bwd_mul,
    "div": _bwd_div,
    "scalar_mul": _bwd_scalar_mul,
    "sum": _bwd_sum,
    "mean": _bwd_mean,
    "abs": _bwd_abs,
    "square": _bwd_square,
    "sqrt": _bwd_sqrt,
    "log": _bwd_log,
    "exp": _bwd_exp,
    "logsumexp": _bwd_logsumexp,
    "concat": _bwd_concat,
    "slice": _bwd_slice,
    "tanh": _bwd_tanh,
    "relu": _bwd_relu,
    "leaky_relu": _bwd_leaky_relu,
    "softplus": _bwd_softplus,
    "sigmoid": _bwd_sigmoid,
    "softmax": _bwd_softmax,
    "conv1d": _bwd_conv1d,
    "batchnorm1d": _bwd_batchnorm1d,
    "frobenius_norm": _bwd_frobenius_norm,
    "take_rows": _bwd_take_rows,
}


def apply_primitive(kind, inputs, attrs=None):
    """Apply a named primitive to input Nodes, recording graph edges."""
    attrs = dict(attrs or {})
    arrays = [n.value.data for n in inputs]
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        out = forward_value(kind, arrays, attrs)
    out = np.asarray(out, dtype=np.float64)
    if not np.isfinite(out).all():
        raise NonFiniteError(
            f"{kind} produced a non-finite value "
            f"(input shapes {[a.shape for a in arrays]})")
    t = Tensor.__new__(Tensor)
    arr = np.ascontiguousarray(out)
    arr.flags.writeable = False
    object.__setattr__(t, "data", arr)
    return Node(t, parents=inputs, op=kind, attrs=attrs)


# sugar wrappers ------------------------------------------------------------

def matmul(a, b):
    return apply_primitive("matmul", [a, b])


def add(a, b):
    return apply_primitive("add", [a, b])


def sub(a, b):
    return apply_primitive("sub", [a, b])


def mul(a, b):
    return apply_primitive("mul", [a, b])


def div(a, b):
    return apply_primitive("div", [a, b])


def scalar_mul(a, c):
    return apply_primitive("scalar_mul", [a], {"c": float(c)})


def sum_(a):
    return apply_primitive("sum", [a])


def mean(a):
    return apply_primitive("mean", [a])


def abs_(a):
    return apply_primitive("abs", [a])


def square(a):
    return apply_primitive("square", [a])


def sqrt(a):
    return apply_primitive("sqrt", [a])


def log(a):
    return apply_primitive("log", [a])


def exp(a):
    return apply_primitive("exp", [a])


def logsumexp(a):
    return apply_primitive("logsumexp", [a])


def concat(nodes, axis):
    return apply_primitive("concat", list(nodes), {"axis": int(axis)})


def slice_(a, index):
    return apply_primitive("slice", [a], {"index": index})


def tanh(a):
    return apply_primitive("tanh", [a])


def relu(a):
    return apply_primitive("relu", [a])


def leaky_relu(a, alpha=0.2):
    return apply_primitive("leaky_relu", [a], {"alpha": float(alpha)})


def softplus(a):
    return apply_primitive("softplus", [a])


def sigmoid(a):
    return apply_primitive("sigmoid", [a])


def softmax(a):
    return apply_primitive("softmax", [a])


def conv1d(x, w):
    return apply_primitive("conv1d", [x, w])


def batchnorm1d(x, gamma, beta, mode="train", eps=1e-5,
                running_mean=None, running_var=None):
    attrs = {"mode": mode, "eps": eps}
    if mode == "eval":
        attrs["running_mean"] = running_mean
        attrs["running_var"] = running_var
    return apply_primitive("batchnorm1d", [x, gamma, beta], attrs)


def frobenius_norm(a):
    return apply_primitive("frobenius_norm", [a])


def take_rows(table, indices):
    idx = np.asarray(indices, dtype=np.int64)
    return apply_primitive("take_rows", [table], {"indices": idx})


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def _topo_order(root):
    """Post-order over parents, iteratively; detects cycles."""
    order = []
    state = {}  # id -> 1 in-stack, 2 done
    stack = [(root, iter(root.parents))]
    state[id(root)] = 1
    while stack:
        node, it = stack[-1]
        advanced = False
        for parent in it:
            st = state.get(id(parent))
            if st == 1:
                raise GraphError("cycle detected in autodiff graph")
            if st is None:
                state[id(parent)] = 1
                stack.append((parent, iter(parent.parents)))
                advanced = True
                break
        if not advanced:
            stack.pop()
            state[id(node)] = 2
            order.append(node)
    return order


def backward(root):
    """Gradients of a scalar root w.r.t. every requires-grad leaf.

    Returns a dict mapping leaf Node -> gradient Tensor and also stores each
    gradient on the leaf's ``grad`` attribute.  Gradients accumulate by
    summation over shared subgraphs.
    """
    if root.value.size != 1:
        raise GraphError(
            f"backward root must be scalar-shaped, got shape {root.value.shape}")
    order = _topo_order(root)
    grads = {id(root): np.ones(root.value.shape)}
    for node in reversed(order):
        if not node.parents:
            continue  # leaf: keep its accumulated gradient for collection
        g = grads.pop(id(node), None)
        if g is None or not node.requires_grad:
            continue
        rule = BACKWARD_RULES.get(node.op)
        if rule is None:
            raise GraphError(f"no backward rule for primitive {node.op!r}")
        needs = [p.requires_grad for p in node.parents]
        pgrads = rule(node, g, needs)
        for parent, pg in zip(node.parents, pgrads):
            if pg is None or not parent.requires_grad:
                continue
            pid = id(parent)
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg
    result = {}
    for node in order:
        if node.requires_grad and not node.parents:
            g = grads.get(id(node))
            if g is None:
                g = np.zeros(node.value.shape)
            if g.shape != node.value.shape:
                raise GraphError(
                    f"gradient shape {g.shape} != value shape {node.value.shape}")
            t = Tensor(g)
            node.grad = t
            result[node] = t
    return result


def grad_check(fn, params, h=1e-6):
    """Max relative error between analytic and central-difference gradients.

    ``fn`` maps a list of leaf Nodes to a scalar Node and must be
    deterministic; it is evaluated twice at the base point to verify this.
    The error for each coordinate is |analytic - numeric| divided by
    max(1e-12, |analytic| + |numeric|).
    """
    leaves = [parameter(t) for t in params]
    root = fn(leaves)
    root2 = fn([parameter(t) for t in params])
    if not np.array_equal(root.value.data, root2.value.data):
        raise GraphError("grad_check: fn is not deterministic")
    backward(root)
    worst = 0.0
    for i, leaf in enumerate(leaves):
        analytic = leaf.grad.data if leaf.grad is not None else np.zeros(leaf.shape)
        base = params[i].data
        flat_num = np.empty(base.size)
        for j in range(base.size):
            for sign, store in ((1.0, "hi"), (-1.0, "lo")):
                probe = base.copy().ravel()
                probe[j] += sign * h
                probes = list(params)
                probes[i] = Tensor(probe.reshape(base.shape))
                val = fn([constant(t) for t in probes]).value.data.item()
                if store == "hi":
                    hi = val
                else:
                    lo = val
            flat_num[j] = (hi - lo) / (2.0 * h)
        num = flat_num.reshape(base.shape)
        denom = np.maximum(1e-12, np.abs(analytic) + np.abs(num))
        err = float((np.abs(analytic - num) / denom).max()) if base.size else 0.0
        worst = max(worst, err)
    return worst
