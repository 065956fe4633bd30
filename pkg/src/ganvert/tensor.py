"""Dense float64 tensors with an opt-in reverse-mode tape.

Tensors are plain ``numpy.ndarray`` objects of dtype float64.  Calling a
primitive on plain arrays just computes the result.  Calling it with at
least one :class:`Node` records the op on that node's :class:`Graph` and
returns a new node, so the same model code serves inference and tracing::

    g = Graph()
    x = g.leaf(np.array([1.0, 2.0, 3.0]))
    y = reduce_sum(elementwise_mul(x, x))
    (dx,) = backward(g, 1.0, [x.id])      # -> [2, 4, 6]
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Incompatible operand shapes for a primitive."""

    def __init__(self, op, message):
        super().__init__(f"{op}: {message}")
        self.op = op


class GraphError(ValueError):
    pass


def as_tensor(value):
    arr = np.asarray(value, dtype=np.float64)
    return arr


@dataclass(eq=False)
class Node:
    graph: "Graph"
    id: int
    kind: str
    inputs: tuple
    attrs: dict
    value: np.ndarray
    requires_grad: bool

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(id={self.id}, kind={self.kind!r}, shape={self.shape})"


@dataclass(eq=False)
class Graph:
    """Ordered tape of primitive applications.

    Nodes are appended in execution order, so the list is a topological
    order.  A graph belongs to one thread.
    """

    nodes: list = field(default_factory=list)

    def leaf(self, value, requires_grad=True):
        arr = np.array(value, dtype=np.float64)
        arr.setflags(write=False)
        node = Node(self, len(self.nodes), "leaf", (), {}, arr, requires_grad)
        self.nodes.append(node)
        return node

    def constant(self, value):
        return self.leaf(value, requires_grad=False)

    def __len__(self):
        return len(self.nodes)

    def __getitem__(self, node_id):
        try:
            if node_id < 0:
                raise IndexError
            return self.nodes[node_id]
        except (IndexError, TypeError):
            raise GraphError(f"unknown node id {node_id!r}") from None

    @property
    def output(self):
        if not self.nodes:
            raise GraphError("empty graph")
        return self.nodes[-1]


# --------------------------------------------------------------------------
# primitive table: kind -> (forward(values, attrs), vjp(g, values, out, attrs, needs))

def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, f"cannot broadcast {a.shape} with {b.shape}") from None


def _matmul_fwd(vals, attrs):
    a, b = vals
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError("matmul", f"scalar operand, shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError("matmul", f"inner dims differ: {a.shape} @ {b.shape}")
    try:
        return np.matmul(a, b)
    except ValueError:
        raise ShapeError("matmul", f"batch dims differ: {a.shape} @ {b.shape}") from None


def _matmul_vjp(g, vals, out, attrs, needs):
    a, b = vals
    a2 = a[None, :] if a.ndim == 1 else a
    b2 = b[:, None] if b.ndim == 1 else b
    g2 = g
    if a.ndim == 1:
        g2 = np.expand_dims(g2, -2)
    if b.ndim == 1:
        g2 = np.expand_dims(g2, -1)
    ga = gb = None
    if needs[0]:
        ga = np.matmul(g2, np.swapaxes(b2, -1, -2))
        if a.ndim == 1:
            ga = ga[..., 0, :]
        ga = _unbroadcast(ga, a.shape)
    if needs[1]:
        gb = np.matmul(np.swapaxes(a2, -1, -2), g2)
        if b.ndim == 1:
            gb = gb[..., 0]
        gb = _unbroadcast(gb, b.shape)
    return ga, gb


def _conv_fwd(vals, attrs):
    x, w = vals
    if x.ndim not in (3, 4) or w.ndim != 4:
        raise ShapeError("conv2d", f"expected x (C,H,W) or (B,C,H,W) and w (O,C,k,k), got {x.shape}, {w.shape}")
    if x.shape[-3] != w.shape[1]:
        raise ShapeError("conv2d", f"input channels {x.shape[-3]} != kernel channels {w.shape[1]}")
    if w.shape[2] != w.shape[3] or w.shape[2] % 2 == 0:
        raise ShapeError("conv2d", f"kernel must be square and odd, got {w.shape[2:]}")
    return kernels.conv2d(x, w)


def _conv_vjp(g, vals, out, attrs, needs):
    x, w = vals
    gx = kernels.conv2d_grad_input(g, w) if needs[0] else None
    gw = kernels.conv2d_grad_weight(x, g, w.shape[2]) if needs[1] else None
    return gx, gw


def _spatial_check(op, x):
    if x.ndim < 2:
        raise ShapeError(op, f"needs at least 2 dims, got {x.shape}")


def _upsample_fwd(vals, attrs):
    (x,) = vals
    _spatial_check("nearest_upsample_2x", x)
    return np.repeat(np.repeat(x, 2, axis=-2), 2, axis=-1)


def _upsample_vjp(g, vals, out, attrs, needs):
    s = g.shape
    return (g.reshape(s[:-2] + (s[-2] // 2, 2, s[-1] // 2, 2)).sum(axis=(-3, -1)),)


def _pool_windows(x):
    s = x.shape
    return (x.reshape(s[:-2] + (s[-2] // 2, 2, s[-1] // 2, 2))
            .swapaxes(-3, -2).reshape(s[:-2] + (s[-2] // 2, s[-1] // 2, 4)))


def _maxpool_fwd(vals, attrs):
    (x,) = vals
    _spatial_check("maxpool_2x", x)
    if x.shape[-1] % 2 or x.shape[-2] % 2:
        raise ShapeError("maxpool_2x", f"spatial dims must be even, got {x.shape[-2:]}")
    return _pool_windows(x).max(axis=-1)


def _maxpool_vjp(g, vals, out, attrs, needs):
    (x,) = vals
    win = _pool_windows(x)
    # first maximum in each window takes the gradient
    idx = win.argmax(axis=-1)
    mask = np.zeros_like(win)
    np.put_along_axis(mask, idx[..., None], 1.0, axis=-1)
    gw = mask * g[..., None]
    s = x.shape
    gw = gw.reshape(s[:-2] + (s[-2] // 2, s[-1] // 2, 2, 2)).swapaxes(-3, -2)
    return (gw.reshape(s),)


def _add_fwd(vals, attrs):
    a, b = vals
    _check_broadcast("add", a, b)
    return a + b


def _add_vjp(g, vals, out, attrs, needs):
    a, b = vals
    return (_unbroadcast(g, a.shape) if needs[0] else None,
            _unbroadcast(g, b.shape) if needs[1] else None)


def _scale_fwd(vals, attrs):
    return vals[0] * attrs["c"]


def _scale_vjp(g, vals, out, attrs, needs):
    return (g * attrs["c"],)


def _mul_fwd(vals, attrs):
    a, b = vals
    _check_broadcast("elementwise_mul", a, b)
    return a * b


def _mul_vjp(g, vals, out, attrs, needs):
    a, b = vals
    return (_unbroadcast(g * b, a.shape) if needs[0] else None,
            _unbroadcast(g * a, b.shape) if needs[1] else None)


def _relu_fwd(vals, attrs):
    return np.maximum(vals[0], 0.0)


def _relu_vjp(g, vals, out, attrs, needs):
    # subgradient at exactly 0 is 0
    return (g * (vals[0] > 0.0),)


def _tanh_fwd(vals, attrs):
    return np.tanh(vals[0])


def _tanh_vjp(g, vals, out, attrs, needs):
    return (g * (1.0 - out * out),)


def _softmax_fwd(vals, attrs):
    (x,) = vals
    if x.ndim < 1:
        raise ShapeError("softmax_rows", "needs at least 1 dim")
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _softmax_vjp(g, vals, out, attrs, needs):
    return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)


def _affine_fwd(vals, attrs):
    x, scale, shift = vals
    if x.ndim < 3 or scale.shape != (x.shape[-3],) or shift.shape != (x.shape[-3],):
        raise ShapeError("affine_channel",
                         f"x {x.shape} needs (C,H,W) layout with scale/shift (C,), got {scale.shape}, {shift.shape}")
    return x * scale[:, None, None] + shift[:, None, None]


def _affine_vjp(g, vals, out, attrs, needs):
    x, scale, shift = vals
    axes = tuple(i for i in range(g.ndim) if i != g.ndim - 3)
    gx = g * scale[:, None, None] if needs[0] else None
    gs = (g * x).sum(axis=axes) if needs[1] else None
    gb = g.sum(axis=axes) if needs[2] else None
    return gx, gs, gb


def _reshape_fwd(vals, attrs):
    (x,) = vals
    try:
        return x.reshape(attrs["shape"])
    except ValueError:
        raise ShapeError("reshape", f"cannot reshape {x.shape} to {attrs['shape']}") from None


def _reshape_vjp(g, vals, out, attrs, needs):
    return (g.reshape(vals[0].shape),)


def _transpose_fwd(vals, attrs):
    (x,) = vals
    if x.ndim < 2:
        raise ShapeError("transpose", f"needs at least 2 dims, got {x.shape}")
    return np.swapaxes(x, -1, -2)


def _transpose_vjp(g, vals, out, attrs, needs):
    return (np.swapaxes(g, -1, -2),)


def _sum_fwd(vals, attrs):
    axis = attrs.get("axis")
    return np.asarray(vals[0].sum(axis=axis), dtype=np.float64)


def _sum_vjp(g, vals, out, attrs, needs):
    (x,) = vals
    axis = attrs.get("axis")
    if axis is not None:
        axes = (axis,) if isinstance(axis, int) else axis
        g = np.expand_dims(g, tuple(a % x.ndim for a in axes))
    return (np.broadcast_to(g, x.shape).copy(),)


PRIMITIVES = {
    "matmul": (_matmul_fwd, _matmul_vjp),
    "conv2d": (_conv_fwd, _conv_vjp),
    "nearest_upsample_2x": (_upsample_fwd, _upsample_vjp),
    "maxpool_2x": (_maxpool_fwd, _maxpool_vjp),
    "add": (_add_fwd, _add_vjp),
    "scale": (_scale_fwd, _scale_vjp),
    "elementwise_mul": (_mul_fwd, _mul_vjp),
    "relu": (_relu_fwd, _relu_vjp),
    "tanh": (_tanh_fwd, _tanh_vjp),
    "softmax_rows": (_softmax_fwd, _softmax_vjp),
    "affine_channel": (_affine_fwd, _affine_vjp),
    "reshape": (_reshape_fwd, _reshape_vjp),
    "transpose": (_transpose_fwd, _transpose_vjp),
    "reduce_sum": (_sum_fwd, _sum_vjp),
}

ARITY = {"matmul": 2, "conv2d": 2, "add": 2, "elementwise_mul": 2, "affine_channel": 3}


def primitive_forward(kind, *inputs, **attrs):
    """Apply primitive ``kind``; records a node if any input is a Node."""
    try:
        fwd, _ = PRIMITIVES[kind]
    except KeyError:
        raise GraphError(f"unknown primitive {kind!r}") from None
    if len(inputs) != ARITY.get(kind, 1):
        raise ShapeError(kind, f"expected {ARITY.get(kind, 1)} inputs, got {len(inputs)}")
    graph = None
    for x in inputs:
        if isinstance(x, Node):
            if graph is not None and x.graph is not graph:
                raise GraphError(f"{kind}: inputs come from different graphs")
            graph = x.graph
    if graph is None:
        return fwd([as_tensor(x) for x in inputs], attrs)
    nodes = [x if isinstance(x, Node) else graph.constant(x) for x in inputs]
    out = fwd([n.value for n in nodes], attrs)
    out = np.asarray(out, dtype=np.float64)
    out.setflags(write=False)
    node = Node(graph, len(graph.nodes), kind, tuple(n.id for n in nodes), dict(attrs),
                out, any(n.requires_grad for n in nodes))
    graph.nodes.append(node)
    return node


def matmul(a, b):
    return primitive_forward("matmul", a, b)


def conv2d(x, w):
    return primitive_forward("conv2d", x, w)


def nearest_upsample_2x(x):
    return primitive_forward("nearest_upsample_2x", x)


def maxpool_2x(x):
    return primitive_forward("maxpool_2x", x)


def add(a, b):
    return primitive_forward("add", a, b)


def scale(x, c):
    return primitive_forward("scale", x, c=float(c))


def elementwise_mul(a, b):
    return primitive_forward("elementwise_mul", a, b)


def relu(x):
    return primitive_forward("relu", x)


def tanh(x):
    return primitive_forward("tanh", x)


def softmax_rows(x):
    return primitive_forward("softmax_rows", x)


def affine_channel(x, scale_, shift):
    return primitive_forward("affine_channel", x, scale_, shift)


def reshape(x, shape):
    return primitive_forward("reshape", x, shape=tuple(shape))


def transpose(x):
    return primitive_forward("transpose", x)


def reduce_sum(x, axis=None):
    if isinstance(axis, list):
        axis = tuple(axis)
    return primitive_forward("reduce_sum", x, axis=axis)


def sub(a, b):
    return add(a, scale(b, -1.0))


def value(x):
    """Underlying array of a node or array."""
    return x.value if isinstance(x, Node) else as_tensor(x)


# --------------------------------------------------------------------------

def backward(graph, output_grad, wrt, output=None):
    """Vector-Jacobian products of ``output`` (default: last node) for ``wrt``.

    Returns one array per requested node id, zero where there is no path.
    The graph is not modified.
    """
    out_node = graph.output if output is None else graph[getattr(output, "id", output)]
    wrt_ids = [getattr(w, "id", w) for w in wrt]
    for w in wrt_ids:
        graph[w]
    g0 = np.asarray(output_grad, dtype=np.float64)
    if g0.shape != out_node.shape:
        if g0.ndim == 0:
            g0 = np.broadcast_to(g0, out_node.shape)
        else:
            raise ShapeError("backward", f"output_grad shape {g0.shape} != output shape {out_node.shape}")
    grads = {out_node.id: np.array(g0)}
    wanted = set(wrt_ids)
    for node in reversed(graph.nodes[: out_node.id + 1]):
        g = grads.get(node.id)
        if g is None or node.kind == "leaf":
            continue
        if node.id not in wanted:
            del grads[node.id]
        inputs = [graph.nodes[i] for i in node.inputs]
        needs = [n.requires_grad for n in inputs]
        if not any(needs):
            continue
        _, vjp = PRIMITIVES[node.kind]
        in_grads = vjp(g, [n.value for n in inputs], node.value, node.attrs, needs)
        for n, ig in zip(inputs, in_grads):
            if ig is None or not n.requires_grad:
                continue
            if n.id in grads:
                grads[n.id] = grads[n.id] + ig
            else:
                grads[n.id] = np.array(ig, dtype=np.float64)
    return [grads.get(w, np.zeros(graph[w].shape)) for w in wrt_ids]


def replay(graph, overrides=None):
    """Re-run every recorded op from leaf values; returns all node values.

    ``overrides`` maps leaf ids to replacement values.
    """
    overrides = overrides or {}
    vals = []
    for node in graph.nodes:
        if node.kind == "leaf":
            vals.append(np.asarray(overrides.get(node.id, node.value), dtype=np.float64))
        else:
            fwd, _ = PRIMITIVES[node.kind]
            vals.append(np.asarray(fwd([vals[i] for i in node.inputs], node.attrs), dtype=np.float64))
    return vals


@dataclass
class GradCheckReport:
    max_abs: float
    max_rel: float
    tolerance: float
    kink_distance: float

    @property
    def passed(self):
        return self.max_rel < self.tolerance


def kink_distance(graph):
    """Smallest distance of any recorded relu input from 0, or of any maxpool
    window's top two entries from a tie.  Finite differences across such
    points are meaningless."""
    d = np.inf
    for node in graph.nodes:
        if node.kind == "relu":
            d = min(d, float(np.abs(graph.nodes[node.inputs[0]].value).min(initial=np.inf)))
        elif node.kind == "maxpool_2x":
            win = np.sort(_pool_windows(graph.nodes[node.inputs[0]].value), axis=-1)
            d = min(d, float((win[..., -1] - win[..., -2]).min(initial=np.inf)))
    return d


def grad_check(graph, node, tolerance=1e-6, step=1e-5, output=None, seed=0, coords=None):
    """Compare backward() with central finite differences for leaf ``node``.

    Non-scalar outputs are contracted with a fixed random direction.  The
    relative deviation is the max absolute deviation over the larger of
    the two gradients' max magnitudes.  ``coords`` limits the comparison to
    that many randomly chosen entries of the leaf.
    """
    out_node = graph.output if output is None else graph[getattr(output, "id", output)]
    leaf = graph[getattr(node, "id", node)]
    if leaf.kind != "leaf":
        raise GraphError("grad_check needs a leaf node")
    rng = np.random.default_rng(seed)
    direction = rng.normal(size=out_node.shape) if out_node.value.ndim else np.array(1.0)
    (analytic,) = backward(graph, direction, [leaf.id], output=out_node.id)
    x0 = np.array(leaf.value)
    if coords is None or coords >= x0.size:
        idx = np.arange(x0.size)
    else:
        idx = np.sort(rng.choice(x0.size, coords, replace=False))
    analytic = analytic.reshape(-1)[idx]
    numeric = np.zeros(idx.size)
    for k, i in enumerate(idx):
        xp = x0.copy().reshape(-1)
        xp[i] += step
        fp = float((replay(graph, {leaf.id: xp.reshape(x0.shape)})[out_node.id] * direction).sum())
        xp[i] -= 2 * step
        fm = float((replay(graph, {leaf.id: xp.reshape(x0.shape)})[out_node.id] * direction).sum())
        numeric[k] = (fp - fm) / (2 * step)
    max_abs = float(np.abs(analytic - numeric).max(initial=0.0))
    denom = max(float(np.abs(analytic).max(initial=0.0)), float(np.abs(numeric).max(initial=0.0)))
    max_rel = max_abs / denom if denom > 0 else 0.0
    return GradCheckReport(max_abs, max_rel, tolerance, kink_distance(graph))
