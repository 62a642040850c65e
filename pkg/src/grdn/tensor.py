"""Reverse-mode automatic differentiation over dense n-d arrays.

A :class:`Tensor` wraps a numpy array. Operations on tensors that require
gradient record a :class:`GraphNode` holding the parent tensors and a closure
that maps the output gradient to parent gradients. ``backward`` walks the
graph once in reverse topological order and accumulates gradients into leaf
tensors (parameters); repeated calls accumulate additively.

Image tensors use (N, C, H, W) order. Gradients for broadcast operands are
summed back over the broadcast axes.
"""

import numpy as np

from . import kernels
from .errors import GraphError, ShapeError


class GraphNode:
    """One recorded operation: kind, ordered parents, backward closure."""

    __slots__ = ("op", "parents", "backward_fn")

    def __init__(self, op, parents, backward_fn):
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.node = None

    # -- introspection ------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    # -- graph management ---------------------------------------------------

    def detach(self) -> "Tensor":
        """Same data, no gradient, no graph linkage."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out.node = None
        return out

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float64))


def _make(data, op, parents, backward_fn) -> Tensor:
    """Wrap an op result; record the graph only when a parent needs grad."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out.node = GraphNode(op, parents, backward_fn) if out.requires_grad else None
    return out


def parameter(data, dtype=None) -> Tensor:
    """Leaf tensor that accumulates gradient."""
    return Tensor(np.array(data, dtype=dtype, copy=True), requires_grad=True)


def constant(data, dtype=None) -> Tensor:
    """Leaf tensor that never accumulates gradient."""
    return Tensor(data, requires_grad=False, dtype=dtype)


def _pair(a, b):
    """Promote scalars to the tensor operand's dtype, not float64."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, _as_tensor(b, a.dtype)
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return _as_tensor(a, b.dtype), b
    return _as_tensor(a), _as_tensor(b)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back over axes that numpy broadcasting expanded."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, "add", (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, "sub", (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

    return _make(ad * bd, "mul", (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "div")
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g / bd, a.shape), _unbroadcast(-g * ad / (bd * bd), b.shape)

    return _make(ad / bd, "div", (a, b), bw)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _make(-a.data, "neg", (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = _as_tensor(a)
    ad = a.data

    def bw(g):
        return (g * exponent * ad ** (exponent - 1),)

    return _make(ad ** exponent, "pow", (a,), bw)


def absolute(a) -> Tensor:
    """Elementwise |x|; subgradient 0 at 0."""
    a = _as_tensor(a)
    sign = np.sign(a.data)
    return _make(np.abs(a.data), "abs", (a,), lambda g: (g * sign,))


def sqrt(a) -> Tensor:
    return power(a, 0.5)


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op_kind: str, a, b) -> Tensor:
    """Name-dispatched binary arithmetic (b may be a scalar or broadcastable)."""
    try:
        fn = _ELEMENTWISE[op_kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op_kind!r}") from None
    return fn(a, b)


# ---------------------------------------------------------------------------
# activations


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), "relu", (a,), lambda g: (g * mask,))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    local = np.where(mask, 1.0, slope)
    return _make(a.data * local, "leaky_relu", (a,), lambda g: (g * local,))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    # piecewise form avoids overflow in exp for large |x|
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    local = s * (1.0 - s)
    return _make(s, "sigmoid", (a,), lambda g: (g * local,))


def activation(kind: str, a, slope: float = 0.2) -> Tensor:
    if kind == "relu":
        return relu(a)
    if kind == "sigmoid":
        return sigmoid(a)
    if kind == "leaky-relu":
        return leaky_relu(a, slope)
    raise ValueError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------------------
# reductions


def _norm_axes(axes, ndim):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(ax % ndim for ax in axes)


def reduce_sum(a, axes=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    axes = _norm_axes(axes, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)
    shape_kept = tuple(1 if i in axes else s for i, s in enumerate(a.shape))

    def bw(g):
        return (np.broadcast_to(g.reshape(shape_kept), a.shape),)

    return _make(np.asarray(out), "sum", (a,), bw)


def reduce_mean(a, axes=None, keepdims=False) -> Tensor:
    """Arithmetic mean over all elements, or over the given axes."""
    a = _as_tensor(a)
    if a.size == 0:
        raise ShapeError("reduce_mean on an empty tensor")
    axes = _norm_axes(axes, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes]))
    out = a.data.mean(axis=axes, keepdims=keepdims)
    shape_kept = tuple(1 if i in axes else s for i, s in enumerate(a.shape))

    def bw(g):
        return (np.broadcast_to(g.reshape(shape_kept), a.shape) / count,)

    return _make(np.asarray(out), "mean", (a,), bw)


def reduce_max(a, axes, keepdims=False) -> Tensor:
    """Max over axes; backward routes to the first maximizing index
    (row-major over the reduced axes)."""
    a = _as_tensor(a)
    axes = _norm_axes(axes, a.ndim)
    kept = tuple(i for i in range(a.ndim) if i not in axes)
    perm = kept + axes
    moved = a.data.transpose(perm)
    lead = moved.shape[: len(kept)]
    flat = moved.reshape(lead + (-1,))
    idx = flat.argmax(axis=-1)
    out_flat = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    shape_kept = tuple(1 if i in axes else s for i, s in enumerate(a.shape))
    out = out_flat.reshape([a.shape[i] for i in kept])
    inv_perm = np.argsort(perm)

    def bw(g):
        g_flat = g.reshape(lead)
        gm = np.zeros_like(flat)
        np.put_along_axis(gm, idx[..., None], g_flat[..., None], axis=-1)
        return (gm.reshape(moved.shape).transpose(inv_perm),)

    data = out if not keepdims else out.reshape(shape_kept)
    return _make(np.asarray(data), "max", (a,), bw)


def pool_global(kind: str, a) -> Tensor:
    """Per-channel global pooling of (N,C,H,W) to (N,C,1,1)."""
    if kind == "avg":
        return reduce_mean(a, axes=(2, 3), keepdims=True)
    if kind == "max":
        return reduce_max(a, axes=(2, 3), keepdims=True)
    raise ValueError(f"unknown pooling {kind!r}")


# ---------------------------------------------------------------------------
# shape ops


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.shape
    return _make(a.data.reshape(shape), "reshape", (a,), lambda g: (g.reshape(old),))


def concat_channels(tensors) -> Tensor:
    """Concatenate (N,C,H,W) tensors along the channel axis."""
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat_channels of an empty list")
    first = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != 4 or (t.shape[0], t.shape[2], t.shape[3]) != (first[0], first[2], first[3]):
            raise ShapeError(
                f"concat_channels: spatial/batch mismatch between {first} and {t.shape}"
            )
    sizes = [t.shape[1] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(tensors)))

    data = np.concatenate([t.data for t in tensors], axis=1)
    return _make(data, "concat", tuple(tensors), bw)


# ---------------------------------------------------------------------------
# convolution


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation with zero padding, no dilation.

    weight is (C_out, C_in, k, k); bias, when given, is (C_out,).
    """
    x, weight = _as_tensor(x), _as_tensor(weight)
    xd, wd = x.data, weight.data
    y = kernels.conv2d_forward(xd, wd, stride, padding)
    k = wd.shape[2]
    parents = (x, weight)
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (wd.shape[0],):
            raise ShapeError(f"bias shape {bias.shape} != ({wd.shape[0]},)")
        y = y + bias.data.reshape(1, -1, 1, 1)
        parents = (x, weight, bias)

    def bw(g):
        g = np.ascontiguousarray(g)
        gx = kernels.conv2d_input_grad(g, wd, stride, padding, xd.shape[2], xd.shape[3])
        gw = kernels.conv2d_weight_grad(xd, g, stride, padding, k)
        if bias is not None:
            return gx, gw, g.sum(axis=(0, 2, 3))
        return gx, gw

    return _make(y, "conv2d", parents, bw)


def conv2d_transpose(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed convolution: the adjoint of conv2d with the same weight.

    weight is (C_in, C_out, k, k) where C_in is this op's input channel count;
    output spatial size is (H-1)*stride - 2*padding + k.
    """
    x, weight = _as_tensor(x), _as_tensor(weight)
    xd, wd = x.data, weight.data
    if xd.shape[1] != wd.shape[0]:
        raise ShapeError(
            f"channel mismatch: input has {xd.shape[1]} channels, weight expects {wd.shape[0]}"
        )
    k = wd.shape[2]
    h_out = kernels.conv_transpose_output_size(xd.shape[2], k, stride, padding)
    w_out = kernels.conv_transpose_output_size(xd.shape[3], k, stride, padding)
    if h_out < 1 or w_out < 1:
        raise ShapeError(
            f"non-positive transposed-conv output {h_out}x{w_out} for input {xd.shape}"
        )
    y = kernels.conv2d_input_grad(xd, wd, stride, padding, h_out, w_out)
    parents = (x, weight)
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (wd.shape[1],):
            raise ShapeError(f"bias shape {bias.shape} != ({wd.shape[1]},)")
        y = y + bias.data.reshape(1, -1, 1, 1)
        parents = (x, weight, bias)

    def bw(g):
        g = np.ascontiguousarray(g)
        gx = kernels.conv2d_forward(g, wd, stride, padding)
        gw = kernels.conv2d_weight_grad(g, xd, stride, padding, k)
        if bias is not None:
            return gx, gw, g.sum(axis=(0, 2, 3))
        return gx, gw

    return _make(y, "conv2d_transpose", parents, bw)


# ---------------------------------------------------------------------------
# backward pass


def _toposort(root: Tensor):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for p in t.node.parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
    return order


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

    Repeated calls add up; callers zero gradients between steps.
    """
    if not isinstance(loss, Tensor):
        raise GraphError("backward expects a Tensor")
    if loss.data.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise GraphError("loss is not connected to any gradient-requiring tensor")

    order = _toposort(loss)
    flows = {id(loss): np.ones_like(loss.data)}
    for t in reversed(order):
        g = flows.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            if t.grad is None:
                t.grad = np.array(g, copy=True)
            else:
                t.grad = t.grad + g
            continue
        parent_grads = t.node.backward_fn(g)
        for p, pg in zip(t.node.parents, parent_grads):
            if not p.requires_grad:
                continue
            acc = flows.get(id(p))
            flows[id(p)] = pg if acc is None else acc + pg
