"""Minimal reverse-mode automatic differentiation on numpy arrays.

A ``TensorNode`` wraps an ndarray and records the operation that produced
it.  ``backward`` runs vector-Jacobian products in reverse topological
order and populates ``.grad`` on leaf parameters.  VJP rules are written
in terms of the engine's own primitives, so gradients can themselves be
differentiated (``grad_of_output_wrt_input`` with ``create_graph=True``),
which is what the R1 input-gradient penalty needs.

Conventions:

* image tensors are channel-last, ``[N, H, W, C]``
* new tensors take the engine's current dtype (float32 by default,
  switch to float64 with ``precision`` for finite-difference checks)
* no implicit array broadcasting; scalars are the only mixed operands
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Sequence

import numpy as np

_state = threading.local()


def _st():
    if not hasattr(_state, "dtype"):
        _state.dtype = np.dtype(np.float32)
        _state.grad_enabled = True
    return _state


def default_dtype() -> np.dtype:
    return _st().dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the dtype used for newly created tensors."""
    st = _st()
    old, st.dtype = st.dtype, np.dtype(dtype)
    try:
        yield
    finally:
        st.dtype = old


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    st = _st()
    old, st.grad_enabled = st.grad_enabled, False
    try:
        yield
    finally:
        st.grad_enabled = old


def grad_enabled() -> bool:
    return _st().grad_enabled


class TensorNode:
    """An N-dimensional float array participating in an autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "_op")

    def __init__(self, data: np.ndarray, requires_grad: bool = False):
        self.data = data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[TensorNode, ...] = ()
        # vjp(out_grad, needed) -> per-parent gradients (None where not needed)
        self._vjp: Callable | None = None
        self._op: str | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "TensorNode":
        return TensorNode(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = self._op or ("param" if self.requires_grad else "const")
        return f"TensorNode({tag}, shape={self.shape}, dtype={self.data.dtype})"

    # arithmetic sugar (scalar or same-shape node operands only)
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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)


def tensor(x, requires_grad: bool = False) -> TensorNode:
    """Wrap array-like data as a node in the engine's current dtype."""
    arr = np.asarray(x, dtype=_st().dtype)
    return TensorNode(arr, requires_grad=requires_grad)


def parameter(x) -> TensorNode:
    return tensor(x, requires_grad=True)


def constant(x) -> TensorNode:
    return tensor(x, requires_grad=False)


def _record(data: np.ndarray, parents: Sequence[TensorNode], vjp, op: str) -> TensorNode:
    # record unconditionally while grad is enabled so that constant inputs
    # (e.g. real images under the R1 penalty) stay connected to the graph
    if _st().grad_enabled:
        out = TensorNode(data, requires_grad=any(p.requires_grad for p in parents))
        out._parents = tuple(parents)
        out._vjp = vjp
        out._op = op
        return out
    return TensorNode(data)


def _as_node(x) -> TensorNode:
    return x if isinstance(x, TensorNode) else tensor(x)


# ---------------------------------------------------------------------------
# elementwise primitives


def add(a, b) -> TensorNode:
    if not isinstance(b, TensorNode):
        a = _as_node(a)
        data = a.data + a.data.dtype.type(b)
        return _record(data, (a,), lambda g, need: (g,), "add_s")
    if not isinstance(a, TensorNode):
        return add(b, a)
    _check_same_shape(a, b)
    return _record(a.data + b.data, (a, b), lambda g, need: (g, g), "add")


def sub(a, b) -> TensorNode:
    if not isinstance(b, TensorNode):
        return add(a, -b)
    if not isinstance(a, TensorNode):
        return add(neg(b), a)
    _check_same_shape(a, b)
    return _record(a.data - b.data, (a, b), lambda g, need: (g, neg(b_g) if (b_g := g) is not None else None), "sub")


def neg(a) -> TensorNode:
    a = _as_node(a)
    return _record(-a.data, (a,), lambda g, need: (neg(g),), "neg")


def mul(a, b) -> TensorNode:
    if not isinstance(b, TensorNode):
        a = _as_node(a)
        s = float(b)

        def vjp(g, need):
            return (mul(g, s),)

        return _record(a.data * a.data.dtype.type(s), (a,), vjp, "mul_s")
    if not isinstance(a, TensorNode):
        return mul(b, a)
    _check_same_shape(a, b)

    def vjp(g, need):
        return (mul(g, b) if need[0] else None, mul(g, a) if need[1] else None)

    return _record(a.data * b.data, (a, b), vjp, "mul")


def div(a, b) -> TensorNode:
    if not isinstance(b, TensorNode):
        return mul(a, 1.0 / float(b))
    a = _as_node(a)
    _check_same_shape(a, b)
    out_data = a.data / b.data
    out_ref: list[TensorNode] = []

    def vjp(g, need):
        ga = div(g, b) if need[0] else None
        gb = None
        if need[1]:
            gb = neg(div(mul(g, out_ref[0]), b))
        return (ga, gb)

    out = _record(out_data, (a, b), vjp, "div")
    out_ref.append(out)
    return out


def exp(a: TensorNode) -> TensorNode:
    out_data = np.exp(a.data)
    out_ref: list[TensorNode] = []

    def vjp(g, need):
        return (mul(g, out_ref[0]),)

    out = _record(out_data, (a,), vjp, "exp")
    out_ref.append(out)
    return out


def log(a: TensorNode) -> TensorNode:
    def vjp(g, need):
        return (div(g, a),)

    return _record(np.log(a.data), (a,), vjp, "log")


def sqrt(a: TensorNode) -> TensorNode:
    """Square root whose gradient is guarded against exact zeros."""
    out_data = np.sqrt(a.data)
    out_ref: list[TensorNode] = []

    def vjp(g, need):
        denom = maximum_const(out_ref[0], 1e-12)
        return (div(mul(g, 0.5), denom),)

    out = _record(out_data, (a,), vjp, "sqrt")
    out_ref.append(out)
    return out


def maximum_const(a: TensorNode, c: float) -> TensorNode:
    mask = (a.data > c).astype(a.data.dtype)

    def vjp(g, need):
        return (mul(g, tensor(mask)),)

    return _record(np.maximum(a.data, a.data.dtype.type(c)), (a,), vjp, "max_c")


def leaky_relu(a: TensorNode, slope: float = 0.2) -> TensorNode:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    pos = a.data >= 0
    out_data = np.where(pos, a.data, a.data * a.data.dtype.type(slope))

    def vjp(g, need):
        mask = np.where(pos, g.data.dtype.type(1.0), g.data.dtype.type(slope))
        return (mul(g, tensor(mask)),)

    return _record(out_data, (a,), vjp, "leaky_relu")


def sigmoid(a: TensorNode) -> TensorNode:
    with np.errstate(over="ignore"):
        out_data = 1.0 / (1.0 + np.exp(-a.data))
    out_ref: list[TensorNode] = []

    def vjp(g, need):
        s = out_ref[0]
        return (mul(g, mul(s, sub(1.0, s))),)

    out = _record(out_data, (a,), vjp, "sigmoid")
    out_ref.append(out)
    return out


def softplus(a: TensorNode) -> TensorNode:
    """log(1 + exp(x)) with a stable branch for |x| > 20."""
    x = a.data
    out_data = np.where(x > 20, x, np.log1p(np.exp(np.minimum(x, 20))))
    out_data = np.where(x < -20, np.exp(np.maximum(x, -20)), out_data).astype(x.dtype)

    def vjp(g, need):
        return (mul(g, sigmoid(a)),)

    return _record(out_data, (a,), vjp, "softplus")


# ---------------------------------------------------------------------------
# shape primitives


def reshape(a: TensorNode, shape) -> TensorNode:
    shape = tuple(shape)
    old = a.shape

    def vjp(g, need):
        return (reshape(g, old),)

    return _record(a.data.reshape(shape), (a,), vjp, "reshape")


def transpose(a: TensorNode, axes) -> TensorNode:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def vjp(g, need):
        return (transpose(g, inv),)

    return _record(np.ascontiguousarray(a.data.transpose(axes)), (a,), vjp, "transpose")


def concat(nodes: Sequence[TensorNode], axis: int) -> TensorNode:
    nodes = list(nodes)
    sizes = [n.shape[axis] for n in nodes]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def vjp(g, need):
        outs = []
        for i in range(len(nodes)):
            outs.append(narrow(g, axis, int(offsets[i]), sizes[i]) if need[i] else None)
        return tuple(outs)

    return _record(np.concatenate([n.data for n in nodes], axis=axis), nodes, vjp, "concat")


def narrow(a: TensorNode, axis: int, start: int, length: int) -> TensorNode:
    total = a.shape[axis]
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(start, start + length)

    def vjp(g, need):
        return (pad_axis(g, axis, start, total - start - length),)

    return _record(np.ascontiguousarray(a.data[tuple(sl)]), (a,), vjp, "narrow")


def pad_axis(a: TensorNode, axis: int, before: int, after: int) -> TensorNode:
    widths = [(0, 0)] * a.ndim
    widths[axis] = (before, after)

    def vjp(g, need):
        return (narrow(g, axis, before, a.shape[axis]),)

    return _record(np.pad(a.data, widths), (a,), vjp, "pad_axis")


def sum_axes(a: TensorNode, axes, keepdims: bool = True) -> TensorNode:
    axes = tuple(axes)
    out_data = a.data.sum(axis=axes, keepdims=keepdims)
    in_shape = a.shape

    def vjp(g, need):
        gk = g
        if not keepdims:
            kshape = list(in_shape)
            for ax in axes:
                kshape[ax] = 1
            gk = reshape(g, kshape)
        return (broadcast_to(gk, in_shape),)

    return _record(out_data, (a,), vjp, "sum_axes")


def mean_axes(a: TensorNode, axes, keepdims: bool = True) -> TensorNode:
    n = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(sum_axes(a, axes, keepdims), 1.0 / n)


def sum_all(a: TensorNode) -> TensorNode:
    return sum_axes(a, tuple(range(a.ndim)), keepdims=False) if a.ndim else a


def mean_all(a: TensorNode) -> TensorNode:
    return mul(sum_all(a), 1.0 / a.size)


def broadcast_to(a: TensorNode, shape) -> TensorNode:
    shape = tuple(shape)
    if a.shape == shape:
        return a
    if len(shape) != a.ndim:
        raise ValueError(f"broadcast_to only expands size-1 axes: {a.shape} -> {shape}")
    axes = tuple(i for i in range(a.ndim) if a.shape[i] == 1 and shape[i] != 1)

    def vjp(g, need):
        return (sum_axes(g, axes, keepdims=True),)

    return _record(np.ascontiguousarray(np.broadcast_to(a.data, shape)), (a,), vjp, "broadcast")


def matmul(a: TensorNode, b: TensorNode) -> TensorNode:
    """``a @ b`` where ``b`` is 2-D or both share leading batch dims."""
    a = _as_node(a)
    b = _as_node(b)

    def vjp(g, need):
        ga = gb = None
        if need[0]:
            ga = matmul(g, transpose(b, _swap_last2(b.ndim)))
            if ga.ndim > a.ndim:  # 2-D lhs broadcast against batched rhs
                ga = sum_axes(ga, tuple(range(ga.ndim - a.ndim)), keepdims=False)
        if need[1]:
            if a.ndim == 2 and b.ndim == 2:
                gb = matmul(transpose(a, (1, 0)), g)
            elif b.ndim == 2:
                k = a.shape[-1]
                n = g.shape[-1]
                a2 = reshape(a, (-1, k))
                g2 = reshape(g, (-1, n))
                gb = matmul(transpose(a2, (1, 0)), g2)
            else:
                gb = matmul(transpose(a, _swap_last2(a.ndim)), g)
                if gb.ndim > b.ndim:
                    gb = sum_axes(gb, tuple(range(gb.ndim - b.ndim)), keepdims=False)
        return (ga, gb)

    return _record(np.matmul(a.data, b.data), (a, b), vjp, "matmul")


def _swap_last2(ndim: int) -> tuple[int, ...]:
    axes = list(range(ndim))
    axes[-2], axes[-1] = axes[-1], axes[-2]
    return tuple(axes)


def _check_same_shape(a: TensorNode, b: TensorNode) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# backward machinery

_last_visit_count = 0


def last_visit_count() -> int:
    """Node visits performed by the most recent backward traversal."""
    return _last_visit_count


def _toposort(root: TensorNode) -> list[TensorNode]:
    order: list[TensorNode] = []
    seen: set[int] = set()
    stack: list[tuple[TensorNode, bool]] = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order  # parents precede children


def grad_wrt(
    output: TensorNode,
    inputs: Sequence[TensorNode],
    create_graph: bool = False,
) -> list[TensorNode]:
    """Gradients of a scalar ``output`` with respect to ``inputs``.

    With ``create_graph=True`` the returned nodes carry graph history, so
    expressions of the gradient (for example its squared norm) can be
    backpropagated again.  Inputs that do not participate in the graph get
    zero gradients.
    """
    global _last_visit_count
    if output.size != 1:
        raise ValueError("grad_wrt expects a scalar output")

    order = _toposort(output)
    targets = {id(t) for t in inputs}
    need: dict[int, bool] = {}
    for node in order:
        need[id(node)] = id(node) in targets or any(need[id(p)] for p in node._parents)

    grads: dict[int, TensorNode] = {}
    owned: set[int] = set()
    results: dict[int, TensorNode] = {}
    one = TensorNode(np.ones(output.shape, dtype=output.data.dtype))
    grads[id(output)] = one

    visits = 0
    ctx = contextlib.nullcontext() if create_graph else no_grad()
    with ctx:
        for node in reversed(order):
            visits += 1
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if id(node) in targets:
                results[id(node)] = g
            if node._vjp is None:
                continue
            needed = tuple(need[id(p)] for p in node._parents)
            if not any(needed):
                continue
            pgrads = node._vjp(g, needed)
            for p, pg in zip(node._parents, pgrads):
                if pg is None or not need[id(p)]:
                    continue
                acc = grads.get(id(p))
                if acc is None:
                    grads[id(p)] = pg
                elif create_graph:
                    grads[id(p)] = add(acc, pg)
                else:
                    if id(p) not in owned:
                        acc = TensorNode(acc.data + pg.data)
                        grads[id(p)] = acc
                        owned.add(id(p))
                    else:
                        acc.data += pg.data
    _last_visit_count = visits

    out: list[TensorNode] = []
    for t in inputs:
        r = results.get(id(t))
        if r is None:
            r = TensorNode(np.zeros(t.shape, dtype=t.data.dtype))
        out.append(r)
    return out


def backward(loss: TensorNode) -> None:
    """Populate ``.grad`` on every reachable parameter of a scalar loss."""
    if loss.size != 1:
        raise ValueError("backward expects a scalar loss")
    leaves = [n for n in _toposort(loss) if n.requires_grad and n._vjp is None]
    grads = grad_wrt(loss, leaves, create_graph=False)
    for leaf, g in zip(leaves, grads):
        if leaf.grad is None:
            leaf.grad = g.data.copy() if g.data.base is not None else g.data
        else:
            leaf.grad = leaf.grad + g.data


def grad_of_output_wrt_input(output: TensorNode, input: TensorNode) -> TensorNode:
    """Gradient of a scalar output as a differentiable node.

    Returns zeros when the input never entered the output's graph.
    """
    return grad_wrt(output, [input], create_graph=True)[0]
