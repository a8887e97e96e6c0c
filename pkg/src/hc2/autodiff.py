"""Minimal dense-matrix reverse-mode automatic differentiation.

Values are 2-D float64 arrays; vectors are 1 x d rows and scalars are
1 x 1.  Each operation builds a node whose closure distributes the output
gradient to its parents; `backward` walks the graph once in reverse
topological order.  Graphs live for one training step and are then dropped.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DimensionError, GraphError, NumericError
from .rng import RngStream


def _as_matrix(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"expected at most 2 dimensions, got shape {arr.shape}")
    return arr


class DiffNode:
    """One value in the differentiation graph.

    `grad` always has the same shape as `value`.  A detached node is a
    constant: it never receives gradient contributions.
    """

    __slots__ = ("value", "grad", "parents", "requires_grad", "detached",
                 "_backward", "_backward_ran", "_ctx")

    def __init__(self, value, requires_grad: bool = True, parents: tuple = (),
                 backward: Callable[[], None] | None = None, detached: bool = False):
        self.value = _as_matrix(value)
        self.grad = np.zeros_like(self.value)
        self.parents = parents
        self.detached = detached
        self.requires_grad = requires_grad and not detached
        self._backward = backward
        self._backward_ran = False
        self._ctx = None

    # -- constructors ------------------------------------------------------

    @staticmethod
    def param(value) -> "DiffNode":
        """Leaf node that participates in gradient descent."""
        return DiffNode(value, requires_grad=True)

    @staticmethod
    def constant(value) -> "DiffNode":
        """Detached leaf; acts as a constant in every graph."""
        return DiffNode(value, requires_grad=False, detached=True)

    def detach(self) -> "DiffNode":
        """Constant copy of this node's current value."""
        return DiffNode.constant(self.value.copy())

    # -- conveniences -------------------------------------------------------

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        if self.value.size != 1:
            raise ContractError(f"item() needs a scalar node, got shape {self.shape}")
        return float(self.value[0, 0])

    def __repr__(self) -> str:
        return f"DiffNode(shape={self.shape}, requires_grad={self.requires_grad})"


def _wants_grad(parents: Iterable[DiffNode]) -> bool:
    return any(p.requires_grad and not p.detached for p in parents)


def _accum(parent: DiffNode, contribution: np.ndarray) -> None:
    if parent.requires_grad and not parent.detached:
        parent.grad += contribution


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def matmul(a: DiffNode, b: DiffNode) -> DiffNode:
    """Matrix product; backward sends g @ b.T to a and a.T @ g to b."""
    if a.value.shape[1] != b.value.shape[0]:
        raise DimensionError(f"matmul shapes do not chain: {a.value.shape} x {b.value.shape}")
    out = DiffNode(a.value @ b.value, requires_grad=_wants_grad((a, b)), parents=(a, b))

    def bw():
        _accum(a, out.grad @ b.value.T)
        _accum(b, a.value.T @ out.grad)

    out._backward = bw
    return out


def add(a: DiffNode, b: DiffNode) -> DiffNode:
    if a.value.shape != b.value.shape:
        raise DimensionError(f"add shapes differ: {a.value.shape} vs {b.value.shape}")
    out = DiffNode(a.value + b.value, requires_grad=_wants_grad((a, b)), parents=(a, b))

    def bw():
        _accum(a, out.grad)
        _accum(b, out.grad)

    out._backward = bw
    return out


def add_n(nodes: Sequence[DiffNode]) -> DiffNode:
    """Elementwise sum of same-shape nodes (keeps graphs shallow)."""
    if not nodes:
        raise ContractError("add_n needs at least one node")
    shape = nodes[0].value.shape
    for n in nodes[1:]:
        if n.value.shape != shape:
            raise DimensionError(f"add_n shapes differ: {shape} vs {n.value.shape}")
    total = nodes[0].value.copy()
    for n in nodes[1:]:
        total += n.value
    out = DiffNode(total, requires_grad=_wants_grad(nodes), parents=tuple(nodes))

    def bw():
        for n in nodes:
            _accum(n, out.grad)

    out._backward = bw
    return out


def sub(a: DiffNode, b: DiffNode) -> DiffNode:
    if a.value.shape != b.value.shape:
        raise DimensionError(f"sub shapes differ: {a.value.shape} vs {b.value.shape}")
    out = DiffNode(a.value - b.value, requires_grad=_wants_grad((a, b)), parents=(a, b))

    def bw():
        _accum(a, out.grad)
        _accum(b, -out.grad)

    out._backward = bw
    return out


def mul(a: DiffNode, b: DiffNode) -> DiffNode:
    """Hadamard product."""
    if a.value.shape != b.value.shape:
        raise DimensionError(f"mul shapes differ: {a.value.shape} vs {b.value.shape}")
    out = DiffNode(a.value * b.value, requires_grad=_wants_grad((a, b)), parents=(a, b))

    def bw():
        _accum(a, out.grad * b.value)
        _accum(b, out.grad * a.value)

    out._backward = bw
    return out


def div(a: DiffNode, b: DiffNode) -> DiffNode:
    if a.value.shape != b.value.shape:
        raise DimensionError(f"div shapes differ: {a.value.shape} vs {b.value.shape}")
    out = DiffNode(a.value / b.value, requires_grad=_wants_grad((a, b)), parents=(a, b))

    def bw():
        _accum(a, out.grad / b.value)
        _accum(b, -out.grad * a.value / (b.value * b.value))

    out._backward = bw
    return out


def neg(x: DiffNode) -> DiffNode:
    out = DiffNode(-x.value, requires_grad=_wants_grad((x,)), parents=(x,))
    out._backward = lambda: _accum(x, -out.grad)
    return out


def affine(x: DiffNode, mul_by=1.0, shift=0.0) -> DiffNode:
    """Constant elementwise transform mul_by * x + shift.

    `mul_by` and `shift` are plain floats or arrays broadcastable to x;
    they are not graph nodes and receive no gradient.
    """
    m = np.asarray(mul_by, dtype=np.float64)
    s = np.asarray(shift, dtype=np.float64)
    value = m * x.value + s
    if value.shape != x.value.shape:
        raise DimensionError(f"affine constants broadcast {x.value.shape} to {value.shape}")
    out = DiffNode(value, requires_grad=_wants_grad((x,)), parents=(x,))
    out._backward = lambda: _accum(x, out.grad * m)
    return out


def exp(x: DiffNode) -> DiffNode:
    out = DiffNode(np.exp(x.value), requires_grad=_wants_grad((x,)), parents=(x,))
    out._backward = lambda: _accum(x, out.grad * out.value)
    return out


def log(x: DiffNode) -> DiffNode:
    out = DiffNode(np.log(x.value), requires_grad=_wants_grad((x,)), parents=(x,))
    out._backward = lambda: _accum(x, out.grad / x.value)
    return out


def relu(x: DiffNode) -> DiffNode:
    """Elementwise max(0, x); the subgradient at 0 is taken as 0."""
    mask = x.value > 0
    out = DiffNode(np.where(mask, x.value, 0.0), requires_grad=_wants_grad((x,)), parents=(x,))
    out._backward = lambda: _accum(x, out.grad * mask)
    return out


def sigmoid(x: DiffNode) -> DiffNode:
    """Elementwise logistic function, stable for large |x|.

    Branches on the sign so exp only ever sees non-positive arguments; the
    output saturates smoothly instead of overflowing for |x| >= 30.
    """
    v = x.value
    pos = v >= 0
    ez = np.exp(np.where(pos, -v, v))
    value = np.where(pos, 1.0 / (1.0 + ez), ez / (1.0 + ez))
    out = DiffNode(value, requires_grad=_wants_grad((x,)), parents=(x,))
    out._backward = lambda: _accum(x, out.grad * out.value * (1.0 - out.value))
    return out


def dropout(x: DiffNode, rate: float, rng: RngStream) -> DiffNode:
    """Inverted dropout: zero with probability `rate`, scale survivors.

    rate 0 is the identity map and consumes no draws.  The mask is recorded
    on the node (`_ctx`) and reused by the backward pass.
    """
    if not (0.0 <= rate < 1.0):
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    keep = rng.uniform(x.value.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    out = DiffNode(np.where(keep, x.value * scale, 0.0),
                   requires_grad=_wants_grad((x,)), parents=(x,))
    out._ctx = keep
    out._backward = lambda: _accum(x, out.grad * keep * scale)
    return out


def clip(x: DiffNode, lo: float, hi: float) -> DiffNode:
    """Clamp values to [lo, hi]; gradient passes only where the clamp is inactive."""
    inside = (x.value > lo) & (x.value < hi)
    out = DiffNode(np.clip(x.value, lo, hi), requires_grad=_wants_grad((x,)), parents=(x,))
    out._backward = lambda: _accum(x, out.grad * inside)
    return out


def dot(u: DiffNode, v: DiffNode) -> DiffNode:
    """Inner product of two equal-length row vectors; returns a 1 x 1 node."""
    if u.value.shape[0] != 1 or v.value.shape[0] != 1:
        raise DimensionError(f"dot needs row vectors, got {u.value.shape} and {v.value.shape}")
    if u.value.shape != v.value.shape:
        raise DimensionError(f"dot lengths differ: {u.value.shape} vs {v.value.shape}")
    out = DiffNode(u.value @ v.value.T, requires_grad=_wants_grad((u, v)), parents=(u, v))

    def bw():
        g = out.grad[0, 0]
        _accum(u, g * v.value)
        _accum(v, g * u.value)

    out._backward = bw
    return out


def sum_all(x: DiffNode) -> DiffNode:
    out = DiffNode(np.array([[x.value.sum()]]), requires_grad=_wants_grad((x,)), parents=(x,))
    out._backward = lambda: _accum(x, np.full_like(x.value, out.grad[0, 0]))
    return out


def take_row(x: DiffNode, i: int) -> DiffNode:
    if not (0 <= i < x.value.shape[0]):
        raise DimensionError(f"row {i} out of range for shape {x.value.shape}")
    out = DiffNode(x.value[i:i + 1].copy(), requires_grad=_wants_grad((x,)), parents=(x,))

    def bw():
        if x.requires_grad and not x.detached:
            x.grad[i] += out.grad[0]

    out._backward = bw
    return out


def take_rows(x: DiffNode, idxs) -> DiffNode:
    """Gather rows (indices may repeat); backward scatter-adds."""
    idxs = np.asarray(idxs, dtype=np.intp)
    if idxs.size and (idxs.min() < 0 or idxs.max() >= x.value.shape[0]):
        raise DimensionError(f"row indices out of range for shape {x.value.shape}")
    out = DiffNode(x.value[idxs].copy(), requires_grad=_wants_grad((x,)), parents=(x,))

    def bw():
        if x.requires_grad and not x.detached:
            np.add.at(x.grad, idxs, out.grad)

    out._backward = bw
    return out


def concat_cols(nodes: Sequence[DiffNode]) -> DiffNode:
    """Horizontal concatenation of nodes with equal row counts."""
    if not nodes:
        raise ContractError("concat_cols needs at least one node")
    rows = nodes[0].value.shape[0]
    for n in nodes[1:]:
        if n.value.shape[0] != rows:
            raise DimensionError(f"concat_cols row counts differ: {rows} vs {n.value.shape[0]}")
    out = DiffNode(np.hstack([n.value for n in nodes]),
                   requires_grad=_wants_grad(nodes), parents=tuple(nodes))
    widths = [n.value.shape[1] for n in nodes]

    def bw():
        offset = 0
        for n, w in zip(nodes, widths):
            _accum(n, out.grad[:, offset:offset + w])
            offset += w

    out._backward = bw
    return out


def concat_rows(nodes: Sequence[DiffNode]) -> DiffNode:
    """Vertical concatenation of nodes with equal column counts."""
    if not nodes:
        raise ContractError("concat_rows needs at least one node")
    cols = nodes[0].value.shape[1]
    for n in nodes[1:]:
        if n.value.shape[1] != cols:
            raise DimensionError(f"concat_rows column counts differ: {cols} vs {n.value.shape[1]}")
    out = DiffNode(np.vstack([n.value for n in nodes]),
                   requires_grad=_wants_grad(nodes), parents=tuple(nodes))
    heights = [n.value.shape[0] for n in nodes]

    def bw():
        offset = 0
        for n, h in zip(nodes, heights):
            _accum(n, out.grad[offset:offset + h])
            offset += h

    out._backward = bw
    return out


def transpose(x: DiffNode) -> DiffNode:
    out = DiffNode(x.value.T.copy(), requires_grad=_wants_grad((x,)), parents=(x,))
    out._backward = lambda: _accum(x, out.grad.T)
    return out


def add_rowvec(x: DiffNode, b: DiffNode) -> DiffNode:
    """Add a 1 x d bias row to every row of x."""
    if b.value.shape != (1, x.value.shape[1]):
        raise DimensionError(f"bias shape {b.value.shape} does not match columns of {x.value.shape}")
    out = DiffNode(x.value + b.value, requires_grad=_wants_grad((x, b)), parents=(x, b))

    def bw():
        _accum(x, out.grad)
        _accum(b, out.grad.sum(axis=0, keepdims=True))

    out._backward = bw
    return out


def pick(x: DiffNode, i: int, j: int) -> DiffNode:
    """Extract element (i, j) as a 1 x 1 node."""
    if not (0 <= i < x.value.shape[0] and 0 <= j < x.value.shape[1]):
        raise DimensionError(f"element ({i}, {j}) out of range for shape {x.value.shape}")
    out = DiffNode(np.array([[x.value[i, j]]]), requires_grad=_wants_grad((x,)), parents=(x,))

    def bw():
        if x.requires_grad and not x.detached:
            x.grad[i, j] += out.grad[0, 0]

    out._backward = bw
    return out


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def _toposort(root: DiffNode) -> list[DiffNode]:
    # iterative three-color DFS; a grey parent means a cycle
    order: list[DiffNode] = []
    state: dict[int, int] = {}  # 1 = on stack, 2 = done
    stack: list[tuple[DiffNode, int]] = [(root, 0)]
    while stack:
        node, pi = stack[-1]
        if pi == 0:
            state[id(node)] = 1
        if pi < len(node.parents):
            stack[-1] = (node, pi + 1)
            parent = node.parents[pi]
            st = state.get(id(parent), 0)
            if st == 1:
                raise GraphError("cycle detected in differentiation graph")
            if st == 0:
                stack.append((parent, 0))
        else:
            state[id(node)] = 2
            order.append(node)
            stack.pop()
    return order


def backward(root: DiffNode) -> dict[DiffNode, np.ndarray]:
    """Accumulate d(root)/d(node) into every reachable node's grad.

    The root must be scalar and each graph may be walked once; rebuilding
    the graph is the reset.  Returns a map from the non-detached reachable
    nodes to their gradient arrays.
    """
    if root.value.shape != (1, 1):
        raise ContractError(f"backward root must be 1 x 1, got shape {root.value.shape}")
    if root._backward_ran:
        raise GraphError("backward already ran on this graph; rebuild it to reset")
    order = _toposort(root)
    root._backward_ran = True
    # Leaf nodes outlive individual graphs, so clear before accumulating.
    for node in order:
        node.grad[...] = 0.0
    root.grad[0, 0] = 1.0
    for node in reversed(order):
        if node._backward is not None and node.requires_grad:
            node._backward()
    return {n: n.grad for n in order if n.requires_grad and not n.detached}


def finite_difference_check(f, x, eps: float) -> float:
    """Max relative disagreement between analytic and central-difference grads.

    `f` maps a flat parameter vector to (scalar value, gradient vector).
    Returns max_i |analytic_i - central_i| / max(1e-8, |central_i|).
    """
    if eps <= 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    x = np.asarray(x, dtype=np.float64).ravel()
    value, grad = f(x)
    if not np.isfinite(value):
        raise NumericError(f"function value is not finite: {value}")
    grad = np.asarray(grad, dtype=np.float64).ravel()
    worst = 0.0
    for i in range(x.size):
        xp = x.copy()
        xp[i] += eps
        xm = x.copy()
        xm[i] -= eps
        fp, _ = f(xp)
        fm, _ = f(xm)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError("perturbed function value is not finite")
        central = (fp - fm) / (2.0 * eps)
        err = abs(grad[i] - central) / max(1e-8, abs(central))
        worst = max(worst, err)
    return worst
