"""Reverse-mode differentiation over a small fixed set of dense matrix ops.

Values are float64 numpy arrays: 0-d scalars, 1-d vectors, 2-d matrices.
A tape records the operations of one forward pass in construction order;
`backward` replays them in reverse, accumulating vector-Jacobian products.
Gradients are recomputed from scratch on every `backward` call, never
accumulated across calls.

Recorded values must not be mutated in place afterwards; rebind instead.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError


def _as_f64(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


class Node:
    __slots__ = ("id", "op", "parents", "value", "payload")

    def __init__(self, node_id, op, parents, value, payload=None):
        self.id = node_id
        self.op = op
        self.parents = parents
        self.value = value
        self.payload = payload

    def __repr__(self):
        return f"Node(id={self.id}, op={self.op!r}, shape={self.value.shape})"


class Tape:
    def __init__(self):
        self._nodes: list[Node] = []
        self._grads: list | None = None

    def __len__(self) -> int:
        return len(self._nodes)

    def record(self, op: str, parents=(), payload=None) -> Node:
        """Evaluate `op` on the parent values and append the result node."""
        forward = _FORWARD.get(op)
        if forward is None:
            raise ValueError(f"unknown op {op!r}")
        nodes = self._nodes
        for p in parents:
            if p.id >= len(nodes) or nodes[p.id] is not p:
                raise ValueError(f"{op}: parent node does not belong to this tape")
        value = forward(parents, payload)
        node = Node(len(nodes), op, tuple(parents), value, payload)
        nodes.append(node)
        return node

    # -- recording helpers, one per op ------------------------------------

    def input(self, value) -> Node:
        return self.record("input", (), _as_f64(value))

    def constant(self, value) -> Node:
        return self.record("constant", (), _as_f64(value))

    def matmul(self, a: Node, b: Node) -> Node:
        return self.record("matmul", (a, b))

    def transpose(self, a: Node) -> Node:
        return self.record("transpose", (a,))

    def add(self, a: Node, b: Node) -> Node:
        return self.record("add", (a, b))

    def subtract(self, a: Node, b: Node) -> Node:
        return self.record("subtract", (a, b))

    def scale(self, a: Node, c: float) -> Node:
        return self.record("scale", (a,), float(c))

    def outer(self, u: Node, v: Node) -> Node:
        return self.record("outer", (u, v))

    def tanh(self, a: Node) -> Node:
        return self.record("tanh", (a,))

    def identity(self, a: Node) -> Node:
        return self.record("identity", (a,))

    def scalar_divide(self, a: Node, s: Node) -> Node:
        return self.record("scalar_divide", (a, s))

    def dot(self, a: Node, b: Node) -> Node:
        return self.record("dot", (a, b))

    def squared_norm(self, a: Node) -> Node:
        return self.record("squared_norm", (a,))

    def relu(self, a: Node) -> Node:
        return self.record("relu", (a,))

    def sum(self, a: Node) -> Node:
        return self.record("sum", (a,))

    # -- differentiation ---------------------------------------------------

    def backward(self, loss: Node) -> dict[int, np.ndarray]:
        """Gradient of the scalar `loss` node w.r.t. every input node.

        Returns a dict keyed by input-node id; inputs the loss does not
        depend on map to zero arrays.
        """
        nodes = self._nodes
        if not isinstance(loss, Node) or loss.id >= len(nodes) or nodes[loss.id] is not loss:
            raise ValueError("backward: loss node does not belong to this tape")
        if loss.value.ndim != 0:
            raise ValueError("backward: loss node must be scalar")
        grads: list = [None] * len(nodes)
        grads[loss.id] = np.ones((), dtype=np.float64)
        for node in reversed(nodes[: loss.id + 1]):
            g = grads[node.id]
            if g is None:
                continue
            vjp = _BACKWARD.get(node.op)
            if vjp is not None:
                vjp(node, g, grads)
        self._grads = grads
        return {
            n.id: grads[n.id] if grads[n.id] is not None else np.zeros_like(n.value)
            for n in nodes
            if n.op == "input"
        }

    def zero_grad(self) -> None:
        """Drop stored gradient slots; recorded nodes stay valid."""
        self._grads = None

    def reset(self) -> None:
        """Empty the tape; previously returned nodes become invalid."""
        self._nodes = []
        self._grads = None


# -- forward evaluation ------------------------------------------------------


def _fw_leaf(parents, payload):
    return payload


def _fw_matmul(parents, _):
    a, b = parents[0].value, parents[1].value
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    return a @ b


def _fw_transpose(parents, _):
    a = parents[0].value
    if a.ndim != 2:
        raise ValueError(f"transpose: expected a matrix, got shape {a.shape}")
    return a.T


def _fw_add(parents, _):
    a, b = parents[0].value, parents[1].value
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return a + b


def _fw_subtract(parents, _):
    a, b = parents[0].value, parents[1].value
    if a.shape != b.shape:
        raise ValueError(f"subtract: shape mismatch {a.shape} vs {b.shape}")
    return a - b


def _fw_scale(parents, payload):
    return parents[0].value * payload


def _fw_outer(parents, _):
    u, v = parents[0].value, parents[1].value
    if u.ndim != 1 or v.ndim != 1:
        raise ValueError(f"outer: expected vectors, got shapes {u.shape}, {v.shape}")
    return np.outer(u, v)


def _fw_tanh(parents, _):
    return np.tanh(parents[0].value)


def _fw_identity(parents, _):
    return parents[0].value


def _fw_scalar_divide(parents, _):
    a, s = parents[0].value, parents[1].value
    if s.ndim != 0:
        raise ValueError(f"scalar_divide: divisor must be scalar, got shape {s.shape}")
    if s == 0.0:
        raise NumericError("scalar_divide: division by zero")
    return a / s


def _fw_dot(parents, _):
    a, b = parents[0].value, parents[1].value
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ValueError(f"dot: expected equal-length vectors, got {a.shape}, {b.shape}")
    return np.asarray(a @ b)


def _fw_squared_norm(parents, _):
    a = parents[0].value
    return np.asarray(np.vdot(a, a))


def _fw_relu(parents, _):
    return np.maximum(parents[0].value, 0.0)


def _fw_sum(parents, _):
    return np.asarray(parents[0].value.sum())


_FORWARD = {
    "input": _fw_leaf,
    "constant": _fw_leaf,
    "matmul": _fw_matmul,
    "transpose": _fw_transpose,
    "add": _fw_add,
    "subtract": _fw_subtract,
    "scale": _fw_scale,
    "outer": _fw_outer,
    "tanh": _fw_tanh,
    "identity": _fw_identity,
    "scalar_divide": _fw_scalar_divide,
    "dot": _fw_dot,
    "squared_norm": _fw_squared_norm,
    "relu": _fw_relu,
    "sum": _fw_sum,
}


# -- vector-Jacobian products --------------------------------------------------


def _acc(grads, parent, g):
    cur = grads[parent.id]
    grads[parent.id] = g if cur is None else cur + g


def _bw_matmul(node, g, grads):
    a, b = node.parents
    if b.value.ndim == 1:
        _acc(grads, a, np.outer(g, b.value))
        _acc(grads, b, a.value.T @ g)
    else:
        _acc(grads, a, g @ b.value.T)
        _acc(grads, b, a.value.T @ g)


def _bw_transpose(node, g, grads):
    _acc(grads, node.parents[0], g.T)


def _bw_add(node, g, grads):
    a, b = node.parents
    _acc(grads, a, g)
    _acc(grads, b, g)


def _bw_subtract(node, g, grads):
    a, b = node.parents
    _acc(grads, a, g)
    _acc(grads, b, -g)


def _bw_scale(node, g, grads):
    _acc(grads, node.parents[0], g * node.payload)


def _bw_outer(node, g, grads):
    u, v = node.parents
    _acc(grads, u, g @ v.value)
    _acc(grads, v, g.T @ u.value)


def _bw_tanh(node, g, grads):
    # derivative from the cached output: 1 - tanh(x)^2
    _acc(grads, node.parents[0], g * (1.0 - node.value * node.value))


def _bw_identity(node, g, grads):
    _acc(grads, node.parents[0], g)


def _bw_scalar_divide(node, g, grads):
    a, s = node.parents
    sv = s.value
    _acc(grads, a, g / sv)
    _acc(grads, s, np.asarray(-np.vdot(g, node.value) / sv))


def _bw_dot(node, g, grads):
    a, b = node.parents
    _acc(grads, a, g * b.value)
    _acc(grads, b, g * a.value)


def _bw_squared_norm(node, g, grads):
    a = node.parents[0]
    _acc(grads, a, (2.0 * g) * a.value)


def _bw_relu(node, g, grads):
    a = node.parents[0]
    _acc(grads, a, g * (a.value > 0.0))


def _bw_sum(node, g, grads):
    a = node.parents[0]
    _acc(grads, a, np.full_like(a.value, g))


_BACKWARD = {
    "matmul": _bw_matmul,
    "transpose": _bw_transpose,
    "add": _bw_add,
    "subtract": _bw_subtract,
    "scale": _bw_scale,
    "outer": _bw_outer,
    "tanh": _bw_tanh,
    "identity": _bw_identity,
    "scalar_divide": _bw_scalar_divide,
    "dot": _bw_dot,
    "squared_norm": _bw_squared_norm,
    "relu": _bw_relu,
    "sum": _bw_sum,
}
