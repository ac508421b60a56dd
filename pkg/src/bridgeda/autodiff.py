"""Reverse-mode differentiation over small dense graphs.

A graph is built once with :class:`GraphBuilder` and then evaluated many
times with different bindings for its named inputs (data batches and
parameter blocks alike). Evaluation keeps all intermediate values in a
per-call tape, so a finished :class:`Graph` is never mutated.

Example::

    g = GraphBuilder()
    x = g.input("x")
    out = g.sum(g.mul(x, x))
    graph = g.build(out)
    graph.eval({"x": np.array([1.0, 2.0, 3.0])})   # 14.0
    graph.grad({"x": np.array([1.0, 2.0, 3.0])})   # {"x": array([2., 4., 6.])}
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

LOG_CLAMP = 1e-12

OPS = (
    "input",
    "matmul",
    "bias_add",
    "sigmoid",
    "relu",
    "softmax",
    "log",
    "mul",
    "add",
    "mean",
    "sum",
    "scale",
    "concat",
)


class GraphError(ValueError):
    """Raised for malformed graphs, bad bindings or shape mismatches."""

    def __init__(self, message: str, node: int | None = None, op: str | None = None):
        self.node = node
        self.op = op
        if node is not None:
            message = f"node {node} ({op}): {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Node:
    id: int
    op: str
    preds: tuple[int, ...] = ()
    name: str | None = None
    const: float = 0.0


@dataclass(frozen=True)
class Graph:
    nodes: tuple[Node, ...]
    inputs: Mapping[str, int]
    output: int

    def _forward(self, inputs: Mapping[str, np.ndarray]) -> list[np.ndarray]:
        vals: list[np.ndarray] = []
        for node in self.nodes:
            try:
                vals.append(_forward_op(node, vals, inputs))
            except GraphError:
                raise
            except (ValueError, KeyError) as exc:
                raise GraphError(str(exc), node.id, node.op) from exc
        return vals

    def eval(self, inputs: Mapping[str, np.ndarray]) -> float:
        """Evaluate the graph and return the scalar output."""
        out = self._forward(inputs)[self.output]
        if out.shape != ():
            raise GraphError(f"output must be scalar, got shape {out.shape}", self.output, "output")
        return float(out)

    def forward(self, inputs: Mapping[str, np.ndarray]) -> list[np.ndarray]:
        """All node values in evaluation order (useful for reading intermediates)."""
        return self._forward(inputs)

    def value_and_grad(
        self, inputs: Mapping[str, np.ndarray], wrt: tuple[str, ...] | None = None
    ) -> tuple[float, dict[str, np.ndarray]]:
        value, grads, _ = self.run(inputs, wrt)
        return value, grads

    def run(
        self, inputs: Mapping[str, np.ndarray], wrt=None, watch: tuple[int, ...] = ()
    ) -> tuple[float, dict[str, np.ndarray], list[np.ndarray]]:
        """Forward and reverse pass; also returns the values of the ``watch`` nodes."""
        vals = self._forward(inputs)
        out = vals[self.output]
        if out.shape != ():
            raise GraphError(f"output must be scalar, got shape {out.shape}", self.output, "output")
        adj: list[np.ndarray | None] = [None] * len(self.nodes)
        adj[self.output] = np.ones((), dtype=np.float64)
        for node in reversed(self.nodes[: self.output + 1]):
            g = adj[node.id]
            if g is None or node.op == "input":
                continue
            for pid, contrib in zip(node.preds, _backward_op(node, vals, g)):
                adj[pid] = contrib if adj[pid] is None else adj[pid] + contrib
        names = self.inputs.keys() if wrt is None else wrt
        grads = {}
        for name in names:
            nid = self.inputs[name]
            a = adj[nid]
            grads[name] = np.zeros_like(vals[nid]) if a is None else a
        return float(out), grads, [vals[i] for i in watch]

    def grad(self, inputs: Mapping[str, np.ndarray], wrt: tuple[str, ...] | None = None) -> dict[str, np.ndarray]:
        """Gradients of the scalar output with respect to the named inputs."""
        return self.value_and_grad(inputs, wrt)[1]


@dataclass
class GraphBuilder:
    nodes: list[Node] = field(default_factory=list)
    inputs: dict[str, int] = field(default_factory=dict)

    def _add(self, op: str, preds: tuple[int, ...] = (), **kw) -> int:
        for p in preds:
            if not 0 <= p < len(self.nodes):
                raise GraphError(f"unknown predecessor {p}", len(self.nodes), op)
        nid = len(self.nodes)
        self.nodes.append(Node(nid, op, preds, **kw))
        return nid

    def input(self, name: str) -> int:
        """Declare a named input; declaring the same name twice returns the same node."""
        if name in self.inputs:
            return self.inputs[name]
        nid = self._add("input", name=name)
        self.inputs[name] = nid
        return nid

    def matmul(self, a: int, b: int) -> int:
        return self._add("matmul", (a, b))

    def bias_add(self, a: int, b: int) -> int:
        return self._add("bias_add", (a, b))

    def sigmoid(self, a: int) -> int:
        return self._add("sigmoid", (a,))

    def relu(self, a: int) -> int:
        return self._add("relu", (a,))

    def softmax(self, a: int) -> int:
        return self._add("softmax", (a,))

    def log(self, a: int) -> int:
        return self._add("log", (a,))

    def mul(self, a: int, b: int) -> int:
        return self._add("mul", (a, b))

    def add(self, a: int, b: int) -> int:
        return self._add("add", (a, b))

    def mean(self, a: int) -> int:
        return self._add("mean", (a,))

    def sum(self, a: int) -> int:
        return self._add("sum", (a,))

    def scale(self, a: int, c: float) -> int:
        return self._add("scale", (a,), const=float(c))

    def concat(self, a: int, b: int) -> int:
        return self._add("concat", (a, b))

    def build(self, output: int) -> Graph:
        if not 0 <= output < len(self.nodes):
            raise GraphError(f"unknown output node {output}")
        return Graph(tuple(self.nodes), dict(self.inputs), output)


def sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _forward_op(node: Node, vals: list[np.ndarray], inputs: Mapping[str, np.ndarray]) -> np.ndarray:
    op = node.op
    args = [vals[p] for p in node.preds]
    if op == "input":
        if node.name not in inputs:
            raise GraphError(f"input {node.name!r} is not bound", node.id, op)
        return np.asarray(inputs[node.name], dtype=np.float64)
    if op == "matmul":
        a, b = args
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise GraphError(f"cannot matmul {a.shape} by {b.shape}", node.id, op)
        return a @ b
    if op == "bias_add":
        a, b = args
        if a.ndim != 2 or b.shape != (a.shape[1],):
            raise GraphError(f"bias {b.shape} does not fit {a.shape}", node.id, op)
        return a + b
    if op == "sigmoid":
        return sigmoid(args[0])
    if op == "relu":
        return np.maximum(args[0], 0.0)
    if op == "softmax":
        if args[0].ndim != 2:
            raise GraphError(f"softmax needs a 2-D array, got {args[0].shape}", node.id, op)
        return softmax(args[0])
    if op == "log":
        return np.log(np.maximum(args[0], LOG_CLAMP))
    if op in ("mul", "add"):
        a, b = args
        if a.shape != b.shape:
            raise GraphError(f"shape mismatch {a.shape} vs {b.shape}", node.id, op)
        return a * b if op == "mul" else a + b
    if op == "mean":
        if args[0].size == 0:
            raise GraphError("mean of an empty array", node.id, op)
        return np.asarray(args[0].mean())
    if op == "sum":
        return np.asarray(args[0].sum())
    if op == "scale":
        return node.const * args[0]
    if op == "concat":
        a, b = args
        if a.ndim != b.ndim or a.ndim == 0 or a.shape[1:] != b.shape[1:]:
            raise GraphError(f"cannot concat {a.shape} and {b.shape}", node.id, op)
        return np.concatenate([a, b], axis=0)
    raise GraphError(f"unsupported op {op!r}", node.id, op)


def _backward_op(node: Node, vals: list[np.ndarray], g: np.ndarray) -> tuple[np.ndarray, ...]:
    op = node.op
    y = vals[node.id]
    args = [vals[p] for p in node.preds]
    if op == "matmul":
        a, b = args
        return g @ b.T, a.T @ g
    if op == "bias_add":
        return g, g.sum(axis=0)
    if op == "sigmoid":
        return (g * y * (1.0 - y),)
    if op == "relu":
        return (g * (args[0] > 0),)
    if op == "softmax":
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)
    if op == "log":
        a = args[0]
        return (np.where(a >= LOG_CLAMP, g / np.maximum(a, LOG_CLAMP), 0.0),)
    if op == "mul":
        a, b = args
        return g * b, g * a
    if op == "add":
        return g, g
    if op == "mean":
        a = args[0]
        return (np.full(a.shape, g / a.size),)
    if op == "sum":
        return (np.full(args[0].shape, g, dtype=np.float64),)
    if op == "scale":
        return (node.const * g,)
    if op == "concat":
        n = args[0].shape[0]
        return g[:n], g[n:]
    raise GraphError(f"no gradient for op {op!r}", node.id, op)
