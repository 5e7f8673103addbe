"""Minimal tape-based reverse-mode autodiff over numpy float64 arrays.

A Tape records nodes in construction order; backward() walks the tape in
reverse, so construction order doubles as a topological order. Gradients
are allocated lazily: nodes that never receive upstream gradient are
skipped entirely. The op set is exactly what a small attentional GRU
encoder-decoder needs; there is no broadcasting and no matrices-of-nodes.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class Node:
    """One tape entry: a float64 array value plus its accumulated gradient."""

    __slots__ = ("value", "grad", "backward_fn")

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad: np.ndarray | None = None
        self.backward_fn: Callable[[np.ndarray], None] | None = None


def _accum(node: Node, g: np.ndarray) -> None:
    if node.grad is None:
        node.grad = np.zeros_like(node.value)
    node.grad += g


class Tape:
    """Ordered op record for one forward pass."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []

    def _push(self, value: np.ndarray, backward_fn=None) -> Node:
        n = Node(np.asarray(value, dtype=np.float64))
        n.backward_fn = backward_fn
        self.nodes.append(n)
        return n

    def leaf(self, value: np.ndarray) -> Node:
        """Wrap a parameter (or constant) array; gradients accumulate into
        node.grad without propagating further."""
        return self._push(value)

    # ---- ops ------------------------------------------------------------

    def row(self, mat: Node, idx: int) -> Node:
        def backward(g):
            if mat.grad is None:
                mat.grad = np.zeros_like(mat.value)
            mat.grad[idx] += g

        return self._push(mat.value[idx], backward)

    def matvec(self, w: Node, x: Node) -> Node:
        def backward(g):
            _accum(w, np.outer(g, x.value))
            _accum(x, w.value.T @ g)

        return self._push(w.value @ x.value, backward)

    def add(self, a: Node, b: Node) -> Node:
        def backward(g):
            _accum(a, g)
            _accum(b, g)

        return self._push(a.value + b.value, backward)

    def mul(self, a: Node, b: Node) -> Node:
        def backward(g):
            _accum(a, g * b.value)
            _accum(b, g * a.value)

        return self._push(a.value * b.value, backward)

    def one_minus(self, a: Node) -> Node:
        def backward(g):
            _accum(a, -g)

        return self._push(1.0 - a.value, backward)

    def sigmoid(self, x: Node) -> Node:
        s = 1.0 / (1.0 + np.exp(-x.value))

        def backward(g):
            _accum(x, g * s * (1.0 - s))

        return self._push(s, backward)

    def tanh(self, x: Node) -> Node:
        t = np.tanh(x.value)

        def backward(g):
            _accum(x, g * (1.0 - t * t))

        return self._push(t, backward)

    def concat(self, a: Node, b: Node) -> Node:
        k = a.value.shape[0]

        def backward(g):
            _accum(a, g[:k])
            _accum(b, g[k:])

        return self._push(np.concatenate([a.value, b.value]), backward)

    def slice1d(self, x: Node, start: int, stop: int) -> Node:
        def backward(g):
            if x.grad is None:
                x.grad = np.zeros_like(x.value)
            x.grad[start:stop] += g

        return self._push(x.value[start:stop], backward)

    def dot(self, a: Node, b: Node) -> Node:
        def backward(g):
            _accum(a, g * b.value)
            _accum(b, g * a.value)

        return self._push(np.asarray(a.value @ b.value), backward)

    def stack_scalars(self, parts: Sequence[Node]) -> Node:
        parts = list(parts)

        def backward(g):
            for i, p in enumerate(parts):
                _accum(p, np.asarray(g[i]))

        return self._push(np.array([p.value for p in parts]), backward)

    def weighted_sum(self, vectors: Sequence[Node], weights: Node) -> Node:
        """c = sum_i weights[i] * vectors[i] without materializing the
        stacked matrix as a node."""
        vectors = list(vectors)
        w = weights.value

        def backward(g):
            wg = np.empty_like(w)
            for i, v in enumerate(vectors):
                _accum(v, w[i] * g)
                wg[i] = v.value @ g
            _accum(weights, wg)

        value = np.zeros_like(vectors[0].value)
        for i, v in enumerate(vectors):
            value += w[i] * v.value
        return self._push(value, backward)

    def softmax(self, x: Node) -> Node:
        shifted = x.value - x.value.max()
        e = np.exp(shifted)
        s = e / e.sum()

        def backward(g):
            _accum(x, s * (g - float(g @ s)))

        return self._push(s, backward)

    def cross_entropy(self, logits: Node, gold: int) -> Node:
        """-log softmax(logits)[gold], numerically stable."""
        m = logits.value.max()
        lse = m + np.log(np.exp(logits.value - m).sum())

        def backward(g):
            sm = np.exp(logits.value - lse)
            sm[gold] -= 1.0
            _accum(logits, float(g) * sm)

        return self._push(np.asarray(lse - logits.value[gold]), backward)

    # ---- reverse pass ----------------------------------------------------

    def backward(self, loss: Node) -> None:
        """Propagate d(loss)/d(node) into every reachable node's .grad."""
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes):
            if node.grad is not None and node.backward_fn is not None:
                node.backward_fn(node.grad)
