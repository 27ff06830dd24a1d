"""Small define-by-run reverse-mode autodiff over float64 numpy arrays.

A :class:`Graph` is an append-only tape. Building a node only records the op;
values are produced by :meth:`Graph.forward` and gradients by
:meth:`Graph.backward`. Graphs are cheap and meant to be rebuilt every step.

    g = Graph()
    x = g.placeholder("x")
    w = g.param(weight)
    loss = g.mse(g.matmul(x, w), g.constant(target))
    g.forward({x: batch})
    g.backward(loss)
    weight.grad  # d loss / d weight, accumulated
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class GraphError(Exception):
    """Base class for autodiff errors."""


class ShapeError(GraphError):
    pass


class NonFiniteError(GraphError):
    pass


def as_array(value) -> np.ndarray:
    return np.array(value, dtype=np.float64)


def stable_logsumexp(x: np.ndarray) -> np.ndarray:
    """logsumexp over the last axis with the row max subtracted first."""
    m = np.max(x, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return np.log(np.sum(np.exp(x - m), axis=-1)) + m[..., 0]


def stable_softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - np.max(x, axis=-1, keepdims=True))
    return e / np.sum(e, axis=-1, keepdims=True)


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # exp(-logaddexp(0, -x)) stays finite for large |x|
    return np.exp(-np.logaddexp(0.0, -x))


class Parameter:
    """A learnable array with an accumulating gradient buffer."""

    def __init__(self, value, name: str = ""):
        self.value = as_array(value)
        self.grad = np.zeros_like(self.value)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


@dataclass(eq=False)
class Node:
    id: int
    kind: str
    inputs: tuple[int, ...]
    attrs: dict = field(default_factory=dict)
    value: np.ndarray | None = None
    grad: np.ndarray | None = None


def _pair_mean(x: np.ndarray) -> np.ndarray:
    # mean over non-overlapping feature pairs, copied back to both slots;
    # an unpaired trailing feature passes through
    out = x.copy()
    even = x.shape[-1] - x.shape[-1] % 2
    if even:
        pairs = x[..., :even].reshape(*x.shape[:-1], even // 2, 2)
        out[..., :even] = np.repeat(pairs.mean(axis=-1), 2, axis=-1)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Graph:
    """Append-only computation tape.

    Node ids are assigned in creation order, so inputs always precede the
    node using them and the tape is acyclic by construction.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[int, Parameter] = {}
        self._ran = False

    def __len__(self) -> int:
        return len(self.nodes)

    def _add(self, kind: str, inputs: Sequence[int] = (), **attrs) -> int:
        for i in inputs:
            if not 0 <= i < len(self.nodes):
                raise GraphError(f"node {len(self.nodes)} ({kind}): unknown input {i}")
        node = Node(len(self.nodes), kind, tuple(inputs), attrs)
        self.nodes.append(node)
        self._ran = False
        return node.id

    # leaves

    def placeholder(self, name: str = "") -> int:
        return self._add("placeholder", name=name)

    def constant(self, value) -> int:
        return self._add("constant", value=as_array(value))

    def param(self, p: Parameter) -> int:
        nid = self._add("param")
        self.params[nid] = p
        return nid

    # op-kinds

    def identity(self, a: int) -> int:
        return self._add("identity", (a,))

    def zero(self, a: int) -> int:
        return self._add("zero", (a,))

    def add(self, a: int, b: int) -> int:
        """Elementwise sum; ``b`` may broadcast over leading axes (bias)."""
        return self._add("add", (a, b))

    def scale(self, a: int, c: float) -> int:
        return self._add("scale", (a,), c=float(c))

    def matmul(self, a: int, b: int) -> int:
        return self._add("matmul", (a, b))

    def relu(self, a: int) -> int:
        return self._add("relu", (a,))

    def mean_pool(self, a: int) -> int:
        return self._add("mean_pool", (a,))

    def softmax(self, a: int) -> int:
        return self._add("softmax", (a,))

    def logsumexp(self, a: int) -> int:
        return self._add("logsumexp", (a,))

    def softplus(self, a: int) -> int:
        return self._add("softplus", (a,))

    def cross_entropy(self, logits: int, labels) -> int:
        """Mean cross-entropy of ``[B, C]`` logits against integer labels."""
        return self._add("cross_entropy", (logits,), labels=np.asarray(labels, dtype=np.int64))

    def mse(self, pred: int, target: int) -> int:
        return self._add("mse", (pred, target))

    def weighted_sum(self, weights: int, terms: Sequence[int]) -> int:
        """sum_k weights[k] * terms[k] for a 1-D weights node."""
        return self._add("weighted_sum", (weights, *terms))

    def sum(self, a: int) -> int:
        return self._add("sum", (a,))

    def mean(self, a: int) -> int:
        return self._add("mean", (a,))

    def row(self, a: int, index: int) -> int:
        return self._add("row", (a,), index=int(index))

    # evaluation

    def forward(self, feeds: dict[int, np.ndarray] | None = None, root: int | None = None) -> np.ndarray:
        feeds = feeds or {}
        for node in self.nodes:
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    node.value = self._eval(node, feeds)
            except ValueError as exc:
                raise ShapeError(f"node {node.id} ({node.kind}): {exc}") from None
            if not np.all(np.isfinite(node.value)):
                raise NonFiniteError(f"node {node.id} ({node.kind}) produced a non-finite value")
            node.grad = None
        self._ran = True
        root = len(self.nodes) - 1 if root is None else root
        return self.nodes[root].value

    def value(self, nid: int) -> np.ndarray:
        if not self._ran:
            raise GraphError("forward has not been run")
        return self.nodes[nid].value

    def _eval(self, node: Node, feeds) -> np.ndarray:
        k = node.kind
        v = [self.nodes[i].value for i in node.inputs]
        if k == "placeholder":
            if node.id not in feeds:
                raise GraphError(f"placeholder node {node.id} ({node.attrs['name']!r}) not fed")
            return as_array(feeds[node.id])
        if k == "constant":
            return node.attrs["value"]
        if k == "param":
            return self.params[node.id].value
        if k == "identity":
            return v[0]
        if k == "zero":
            return np.zeros_like(v[0])
        if k == "add":
            a, b = v
            if b.ndim > a.ndim or a.shape[a.ndim - b.ndim:] != b.shape:
                raise ValueError(f"cannot add shapes {a.shape} and {b.shape}")
            return a + b
        if k == "scale":
            return node.attrs["c"] * v[0]
        if k == "matmul":
            a, b = v
            if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
                raise ValueError(f"matmul shapes {a.shape} @ {b.shape}")
            return a @ b
        if k == "relu":
            return np.maximum(v[0], 0.0)
        if k == "mean_pool":
            return _pair_mean(v[0])
        if k == "softmax":
            return stable_softmax(v[0])
        if k == "logsumexp":
            return stable_logsumexp(v[0])
        if k == "softplus":
            return softplus(v[0])
        if k == "cross_entropy":
            logits, labels = v[0], node.attrs["labels"]
            if logits.ndim != 2 or labels.shape != (logits.shape[0],):
                raise ValueError(f"logits {logits.shape} vs labels {labels.shape}")
            picked = logits[np.arange(len(labels)), labels]
            return np.array(np.mean(stable_logsumexp(logits) - picked))
        if k == "mse":
            a, b = v
            if a.shape != b.shape:
                raise ValueError(f"mse shapes {a.shape} vs {b.shape}")
            return np.array(np.mean((a - b) ** 2))
        if k == "weighted_sum":
            w, terms = v[0], v[1:]
            if w.shape != (len(terms),):
                raise ValueError(f"weights {w.shape} for {len(terms)} terms")
            if any(t.shape != terms[0].shape for t in terms):
                raise ValueError("weighted_sum terms differ in shape")
            out = w[0] * terms[0]
            for wk, t in zip(w[1:], terms[1:]):
                out = out + wk * t
            return out
        if k == "sum":
            return np.array(np.sum(v[0]))
        if k == "mean":
            return np.array(np.mean(v[0]))
        if k == "row":
            return v[0][node.attrs["index"]]
        raise GraphError(f"unknown op-kind {k!r}")

    def backward(self, root: int | None = None) -> None:
        """Backpropagate d root / d node; parameter grads accumulate."""
        if not self._ran:
            raise GraphError("backward called before forward")
        root = len(self.nodes) - 1 if root is None else root
        out = self.nodes[root].value
        if out.size != 1:
            raise GraphError(f"backward root {root} is not scalar (shape {out.shape})")
        grads: dict[int, np.ndarray] = {root: np.ones_like(out)}
        for node in reversed(self.nodes[: root + 1]):
            g = grads.pop(node.id, None)
            if g is None:
                continue
            node.grad = g
            if node.kind == "param":
                p = self.params[node.id]
                p.grad = p.grad + g.reshape(p.shape)
                continue
            for i, gi in zip(node.inputs, self._vjp(node, g)):
                if gi is None:
                    continue
                grads[i] = grads[i] + gi if i in grads else gi

    def _vjp(self, node: Node, g: np.ndarray) -> list[np.ndarray | None]:
        k = node.kind
        v = [self.nodes[i].value for i in node.inputs]
        y = node.value
        if k == "identity":
            return [g]
        if k == "zero":
            return [None]
        if k == "add":
            return [g, _unbroadcast(g, v[1].shape)]
        if k == "scale":
            return [node.attrs["c"] * g]
        if k == "matmul":
            a, b = v
            return [g @ b.T, a.T @ g]
        if k == "relu":
            return [g * (v[0] > 0)]
        if k == "mean_pool":
            # the pair-mean map is symmetric, so it is its own adjoint
            return [_pair_mean(g)]
        if k == "softmax":
            return [y * (g - np.sum(g * y, axis=-1, keepdims=True))]
        if k == "logsumexp":
            return [g[..., None] * stable_softmax(v[0])]
        if k == "softplus":
            return [g * sigmoid(v[0])]
        if k == "cross_entropy":
            labels = node.attrs["labels"]
            p = stable_softmax(v[0])
            p[np.arange(len(labels)), labels] -= 1.0
            return [g * p / len(labels)]
        if k == "mse":
            d = 2.0 * (v[0] - v[1]) / v[0].size
            return [g * d, -g * d]
        if k == "weighted_sum":
            terms = v[1:]
            gw = np.array([np.sum(g * t) for t in terms])
            return [gw] + [wk * g for wk in v[0]]
        if k == "sum":
            return [np.full_like(v[0], g)]
        if k == "mean":
            return [np.full_like(v[0], g / v[0].size)]
        if k == "row":
            full = np.zeros_like(v[0])
            full[node.attrs["index"]] = g
            return [full]
        return [None for _ in node.inputs]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def finite_difference(fn: Callable[[np.ndarray], float], x, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = as_array(x)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        hi = float(fn(x))
        flat[i] = old - eps
        lo = float(fn(x))
        flat[i] = old
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NonFiniteError(f"function is non-finite near coordinate {i}")
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad
