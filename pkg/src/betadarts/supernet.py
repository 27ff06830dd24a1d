"""Weight-sharing supernet: each edge mixes its candidate ops by softmax(alpha)."""

from __future__ import annotations

import numpy as np

from .autograd import Graph, Parameter, as_array, stable_softmax
from .space import Genotype, OpKind, SpaceError, SpaceSpec


def beta_from_alpha(alpha) -> np.ndarray:
    alpha = as_array(alpha)
    if not np.all(np.isfinite(alpha)):
        raise ValueError("alpha has non-finite entries")
    return stable_softmax(alpha)


def init_alpha(space: SpaceSpec) -> np.ndarray:
    # zero logits are exactly uniform beta
    return np.zeros((space.num_edges, space.num_ops))


class Supernet:
    """Per-(edge, op) weights for the parametric ops plus a linear classifier.

    Weighted ops are never shared across edges. All weights are drawn from
    ``uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))`` using the supplied generator.
    """

    def __init__(self, space: SpaceSpec, num_classes: int, rng: np.random.Generator):
        self.space = space
        self.num_classes = num_classes
        w = space.width
        bound = 1.0 / np.sqrt(w)
        self.op_weights: dict[tuple[int, int], Parameter] = {}
        for e in range(space.num_edges):
            for k, kind in enumerate(space.ops):
                if kind.weighted:
                    self.op_weights[e, k] = Parameter(rng.uniform(-bound, bound, (w, w)), f"edge{e}.op{k}")
        self.cls_w = Parameter(rng.uniform(-bound, bound, (w, num_classes)), "classifier.w")
        self.cls_b = Parameter(rng.uniform(-bound, bound, (num_classes,)), "classifier.b")

    def parameters(self) -> list[Parameter]:
        return [*self.op_weights.values(), self.cls_w, self.cls_b]

    def num_params(self, genotype: Genotype | None = None) -> int:
        head = self.cls_w.value.size + self.cls_b.value.size
        if genotype is None:
            return head + sum(p.value.size for p in self.op_weights.values())
        used = [(e, k) for e, k in enumerate(genotype.choices) if (e, k) in self.op_weights]
        return head + sum(self.op_weights[ek].value.size for ek in used)

    # graph builders

    def _op(self, g: Graph, x: int, edge: int, k: int, bound: dict) -> int:
        kind = self.space.ops[k]
        if kind is OpKind.ZERO:
            return g.zero(x)
        if kind is OpKind.SKIP:
            return g.identity(x)
        if kind is OpKind.MEAN_POOL:
            return g.mean_pool(x)
        key = (edge, k)
        if key not in bound:
            bound[key] = g.param(self.op_weights[key])
        y = g.matmul(x, bound[key])
        return g.relu(y) if kind is OpKind.LINEAR_RELU else y

    def mixed_edge(self, g: Graph, x: int, edge: int, beta_row: int, bound: dict) -> int:
        terms = [self._op(g, x, edge, k, bound) for k in range(self.space.num_ops)]
        return g.weighted_sum(beta_row, terms)

    def _cell(self, g: Graph, x: int, edge_out) -> int:
        nodes = [x]
        for j in range(1, self.space.num_nodes):
            acc = None
            for i in range(j):
                y = edge_out(nodes[i], self.space.edge_index(i, j))
                acc = y if acc is None else g.add(acc, y)
            nodes.append(acc)
        return nodes[-1]

    def _head(self, g: Graph, h: int) -> int:
        return g.add(g.matmul(h, g.param(self.cls_w)), g.param(self.cls_b))

    def build_logits(self, g: Graph, x: int, alpha: int) -> int:
        """Supernet logits node given an alpha node of shape [edges, ops]."""
        beta = g.softmax(alpha)
        bound: dict = {}
        rows = {}

        def edge_out(h, e):
            if e not in rows:
                rows[e] = g.row(beta, e)
            return self.mixed_edge(g, h, e, rows[e], bound)

        return self._head(g, self._cell(g, x, edge_out))

    def build_genotype_logits(self, g: Graph, x: int, genotype: Genotype) -> int:
        genotype.check(self.space)
        bound: dict = {}
        return self._head(g, self._cell(g, x, lambda h, e: self._op(g, h, e, genotype.choices[e], bound)))


def mixed_edge_forward(net: Supernet, x, edge: int, alpha_row) -> np.ndarray:
    x = as_array(x)
    if x.shape[-1] != net.space.width:
        raise SpaceError(f"input width {x.shape[-1]} != space width {net.space.width}")
    g = Graph()
    xn = g.constant(x if x.ndim == 2 else x[None, :])
    b = g.constant(beta_from_alpha(alpha_row))
    out = g.forward(root=net.mixed_edge(g, xn, edge, b, {}))
    return out if x.ndim == 2 else out[0]


def _check_batch(net: Supernet, batch) -> np.ndarray:
    batch = as_array(batch)
    if batch.ndim != 2 or batch.shape[1] != net.space.width:
        raise SpaceError(f"batch shape {batch.shape} does not match width {net.space.width}")
    return batch


def supernet_forward(net: Supernet, alpha, batch) -> np.ndarray:
    batch = _check_batch(net, batch)
    alpha = as_array(alpha)
    if alpha.shape != (net.space.num_edges, net.space.num_ops):
        raise SpaceError(f"alpha shape {alpha.shape} does not match space")
    g = Graph()
    root = net.build_logits(g, g.constant(batch), g.constant(alpha))
    return g.forward(root=root)


def genotype_forward(net: Supernet, genotype: Genotype, batch) -> np.ndarray:
    batch = _check_batch(net, batch)
    g = Graph()
    root = net.build_genotype_logits(g, g.constant(batch), genotype)
    return g.forward(root=root)
