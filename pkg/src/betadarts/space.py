"""Cell search space: edges, candidate operations and genotypes."""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

DEFAULT_ENUM_CAP = 4096


class SpaceError(ValueError):
    pass


class SpaceTooLarge(SpaceError):
    def __init__(self, size: int, cap: int):
        super().__init__(f"search space has {size:,} genotypes > cap {cap:,}")
        self.size = size
        self.cap = cap

    def __reduce__(self):
        return type(self), (self.size, self.cap)


class OpKind(enum.Enum):
    ZERO = "zero"
    SKIP = "skip"
    MEAN_POOL = "meanpool"
    LINEAR = "linear"
    LINEAR_RELU = "linrelu"

    @property
    def weighted(self) -> bool:
        return self in (OpKind.LINEAR, OpKind.LINEAR_RELU)

    @classmethod
    def parse(cls, tag: str) -> "OpKind":
        try:
            return cls(tag.strip().lower())
        except ValueError:
            raise SpaceError(f"unknown op {tag!r}; expected one of {[o.value for o in cls]}") from None


# NAS-Bench-201 style default: none / skip / pool / two parametric ops
DEFAULT_OPS = (OpKind.ZERO, OpKind.SKIP, OpKind.MEAN_POOL, OpKind.LINEAR, OpKind.LINEAR_RELU)


@dataclass(frozen=True)
class SpaceSpec:
    num_nodes: int
    edges: tuple[tuple[int, int], ...]
    ops: tuple[OpKind, ...]
    width: int

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def num_ops(self) -> int:
        return len(self.ops)

    @property
    def size(self) -> int:
        return self.num_ops ** self.num_edges

    def edge_index(self, i: int, j: int) -> int:
        return self.edges.index((i, j))

    def op_index(self, kind: OpKind) -> int | None:
        return self.ops.index(kind) if kind in self.ops else None

    def to_dict(self) -> dict:
        return {"num_nodes": self.num_nodes, "ops": [o.value for o in self.ops], "width": self.width}

    @classmethod
    def from_dict(cls, d: dict) -> "SpaceSpec":
        return build_space(d["num_nodes"], [OpKind.parse(o) for o in d["ops"]], d["width"])


def build_space(num_nodes: int, ops: Sequence[OpKind | str], width: int) -> SpaceSpec:
    ops = tuple(o if isinstance(o, OpKind) else OpKind.parse(o) for o in ops)
    if not 2 <= num_nodes <= 5:
        raise SpaceError(f"num_nodes must be in [2, 5], got {num_nodes}")
    if not 2 <= width <= 64:
        raise SpaceError(f"width must be in [2, 64], got {width}")
    if not ops:
        raise SpaceError("op set is empty")
    if len(set(ops)) != len(ops):
        raise SpaceError("op set has duplicates")
    edges = tuple((i, j) for i in range(num_nodes) for j in range(i + 1, num_nodes))
    return SpaceSpec(num_nodes, edges, ops, width)


@dataclass(frozen=True)
class Genotype:
    """One operation index per edge, plus the op set needed to name them."""

    choices: tuple[int, ...]
    ops: tuple[OpKind, ...]

    def __post_init__(self):
        object.__setattr__(self, "choices", tuple(int(c) for c in self.choices))
        for c in self.choices:
            if not 0 <= c < len(self.ops):
                raise SpaceError(f"choice {c} out of range for {len(self.ops)} ops")

    def __str__(self) -> str:
        return encode(self)

    def kinds(self) -> list[OpKind]:
        return [self.ops[c] for c in self.choices]

    def check(self, space: SpaceSpec) -> None:
        if self.ops != space.ops or len(self.choices) != space.num_edges:
            raise SpaceError(f"genotype {self} is not valid for this space")


def enumerate_genotypes(space: SpaceSpec, cap: int = DEFAULT_ENUM_CAP) -> Iterator[Genotype]:
    if space.size > cap:
        raise SpaceTooLarge(space.size, cap)
    for combo in itertools.product(range(space.num_ops), repeat=space.num_edges):
        yield Genotype(combo, space.ops)


def discretize(alpha: np.ndarray, space: SpaceSpec) -> Genotype:
    """Per-edge argmax of alpha; ties go to the lowest index."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (space.num_edges, space.num_ops):
        raise SpaceError(f"alpha shape {alpha.shape} != {(space.num_edges, space.num_ops)}")
    if np.isnan(alpha).any():
        raise SpaceError("alpha contains NaN")
    return Genotype(tuple(np.argmax(alpha, axis=1)), space.ops)


def encode(g: Genotype) -> str:
    return "|".join(g.ops[c].value for c in g.choices)


def decode(s: str, space: SpaceSpec) -> Genotype:
    tags = s.strip().split("|")
    if len(tags) != space.num_edges:
        raise SpaceError(f"expected {space.num_edges} ops, found {len(tags)} in {s!r}")
    choices = []
    pos = 0
    for tag in tags:
        if not tag:
            raise SpaceError(f"empty op at position {pos} in {s!r}")
        kind = OpKind.parse(tag)
        if kind not in space.ops:
            raise SpaceError(f"op {tag!r} at position {pos} not in this space")
        choices.append(space.ops.index(kind))
        pos += len(tag) + 1
    return Genotype(tuple(choices), space.ops)
