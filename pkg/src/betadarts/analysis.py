"""Diagnostics over alpha snapshots: alpha/beta statistics, ||beta||, phi."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autograd import as_array, stable_softmax
from .regularize import ThetaReport
from .space import OpKind, SpaceSpec


@dataclass
class StatsRecord:
    alpha_mean: float
    alpha_median: float
    alpha_std: float
    beta_row_stds: list[float]
    beta_total_std: float
    lipschitz_per_edge: list[float]
    phi: float

    @property
    def lipschitz_sum(self) -> float:
        return float(sum(self.lipschitz_per_edge))


def alpha_stats(alpha) -> tuple[float, float, float]:
    """Mean, lower median and population std pooled over every entry."""
    flat = np.sort(as_array(alpha).reshape(-1))
    if flat.size == 0:
        raise ValueError("empty alpha table")
    median = flat[(flat.size - 1) // 2]
    return float(flat.mean()), float(median), float(flat.std())


def beta_stats(alpha) -> tuple[list[float], float]:
    """Per-edge population std of the beta rows and their sum."""
    beta = stable_softmax(np.atleast_2d(as_array(alpha)))
    stds = beta.std(axis=1)
    return [float(s) for s in stds], float(stds.sum())


def lipschitz_measure(beta_row) -> float:
    return float(np.sqrt(np.sum(as_array(beta_row) ** 2)))


def default_conv_skip(space: SpaceSpec) -> tuple[int | None, int | None]:
    conv = next((k for k, o in enumerate(space.ops) if o.weighted), None)
    return conv, space.op_index(OpKind.SKIP)


def convergence_phi(beta, space: SpaceSpec, conv_index: int, skip_index: int,
                    chain: Sequence[int] | None = None, theta: ThetaReport | None = None) -> float:
    """Sum over i < h-1 of conv(i, h-1)^2 times prod over t < i of skip(t, i)^2.

    ``chain`` lists the h node ids in order (all nodes by default). With a
    ``theta`` report each beta factor is first multiplied by its edge's theta.
    """
    beta = as_array(beta)
    if theta is not None:
        if theta.theta.shape != beta.shape:
            raise ValueError("theta shape does not match beta")
        beta = beta * theta.theta
    chain = list(range(space.num_nodes)) if chain is None else list(chain)
    for k in (conv_index, skip_index):
        if not 0 <= k < space.num_ops:
            raise ValueError(f"op index {k} outside the op set")

    def edge(i, j):
        try:
            return space.edge_index(chain[i], chain[j])
        except ValueError:
            raise ValueError(f"edge ({chain[i]}, {chain[j]}) not in space") from None

    h = len(chain)
    phi = 0.0
    for i in range(h - 1):
        term = beta[edge(i, h - 1), conv_index] ** 2
        for t in range(i):
            term *= beta[edge(t, i), skip_index] ** 2
        phi += term
    return float(phi)


def stats_record(alpha, space: SpaceSpec) -> StatsRecord:
    alpha = as_array(alpha)
    beta = stable_softmax(alpha)
    mean, median, std = alpha_stats(alpha)
    row_stds, total = beta_stats(alpha)
    conv, skip = default_conv_skip(space)
    phi = convergence_phi(beta, space, conv, skip) if conv is not None and skip is not None else float("nan")
    return StatsRecord(mean, median, std, row_stds, total, [lipschitz_measure(r) for r in beta], phi)
