"""Decay regularizers on architecture logits and their effect on beta.

Every family fits the update ``alpha' = alpha - eta*grad - eta*lam*F(alpha)``
for some mapping ``F``:

============  ==============================================
none          F = 0
l2            L2 gradient pushed through the adaptive step
weight_decay  F(alpha) = alpha
beta_decay    F(alpha) = softmax(alpha) per edge
beta_global   F(alpha) = softmax over the whole table
beta_zero     F(alpha) = sigmoid(alpha)
============  ==============================================

``predicted_beta_ratio`` evaluates the closed form of ``softmax(alpha')``
divided by the unregularized ``softmax(alpha - eta*grad)``;
``simulate_ratio`` takes the two steps literally and divides.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .autograd import Graph, as_array, sigmoid, softplus, stable_logsumexp, stable_softmax


class Family(enum.Enum):
    NONE = "none"
    L2 = "l2"
    WEIGHT_DECAY = "weight_decay"
    BETA_DECAY = "beta_decay"
    BETA_GLOBAL = "beta_global"
    BETA_ZERO = "beta_zero"

    @property
    def is_beta(self) -> bool:
        """Families whose penalty enters through a loss term on alpha."""
        return self in (Family.BETA_DECAY, Family.BETA_GLOBAL, Family.BETA_ZERO)

    @classmethod
    def parse(cls, name: str) -> "Family":
        aliases = {"nodecay": "none", "l2_adaptive": "l2", "wd": "weight_decay", "bd": "beta_decay"}
        key = name.strip().lower().replace("-", "_")
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValueError(f"unknown regularization family {name!r}") from None


def _finite(alpha) -> np.ndarray:
    alpha = as_array(alpha)
    if not np.all(np.isfinite(alpha)):
        raise ValueError("alpha has non-finite entries")
    return alpha


def beta_decay_loss(alpha) -> float:
    """Mean over edges of logsumexp of each alpha row."""
    alpha = _finite(alpha)
    return float(np.mean(stable_logsumexp(np.atleast_2d(alpha))))


def beta_global_loss(alpha) -> float:
    return float(stable_logsumexp(_finite(alpha).reshape(-1)))


def beta_zero_loss(alpha, printed: bool = False) -> float:
    """Mean softplus(alpha), i.e. smoothmax(0, alpha) per entry.

    ``printed=True`` selects ``-log(1 + exp(-alpha))`` instead, whose
    gradient sigmoid(-alpha) pushes in the opposite direction.
    """
    alpha = _finite(alpha)
    if printed:
        return float(np.mean(-softplus(-alpha)))
    return float(np.mean(softplus(alpha)))


def reg_loss_node(g: Graph, alpha: int, family: Family, printed_zero: bool = False) -> int | None:
    """Append the family's penalty on an alpha node; None for non-loss families."""
    if family is Family.BETA_DECAY:
        return g.mean(g.logsumexp(alpha))
    if family is Family.BETA_GLOBAL:
        # logsumexp of all entries == logsumexp of the per-row logsumexps
        return g.logsumexp(g.logsumexp(alpha))
    if family is Family.BETA_ZERO:
        if printed_zero:
            return g.scale(g.mean(g.softplus(g.scale(alpha, -1.0))), -1.0)
        return g.mean(g.softplus(alpha))
    return None


def decay_map(family: Family, alpha, printed_zero: bool = False) -> np.ndarray:
    """F(alpha) for the families with an explicit mapping."""
    alpha = as_array(alpha)
    if family is Family.NONE:
        return np.zeros_like(alpha)
    if family is Family.WEIGHT_DECAY:
        return alpha.copy()
    if family is Family.BETA_DECAY:
        return stable_softmax(alpha)
    if family is Family.BETA_GLOBAL:
        return stable_softmax(alpha.reshape(-1)).reshape(alpha.shape)
    if family is Family.BETA_ZERO:
        return sigmoid(-alpha) if printed_zero else sigmoid(alpha)
    raise ValueError(f"{family.value} has no closed-form mapping; use the adaptive step")


def adaptive_first_step(v, eta: float, eps: float = 1e-8) -> np.ndarray:
    """Displacement of a fresh bias-corrected Adam step on gradient ``v``.

    With zero moments the corrected first and second moments are ``v`` and
    ``v**2``, so the step is ``eta * v / (|v| + eps)`` regardless of betas.
    """
    v = as_array(v)
    return eta * v / (np.abs(v) + eps)


def _base_and_shift(alpha, grad, eta, lam, family, printed_zero, eps):
    alpha, grad = as_array(alpha), as_array(grad)
    if family is Family.L2:
        plain = adaptive_first_step(grad, eta, eps)
        return alpha - plain, adaptive_first_step(grad + lam * alpha, eta, eps) - plain
    return alpha - eta * grad, eta * lam * decay_map(family, alpha, printed_zero)


def predicted_beta_ratio(alpha, grad, eta: float, lam: float, family: Family,
                         printed_zero: bool = False, eps: float = 1e-8) -> np.ndarray:
    """Closed-form per-op ratio of regularized to unregularized beta.

    For each op k of a row::

        ratio_k = sum_k' exp(a_k') / sum_k' exp(s_k - s_k') exp(a_k')

    with ``a = alpha - eta*grad`` and ``s = eta*lam*F(alpha)``, evaluated in
    log space. Accepts a single row or an [edges, ops] table.
    """
    if eta <= 0 or lam < 0:
        raise ValueError("need eta > 0 and lam >= 0")
    base, shift = _base_and_shift(alpha, grad, eta, lam, family, printed_zero, eps)
    base2, shift2 = np.atleast_2d(base), np.atleast_2d(shift)
    # m[e, k, k'] = a[e, k'] + s[e, k] - s[e, k']
    m = base2[:, None, :] + shift2[:, :, None] - shift2[:, None, :]
    ratio = np.exp(stable_logsumexp(base2)[:, None] - stable_logsumexp(m))
    return ratio.reshape(np.shape(base))


def simulate_ratio(alpha, grad, eta: float, lam: float, family: Family,
                   printed_zero: bool = False, eps: float = 1e-8) -> np.ndarray:
    """Take the regularized and the plain step, divide the two softmaxes."""
    base, shift = _base_and_shift(alpha, grad, eta, lam, family, printed_zero, eps)
    return stable_softmax(base - shift) / stable_softmax(base)


@dataclass
class ThetaReport:
    theta: np.ndarray
    lam: float
    eta: float
    step: int = 0


def theta_factors(alpha, grad, eta: float, lam: float, step: int = 0) -> ThetaReport:
    """Per-op multiplicative effect of one Beta-Decay step on beta."""
    theta = predicted_beta_ratio(alpha, grad, eta, lam, Family.BETA_DECAY)
    return ThetaReport(np.atleast_2d(theta), lam, eta, step)
