"""First-order bilevel search: one alpha step on validation, one w step on train."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from .analysis import StatsRecord, stats_record
from .autograd import Graph, NonFiniteError, Parameter
from .datasets import SyntheticDataset
from .regularize import Family, reg_loss_node
from .schedule import LambdaSchedule
from .space import Genotype, SpaceSpec, discretize, encode
from .supernet import Supernet, init_alpha

DIVERGENCE_LIMIT = 1e6

CSV_COLUMNS = ("epoch", "lambda", "train_loss", "val_loss", "reg_loss", "genotype", "alpha_mean",
               "alpha_median", "alpha_std", "beta_total_std", "lipschitz_sum", "phi")


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, batch: int, what: str, value: float):
        super().__init__(f"{what} diverged at epoch {epoch}, batch {batch} (value {value!r})")
        self.epoch = epoch
        self.batch = batch
        self._args = (epoch, batch, what, value)

    def __reduce__(self):
        return type(self), self._args


@dataclass
class SearchConfig:
    epochs: int = 50
    batch_size: int = 64
    alpha_lr: float = 3e-4
    # "adam" (the default) or "sgd", a plain gradient step
    alpha_optimizer: str = "adam"
    alpha_beta1: float = 0.5
    alpha_beta2: float = 0.999
    alpha_eps: float = 1e-8
    w_lr: float = 0.025
    w_momentum: float = 0.9
    reg: str = "none"
    # coefficient for the l2 / weight_decay families
    lam: float = 0.0
    # schedule for the beta-loss families
    schedule: str = "linear_up"
    lambda_start: float = 0.0
    lambda_end: float = 50.0
    printed_zero: bool = False
    seed: int = 0

    def __post_init__(self):
        self.family = Family.parse(self.reg)
        self.reg = self.family.value
        if self.alpha_optimizer not in ("adam", "sgd"):
            raise ValueError(f"alpha_optimizer must be 'adam' or 'sgd', got {self.alpha_optimizer!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        for name in ("alpha_lr", "w_lr", "alpha_eps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not (0 <= self.alpha_beta1 < 1 and 0 <= self.alpha_beta2 < 1 and 0 <= self.w_momentum < 1):
            raise ValueError("momentum coefficients must lie in [0, 1)")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        self.lambda_schedule  # validates

    @property
    def lambda_schedule(self) -> LambdaSchedule:
        return LambdaSchedule(self.schedule, self.lambda_start, self.lambda_end, self.epochs)

    def lambda_for(self, epoch: int) -> float:
        if self.family.is_beta:
            return self.lambda_schedule(epoch)
        if self.family in (Family.L2, Family.WEIGHT_DECAY):
            return self.lam
        return 0.0

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def like(cls, x: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(x), np.zeros_like(x))


def adaptive_alpha_step(alpha: np.ndarray, state: AdamState, grads: np.ndarray, eta: float,
                        beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8,
                        family: Family = Family.NONE, lam: float = 0.0) -> np.ndarray:
    """Adam step on alpha, updating ``state`` in place and returning new alpha.

    ``l2`` adds ``lam * alpha`` to the gradient before the moments;
    ``weight_decay`` subtracts ``eta * lam * alpha`` (pre-step alpha) after
    the adaptive update. Beta families arrive already inside ``grads``.
    """
    g = grads + lam * alpha if family is Family.L2 else grads
    state.t += 1
    state.m = beta1 * state.m + (1 - beta1) * g
    state.v = beta2 * state.v + (1 - beta2) * g * g
    m_hat = state.m / (1 - beta1 ** state.t)
    v_hat = state.v / (1 - beta2 ** state.t)
    new = alpha - eta * m_hat / (np.sqrt(v_hat) + eps)
    if family is Family.WEIGHT_DECAY:
        new = new - eta * lam * alpha
    return new


def plain_alpha_step(alpha: np.ndarray, grads: np.ndarray, eta: float, family: Family = Family.NONE,
                     lam: float = 0.0) -> np.ndarray:
    """Plain gradient step; the decay families act exactly as in the adaptive step."""
    g = grads + lam * alpha if family is Family.L2 else grads
    new = alpha - eta * g
    if family is Family.WEIGHT_DECAY:
        new = new - eta * lam * alpha
    return new


def momentum_w_step(params: Sequence[Parameter], velocity: list[np.ndarray], eta: float, mu: float) -> None:
    """Classical momentum: v <- mu*v + g; w <- w - eta*v (in place)."""
    for i, p in enumerate(params):
        velocity[i] = mu * velocity[i] + p.grad
        p.value = p.value - eta * velocity[i]


@dataclass
class EpochRecord:
    epoch: int
    lam: float
    train_loss: float
    val_loss: float
    reg_loss: float
    genotype: Genotype
    stats: StatsRecord

    def row(self) -> list:
        s = self.stats
        return [self.epoch, self.lam, self.train_loss, self.val_loss, self.reg_loss, encode(self.genotype),
                s.alpha_mean, s.alpha_median, s.alpha_std, s.beta_total_std, s.lipschitz_sum, s.phi]


@dataclass
class Trajectory:
    space: SpaceSpec
    config: SearchConfig
    initial_alpha: np.ndarray
    records: list[EpochRecord] = field(default_factory=list)
    alphas: list[np.ndarray] = field(default_factory=list)
    data_access: dict[str, dict[str, int]] = field(default_factory=dict)

    @property
    def final_alpha(self) -> np.ndarray:
        return self.alphas[-1] if self.alphas else self.initial_alpha

    @property
    def final_genotype(self) -> Genotype:
        return discretize(self.final_alpha, self.space)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for rec in self.records:
            w.writerow([repr(v) if isinstance(v, float) else v for v in rec.row()])
        return buf.getvalue()

    def alphas_jsonl(self) -> str:
        lines = [json.dumps({"epoch": 0, "alpha": self.initial_alpha.tolist()})]
        lines += [json.dumps({"epoch": r.epoch, "alpha": a.tolist()}) for r, a in zip(self.records, self.alphas)]
        return "\n".join(lines) + "\n"


def _batches(rng: np.random.Generator, idx: np.ndarray, size: int, count: int) -> list[np.ndarray]:
    perm = rng.permutation(idx)
    return [perm[i * size:(i + 1) * size] for i in range(count)]


def _check_loss(value: float, epoch: int, batch: int, what: str) -> None:
    if not np.isfinite(value) or abs(value) > DIVERGENCE_LIMIT:
        raise DivergenceError(epoch, batch, what, value)


def search(space: SpaceSpec, dataset: SyntheticDataset, config: SearchConfig,
           alpha0: np.ndarray | None = None) -> Trajectory:
    """Run the alternating alpha/w optimization and record every epoch."""
    if dataset.width != space.width:
        raise ValueError(f"dataset width {dataset.width} != space width {space.width}")
    init_seq, data_seq = np.random.SeedSequence(config.seed).spawn(2)
    net = Supernet(space, dataset.num_classes, np.random.default_rng(init_seq))
    data_rng = np.random.default_rng(data_seq)
    alpha = Parameter(init_alpha(space) if alpha0 is None else alpha0, "alpha")
    traj = Trajectory(space, config, alpha.value.copy(),
                      data_access={"alpha": {"search_val": 0}, "w": {"search_train": 0}})

    adam = AdamState.like(alpha.value)
    params = net.parameters()
    velocity = [np.zeros_like(p.value) for p in params]
    train_idx, val_idx = dataset.splits["search_train"], dataset.splits["search_val"]
    n_batches = max(1, -(-min(len(train_idx), len(val_idx)) // config.batch_size))
    family = config.family

    for epoch in range(1, config.epochs + 1):
        lam = config.lambda_for(epoch)
        t_batches = _batches(data_rng, train_idx, config.batch_size, n_batches)
        v_batches = _batches(data_rng, val_idx, config.batch_size, n_batches)
        sums = np.zeros(3)
        for b, (tb, vb) in enumerate(zip(t_batches, v_batches), start=1):
            # alpha step on the validation half
            g = Graph()
            a = g.param(alpha)
            val_loss = g.cross_entropy(net.build_logits(g, g.constant(dataset.features[vb]), a), dataset.labels[vb])
            reg = reg_loss_node(g, a, family, config.printed_zero) if family.is_beta else None
            root = g.add(val_loss, g.scale(reg, lam)) if reg is not None else val_loss
            try:
                g.forward(root=root)
            except NonFiniteError:
                raise DivergenceError(epoch, b, "validation loss", float("nan")) from None
            _check_loss(float(g.value(root)), epoch, b, "validation loss")
            alpha.zero_grad()
            g.backward(root)
            traj.data_access["alpha"]["search_val"] += len(vb)
            if config.alpha_optimizer == "sgd":
                alpha.value = plain_alpha_step(alpha.value, alpha.grad, config.alpha_lr, family, lam)
            else:
                alpha.value = adaptive_alpha_step(alpha.value, adam, alpha.grad, config.alpha_lr, config.alpha_beta1,
                                                  config.alpha_beta2, config.alpha_eps, family, lam)
            sums[1] += float(g.value(val_loss))
            sums[2] += lam * float(g.value(reg)) if reg is not None else 0.0

            # w step on the training half
            g = Graph()
            loss = g.cross_entropy(net.build_logits(g, g.constant(dataset.features[tb]), g.constant(alpha.value)),
                                   dataset.labels[tb])
            try:
                g.forward(root=loss)
            except NonFiniteError:
                raise DivergenceError(epoch, b, "training loss", float("nan")) from None
            _check_loss(float(g.value(loss)), epoch, b, "training loss")
            for p in params:
                p.zero_grad()
            g.backward(loss)
            traj.data_access["w"]["search_train"] += len(tb)
            momentum_w_step(params, velocity, config.w_lr, config.w_momentum)
            sums[0] += float(g.value(loss))

        if not np.all(np.isfinite(alpha.value)):
            raise DivergenceError(epoch, n_batches, "alpha", float("nan"))
        snapshot = alpha.value.copy()
        means = sums / n_batches
        traj.alphas.append(snapshot)
        traj.records.append(EpochRecord(epoch, float(lam), float(means[0]), float(means[1]), float(means[2]),
                                        discretize(snapshot, space), stats_record(snapshot, space)))
    return traj
