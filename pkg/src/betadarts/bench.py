"""Brute-force tabular benchmark: train every genotype, then look results up.

File layout (one JSON object per line)::

    {"header": {"space": ..., "dataset": ..., "trainer": ..., "seeds": [...]}}
    {"genotype": "skip|zero|linrelu", "val_acc_mean": 0.81, "val_acc_std": 0.01,
     "test_acc_mean": 0.8, "test_acc_std": 0.02, "params": 90, "flagged": false}
    ...

Entries are sorted by genotype string so the bytes depend only on the header.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .autograd import Graph, NonFiniteError
from .datasets import SyntheticDataset, dataset_from_spec
from .search import Trajectory
from .space import DEFAULT_ENUM_CAP, Genotype, SpaceSpec, decode, encode, enumerate_genotypes
from .supernet import Supernet, genotype_forward

DECIMALS = 6


class UnknownGenotype(KeyError):
    pass


@dataclass(frozen=True)
class TrainerConfig:
    epochs: int = 200
    lr: float = 0.1
    momentum: float = 0.9
    milestones: tuple[int, ...] = (100, 150)
    gamma: float = 0.5

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.gamma ** sum(epoch >= m for m in self.milestones)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["milestones"] = list(self.milestones)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainerConfig":
        return cls(**{**d, "milestones": tuple(d.get("milestones", (100, 150)))})


@dataclass(frozen=True)
class Entry:
    genotype: str
    val_acc_mean: float
    val_acc_std: float
    test_acc_mean: float
    test_acc_std: float
    params: int
    flagged: bool = False


@dataclass
class BenchmarkTable:
    space: SpaceSpec
    header: dict
    entries: dict[str, Entry]

    def __len__(self) -> int:
        return len(self.entries)

    def query(self, genotype: Genotype | str) -> Entry:
        key = genotype if isinstance(genotype, str) else encode(genotype)
        try:
            return self.entries[key]
        except KeyError:
            raise UnknownGenotype(f"genotype {key!r} not in benchmark") from None

    def best(self, metric: str = "test_acc_mean") -> Entry:
        """Highest ``metric``; ties go to the lexicographically smallest genotype string."""
        top = max(getattr(e, metric) for e in self.entries.values())
        return self.entries[min(k for k, e in self.entries.items() if getattr(e, metric) == top)]

    def dumps(self) -> str:
        lines = [json.dumps({"header": self.header}, sort_keys=True)]
        lines += [json.dumps(asdict(self.entries[k])) for k in sorted(self.entries)]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())


def load_table(path) -> BenchmarkTable:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty benchmark file")
    try:
        header = json.loads(lines[0])["header"]
    except (json.JSONDecodeError, KeyError, TypeError):
        raise ValueError(f"{path}:1: missing header record") from None
    space = SpaceSpec.from_dict(header["space"])
    entries = {}
    for n, line in enumerate(lines[1:], start=2):
        try:
            e = Entry(**json.loads(line))
            decode(e.genotype, space)
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}:{n}: bad entry ({exc})") from None
        entries[e.genotype] = e
    return BenchmarkTable(space, header, entries)


def _accuracy(net: Supernet, genotype: Genotype, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.argmax(genotype_forward(net, genotype, x), axis=1) == y))


def train_genotype(space: SpaceSpec, genotype: Genotype, dataset: SyntheticDataset, trainer: TrainerConfig,
                   seed: int) -> tuple[float, float, int, bool]:
    """Full-batch momentum training from scratch; returns (val, test, params, flagged).

    Initialization is seeded by (seed, genotype choices), so a result never
    depends on which other genotypes were trained before it.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, *genotype.choices]))
    net = Supernet(space, dataset.num_classes, rng)
    params = net.parameters()
    velocity = [np.zeros_like(p.value) for p in params]
    x, y = dataset.subset("eval_train")
    flagged = False
    for epoch in range(trainer.epochs):
        g = Graph()
        loss = g.cross_entropy(net.build_genotype_logits(g, g.constant(x), genotype), y)
        try:
            g.forward(root=loss)
        except NonFiniteError:
            flagged = True
            break
        for p in params:
            p.zero_grad()
        g.backward(loss)
        lr = trainer.lr_at(epoch)
        for i, p in enumerate(params):
            velocity[i] = trainer.momentum * velocity[i] + p.grad
            p.value = p.value - lr * velocity[i]
    if flagged or not all(np.all(np.isfinite(p.value)) for p in params):
        return 0.0, 0.0, net.num_params(genotype), True
    val = _accuracy(net, genotype, *dataset.subset("search_val"))
    test = _accuracy(net, genotype, *dataset.subset("eval_test"))
    return val, test, net.num_params(genotype), False


def _entry_job(args) -> Entry:
    space, genotype, dataset, trainer, seeds = args
    runs = [train_genotype(space, genotype, dataset, trainer, s) for s in seeds]
    val = np.array([r[0] for r in runs])
    test = np.array([r[1] for r in runs])
    return Entry(encode(genotype), round(float(val.mean()), DECIMALS), round(float(val.std()), DECIMALS),
                 round(float(test.mean()), DECIMALS), round(float(test.std()), DECIMALS), runs[0][2],
                 any(r[3] for r in runs))


def generate_benchmark(space: SpaceSpec, dataset: SyntheticDataset, trainer: TrainerConfig | None = None,
                       seeds: Sequence[int] = (0,), cap: int = DEFAULT_ENUM_CAP, jobs: int = 1) -> BenchmarkTable:
    trainer = trainer or TrainerConfig()
    if not seeds:
        raise ValueError("need at least one seed")
    genotypes = list(enumerate_genotypes(space, cap))
    tasks = [(space, gt, dataset, trainer, tuple(seeds)) for gt in genotypes]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_entry_job, tasks, chunksize=4))
    else:
        results = [_entry_job(t) for t in tasks]
    header = {"space": space.to_dict(), "dataset": dataset.spec, "trainer": trainer.to_dict(),
              "seeds": list(seeds)}
    return BenchmarkTable(space, header, {e.genotype: e for e in results})


def table_dataset(table: BenchmarkTable) -> SyntheticDataset:
    return dataset_from_spec(table.header["dataset"])


@dataclass
class TrajectoryEval:
    epochs: list[int]
    genotypes: list[str]
    val_acc: list[float]
    test_acc: list[float]
    regret: list[float]
    best_test_acc: float

    @property
    def first_optimum_epoch(self) -> int:
        """First epoch at which regret reaches its minimum over the run."""
        low = min(self.regret)
        return self.epochs[self.regret.index(low)]

    @property
    def final(self) -> dict:
        return {"genotype": self.genotypes[-1], "val_acc": self.val_acc[-1], "test_acc": self.test_acc[-1],
                "regret": self.regret[-1]}


def trajectory_eval(table: BenchmarkTable, trajectory: Trajectory | Iterable[tuple[int, str]]) -> TrajectoryEval:
    """Ground-truth metrics and regret for every epoch's genotype.

    ``trajectory`` is a :class:`Trajectory` or ``(epoch, genotype_string)`` pairs.
    """
    if isinstance(trajectory, Trajectory):
        pairs = [(r.epoch, encode(r.genotype)) for r in trajectory.records]
    else:
        pairs = list(trajectory)
    best = table.best().test_acc_mean
    out = TrajectoryEval([], [], [], [], [], best)
    for epoch, gstr in pairs:
        try:
            e = table.query(gstr)
        except UnknownGenotype:
            raise UnknownGenotype(f"epoch {epoch}: genotype {gstr!r} not in benchmark") from None
        out.epochs.append(epoch)
        out.genotypes.append(gstr)
        out.val_acc.append(e.val_acc_mean)
        out.test_acc.append(e.test_acc_mean)
        out.regret.append(round(best - e.test_acc_mean, DECIMALS))
    return out
