"""Per-epoch regularization coefficient schedules."""

from __future__ import annotations

from dataclasses import dataclass

KINDS = ("linear_up", "constant", "linear_down")

# max weight used when nothing else is configured, per benchmark analog
DEFAULT_LAMBDA_END = {"bench201": 50.0, "cifar10": 0.5, "cifar100": 5.0}


@dataclass(frozen=True)
class LambdaSchedule:
    """``constant`` uses ``end`` as its value."""

    kind: str
    start: float
    end: float
    epochs: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown schedule {self.kind!r}; expected one of {KINDS}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.start < 0 or self.end < 0:
            raise ValueError("lambda values must be non-negative")
        if self.kind == "linear_up" and self.end < self.start:
            raise ValueError("linear_up needs end >= start")
        if self.kind == "linear_down" and self.start < self.end:
            raise ValueError("linear_down needs start >= end")

    def __call__(self, epoch: int) -> float:
        return lambda_at(self, epoch)


def lambda_at(s: LambdaSchedule, epoch: int) -> float:
    if not 1 <= epoch <= s.epochs:
        raise ValueError(f"epoch {epoch} outside [1, {s.epochs}]")
    if s.kind == "constant":
        return s.end
    if s.epochs == 1:
        return s.end if s.kind == "linear_up" else s.start
    if epoch == 1:
        return s.start
    if epoch == s.epochs:
        return s.end
    return s.start + (s.end - s.start) * (epoch - 1) / (s.epochs - 1)
