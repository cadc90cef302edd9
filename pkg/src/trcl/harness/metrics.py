"""Evaluation traces, forgetting, and steps-to-reconverge."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Union


@dataclass(frozen=True)
class Record:
    step: int
    task_in_training: int
    per_task_eval: dict  # task_id -> eval loss on that task's held-out split


@dataclass
class MetricsLog:
    records: list = field(default_factory=list)
    # global step at which each task started training (first entry is 0)
    task_starts: list = field(default_factory=list)
    eval_interval: int = 1
    diverged: bool = False

    def append(self, rec: Record) -> None:
        if self.records and rec.step <= self.records[-1].step:
            raise ValueError("record steps must be strictly increasing")
        self.records.append(rec)

    def trained_tasks(self) -> list[int]:
        return sorted({r.task_in_training for r in self.records})

    def series(self, task_id: int) -> list[tuple[int, float]]:
        return [(r.step, r.per_task_eval[task_id]) for r in self.records if task_id in r.per_task_eval]


class Forgetting(NamedTuple):
    per_task: dict
    average: float  # over every task except the last one trained


def _best_while_training(log: MetricsLog, task_id: int) -> float:
    vals = [r.per_task_eval[task_id] for r in log.records if r.task_in_training == task_id]
    if not vals:
        raise ValueError(f"task {task_id} was never in training")
    return min(vals)


def compute_forgetting(log: MetricsLog) -> Forgetting:
    """Final eval loss minus the best eval loss recorded while each task was trained. Signed."""
    if not log.records:
        raise ValueError("empty log")
    final = log.records[-1].per_task_eval
    per_task = {t: final[t] - _best_while_training(log, t) for t in log.trained_tasks()}
    last = log.records[-1].task_in_training
    earlier = [v for t, v in per_task.items() if t != last]
    avg = sum(earlier) / len(earlier) if earlier else 0.0
    return Forgetting(per_task, avg)


def final_average_eval(log: MetricsLog) -> float:
    final = log.records[-1].per_task_eval
    return sum(final.values()) / len(final)


@dataclass(frozen=True)
class RelativeIncrease:
    """Lower-is-better target: ``loss <= (1 + tau) * baseline``."""

    tau: float

    def __post_init__(self):
        if not self.tau >= 0:
            raise ValueError("tau must be >= 0")

    def met(self, value: float, baseline: float) -> bool:
        return value <= (1.0 + self.tau) * baseline

    @property
    def label(self) -> str:
        return f"+{round(self.tau * 100)}%"


@dataclass(frozen=True)
class RelativeFraction:
    """Higher-is-better target on the score ``exp(-loss)``: ``score >= alpha * baseline score``."""

    alpha_frac: float

    def __post_init__(self):
        if not 0 < self.alpha_frac <= 1:
            raise ValueError("alpha_frac must lie in (0, 1]")

    def met(self, value: float, baseline: float) -> bool:
        # exp(-v) >= a * exp(-b)  <=>  v <= b - log(a)
        return value <= baseline - math.log(self.alpha_frac)

    @property
    def label(self) -> str:
        return f"{round(self.alpha_frac * 100)}%"


ThresholdSpec = Union[RelativeIncrease, RelativeFraction]
DEFAULT_THRESHOLDS = (
    RelativeIncrease(0.1),
    RelativeIncrease(0.2),
    RelativeIncrease(0.3),
    RelativeFraction(0.99),
    RelativeFraction(0.9),
    RelativeFraction(0.8),
)


def steps_to_reconverge(log: MetricsLog, task_id: int, transition_step: int, thr: ThresholdSpec) -> Optional[int]:
    """Steps after ``transition_step`` until ``task_id`` meets ``thr`` again.

    Only records up to the next task transition (or the end of the log) are
    scanned. ``None`` means the target was not reached in that window.
    """
    if transition_step not in log.task_starts[1:]:
        raise ValueError(f"{transition_step} is not a task transition in this log")
    baseline = _best_while_training(log, task_id)
    later = [s for s in log.task_starts if s > transition_step]
    end = later[0] if later else math.inf
    for r in log.records:
        if transition_step < r.step <= end and task_id in r.per_task_eval:
            if thr.met(r.per_task_eval[task_id], baseline):
                return r.step - transition_step
    return None
