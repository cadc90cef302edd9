"""Trust-region continual update: current-task gradient + replay gradient + EWC pull."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import models
from .curvature import Curvature, DimensionError, RankOne, curvature_apply, quadratic_form
from .fisher import FisherMode, empirical_fisher
from .models import ModelSpec, TaskDataset


@dataclass(frozen=True, eq=False)
class TaskAnchor:
    task_id: int
    theta_star: np.ndarray
    fisher: Curvature

    def __post_init__(self):
        theta = np.array(self.theta_star, dtype=np.float64, copy=True)
        theta.setflags(write=False)
        if theta.shape != (self.fisher.dim,):
            raise DimensionError("anchor Fisher and theta_star dimensions differ")
        object.__setattr__(self, "theta_star", theta)

    @property
    def degenerate(self) -> bool:
        return isinstance(self.fisher, RankOne) and self.fisher.degenerate


@dataclass(frozen=True)
class ContinualConfig:
    lam: float = 1.0
    beta: float = 1.0
    eta: float = 1e-2
    fisher_mode: FisherMode = FisherMode.FULL
    trust_radius: Optional[float] = None
    steps_per_task: int = 500
    batch_size: int = 64

    def __post_init__(self):
        object.__setattr__(self, "fisher_mode", FisherMode(self.fisher_mode))
        if not self.lam >= 0:
            raise ValueError("lambda must be >= 0")
        if not self.beta >= 0:
            raise ValueError("beta must be >= 0")
        if not self.eta > 0:
            raise ValueError("eta must be > 0")
        if self.trust_radius is not None and not self.trust_radius > 0:
            raise ValueError("trust_radius must be > 0 when given")
        if self.steps_per_task < 1 or self.batch_size < 1:
            raise ValueError("steps_per_task and batch_size must be positive")


def _displacement(theta: np.ndarray, anchor: TaskAnchor) -> np.ndarray:
    if theta.shape != anchor.theta_star.shape:
        raise DimensionError(f"theta {theta.shape} vs anchor {anchor.theta_star.shape}")
    return theta - anchor.theta_star


def ewc_penalty(theta, anchors: Sequence[TaskAnchor], lam: float) -> float:
    """``(lam / 2) * sum_i (theta - theta_i)^T F_i (theta - theta_i)``."""
    theta = np.asarray(theta, dtype=np.float64)
    total = 0.0
    for a in anchors:
        total += quadratic_form(a.fisher, _displacement(theta, a))
    return 0.5 * lam * total


def ewc_grad_term(theta, anchors: Sequence[TaskAnchor], lam: float) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    out = np.zeros_like(theta)
    for a in anchors:
        out += curvature_apply(a.fisher, _displacement(theta, a))
    return lam * out


def replay_grad_term(spec: ModelSpec, theta, replay_batches, beta: float, rng_seed: int = 0) -> np.ndarray:
    """``beta * sum_i grad(L_i on replay batch i)``; ``replay_batches`` holds ``(task_id, batch)`` pairs."""
    theta = np.asarray(theta, dtype=np.float64)
    out = np.zeros_like(theta)
    for k, (_, batch) in enumerate(replay_batches):
        if len(batch) == 0:
            raise ValueError("replay batch is empty")
        out += models.grad(spec, theta, batch, rng_seed + 1 + k)
    return beta * out


class StepTerms(NamedTuple):
    current: np.ndarray  # current-task fit
    replay: np.ndarray  # old-task query gradient from replay
    ewc: np.ndarray  # old-task Fisher pull


def trust_region_terms(spec, theta, current_batch, replay_batches, anchors, config: ContinualConfig, rng_seed: int = 0) -> StepTerms:
    theta = np.asarray(theta, dtype=np.float64)
    if current_batch:
        a = models.grad(spec, theta, current_batch, rng_seed)
    else:
        a = np.zeros_like(theta)
    b = replay_grad_term(spec, theta, replay_batches, config.beta, rng_seed)
    c = ewc_grad_term(theta, anchors, config.lam)
    return StepTerms(a, b, c)


def trust_region_step(spec, theta, current_batch, replay_batches, anchors, config: ContinualConfig, rng_seed: int = 0) -> np.ndarray:
    """One update ``theta - eta * (A + B + C)``.

    An empty ``current_batch`` drops the current-task term, which leaves the
    old-task part of the update on its own.
    """
    a, b, c = trust_region_terms(spec, theta, current_batch, replay_batches, anchors, config, rng_seed)
    return np.asarray(theta, dtype=np.float64) - config.eta * ((a + b) + c)


def trust_region_feasible(theta, anchors: Sequence[TaskAnchor], delta: float) -> bool:
    if not delta > 0:
        raise ValueError("delta must be > 0")
    theta = np.asarray(theta, dtype=np.float64)
    return sum(quadratic_form(a.fisher, _displacement(theta, a)) for a in anchors) <= delta


def finalize_task(spec: ModelSpec, theta, data: TaskDataset, mode: FisherMode, rng_seed: int = 0) -> TaskAnchor:
    """Freeze ``theta`` and the empirical Fisher over ``data.train`` as the task's anchor."""
    fisher = empirical_fisher(spec, theta, data.train, mode, rng_seed)
    return TaskAnchor(data.task_id, np.array(theta, dtype=np.float64), fisher)
