"""One-step MAML (exact and first-order), an FTML-style online baseline, and the
term-by-term comparison between the MAML outer update and the trust-region update.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from . import models
from .continual import TaskAnchor
from .curvature import MAX_FULL_DIM, curvature_apply
from .models import ModelSpec, Sample


@dataclass(frozen=True)
class MetaConfig:
    alpha: float = 1e-2
    eta: float = 1e-2
    inner_steps: int = 1
    first_order: bool = True

    def __post_init__(self):
        # alpha = 0 is allowed: it is the no-adaptation limit
        if not self.alpha >= 0 or not self.eta > 0:
            raise ValueError("alpha must be >= 0 and eta > 0")
        if self.inner_steps != 1:
            raise ValueError("only a single inner step is supported")


@dataclass(frozen=True, eq=False)
class SupportQuery:
    support: list
    query: list

    def __post_init__(self):
        if not self.support or not self.query:
            raise ValueError("support and query must both be nonempty")


def split_support_query(batch: Sequence[Sample], rng_seed: int) -> SupportQuery:
    """Shuffle and halve a batch; an odd extra sample goes to the support set."""
    if len(batch) < 2:
        raise ValueError("need at least two samples to split")
    order = np.random.default_rng(rng_seed).permutation(len(batch))
    k = (len(batch) + 1) // 2
    return SupportQuery([batch[i] for i in order[:k]], [batch[i] for i in order[k:]])


def _seeds(rng_seed: int) -> tuple[int, int]:
    # support and query losses get distinct, fixed noise draws
    return rng_seed, rng_seed + 1


def maml_inner_step(spec: ModelSpec, theta, support, alpha: float, rng_seed: int = 0) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if not support:
        raise ValueError("support set is empty")
    return theta - alpha * models.grad(spec, theta, support, rng_seed)


class MamlUpdate(NamedTuple):
    params: np.ndarray
    query_grad: np.ndarray  # term (I): query gradient at the adapted params
    curvature_correction: np.ndarray  # term (II): H_support @ term (I); zero for first-order


def maml_outer_update_exact(spec, theta, sq: SupportQuery, cfg: MetaConfig, rng_seed: int = 0) -> MamlUpdate:
    """``theta - eta * (I - alpha H_support(theta)) grad L(theta'; query)`` with an explicit Hessian."""
    theta = np.asarray(theta, dtype=np.float64)
    if spec.n_params > MAX_FULL_DIM:
        raise ValueError(f"exact MAML needs an explicit Hessian; capped at {MAX_FULL_DIM} params")
    s_seed, q_seed = _seeds(rng_seed)
    adapted = maml_inner_step(spec, theta, sq.support, cfg.alpha, s_seed)
    term_i = models.grad(spec, adapted, sq.query, q_seed)
    h_support = models.hessian(spec, theta, sq.support, s_seed)
    term_ii = h_support @ term_i
    return MamlUpdate(theta - cfg.eta * (term_i - cfg.alpha * term_ii), term_i, term_ii)


def maml_outer_update_first_order(spec, theta, sq: SupportQuery, cfg: MetaConfig, rng_seed: int = 0) -> MamlUpdate:
    theta = np.asarray(theta, dtype=np.float64)
    s_seed, q_seed = _seeds(rng_seed)
    adapted = maml_inner_step(spec, theta, sq.support, cfg.alpha, s_seed)
    term_i = models.grad(spec, adapted, sq.query, q_seed)
    return MamlUpdate(theta - cfg.eta * term_i, term_i, np.zeros_like(term_i))


def maml_outer_update(spec, theta, sq, cfg: MetaConfig, rng_seed: int = 0) -> MamlUpdate:
    if cfg.first_order:
        return maml_outer_update_first_order(spec, theta, sq, cfg, rng_seed)
    return maml_outer_update_exact(spec, theta, sq, cfg, rng_seed)


@dataclass(frozen=True)
class TaskHandle:
    """A task the online learner can draw a batch from; ``draw(seed)`` may return an empty list."""

    task_id: int
    draw: Callable[[int], list]


class FtmlStep(NamedTuple):
    params: np.ndarray
    task_id: int


def ftml_step(spec, theta, seen_tasks: Sequence[TaskHandle], current_task: TaskHandle, cfg: MetaConfig, rng_seed: int = 0) -> FtmlStep:
    """Pick a task uniformly from seen + current, split its batch, apply one outer update.

    A task that yields no data is dropped and another one is drawn.
    """
    candidates = list(seen_tasks) + [current_task]
    rng = np.random.default_rng([rng_seed, 0x7A5C])
    while candidates:
        handle = candidates.pop(int(rng.integers(len(candidates))))
        batch = handle.draw(int(rng.integers(2**63)))
        if batch:
            sq = split_support_query(batch, int(rng.integers(2**63)))
            upd = maml_outer_update(spec, theta, sq, cfg, rng_seed)
            return FtmlStep(upd.params, handle.task_id)
    raise RuntimeError("no task produced data for the meta update")


class EquivalenceGap(NamedTuple):
    gap_I_B: float
    gap_II_C: float
    delta_norm: float
    query_grad_norm: float


def equivalence_gap(spec, theta, anchor: TaskAnchor, replay_batch, sq: SupportQuery, cfg: MetaConfig, lam: float, rng_seed: int = 0) -> EquivalenceGap:
    """How far the MAML outer-update terms are from their trust-region counterparts.

    ``gap_I_B`` compares the query gradient at the adapted params with the replay
    gradient at ``theta``. ``gap_II_C`` compares the curvature correction
    ``alpha * H_support(theta) @ grad L(theta; query)`` (query gradient taken at
    ``theta``, after the first substitution) with the EWC pull
    ``lam * F (theta - theta*)``. Both are divided by the query-gradient norm at
    the adapted params.
    """
    theta = np.asarray(theta, dtype=np.float64)
    s_seed, q_seed = _seeds(rng_seed)
    adapted = maml_inner_step(spec, theta, sq.support, cfg.alpha, s_seed)
    term_i = models.grad(spec, adapted, sq.query, q_seed)
    scale = max(float(np.linalg.norm(term_i)), 1e-12)

    replay = models.grad(spec, theta, replay_batch, q_seed)
    gap_ib = float(np.linalg.norm(term_i - replay)) / scale

    h_support = models.hessian(spec, theta, sq.support, s_seed)
    term_ii = cfg.alpha * (h_support @ models.grad(spec, theta, sq.query, q_seed))
    delta = theta - anchor.theta_star
    term_c = lam * curvature_apply(anchor.fisher, delta)
    gap_iic = float(np.linalg.norm(term_ii - term_c)) / scale
    return EquivalenceGap(gap_ib, gap_iic, float(np.linalg.norm(delta)), scale)
