"""Replay sources: stored-sample reservoirs and frozen generative snapshots."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from . import models
from .models import Family, ModelSpec, Sample


class ReplayBuffer:
    """Per-task reservoirs of stored samples, at most ``capacity_per_task`` each."""

    def __init__(self, capacity_per_task: int):
        if capacity_per_task < 1:
            raise ValueError("capacity_per_task must be positive")
        self.capacity_per_task = capacity_per_task
        self.per_task: dict[int, tuple] = {}

    def store(self, task_id: int, samples, rng_seed: int = 0) -> "ReplayBuffer":
        """Reservoir-sample ``samples`` into the task's slot, replacing any previous contents."""
        rng = np.random.default_rng([rng_seed, task_id])
        cap = self.capacity_per_task
        kept: list = []
        for i, s in enumerate(samples):
            if i < cap:
                kept.append(s)
            else:
                j = int(rng.integers(i + 1))
                if j < cap:
                    kept[j] = s
        self.per_task[task_id] = tuple(kept)
        return self

    def samples(self, task_id: int) -> tuple:
        try:
            return self.per_task[task_id]
        except KeyError:
            raise KeyError(f"task {task_id} not in replay buffer") from None

    def __contains__(self, task_id: int) -> bool:
        return task_id in self.per_task


@dataclass(frozen=True, eq=False)
class Snapshot:
    spec: ModelSpec
    params: np.ndarray
    # Mlp tasks: inputs are regenerated and labelled with the task's target function
    input_sampler: Optional[Callable[[np.random.Generator, int], np.ndarray]] = None
    target_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None


class GenerativeReplaySource:
    def __init__(self):
        self.per_task: dict[int, Snapshot] = {}

    def snapshot_generator(self, task_id: int, spec: ModelSpec, params, input_sampler=None, target_fn=None) -> "GenerativeReplaySource":
        if task_id in self.per_task:
            raise ValueError(f"task {task_id} already has a generator snapshot")
        if spec.family is Family.MLP and (input_sampler is None or target_fn is None):
            raise ValueError("Mlp snapshots need an input sampler and a target function")
        if spec.family not in (Family.MLP, Family.GAUSSIAN_MEAN, Family.TOY_DIFFUSION, Family.CATEGORICAL):
            raise ValueError(f"cannot generate from {spec.family.value}")
        frozen = np.array(params, dtype=np.float64, copy=True)
        frozen.setflags(write=False)
        self.per_task[task_id] = Snapshot(spec, frozen, input_sampler, target_fn)
        return self

    def __contains__(self, task_id: int) -> bool:
        return task_id in self.per_task


ReplaySource = Union[ReplayBuffer, GenerativeReplaySource]


def sample_replay_batch(source: ReplaySource, task_id: int, n: int, rng_seed: int) -> list:
    """Draw ``n`` replay samples for ``task_id`` (uniform with replacement from a buffer)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if isinstance(source, ReplayBuffer):
        stored = source.samples(task_id)
        idx = np.random.default_rng(rng_seed).integers(len(stored), size=n)
        return [stored[i] for i in idx]

    if task_id not in source.per_task:
        raise KeyError(f"task {task_id} has no generator snapshot")
    snap = source.per_task[task_id]
    if snap.spec.family is Family.MLP:
        rng = np.random.default_rng(rng_seed)
        xs = np.atleast_2d(snap.input_sampler(rng, n))
        ys = snap.target_fn(xs)
        return [Sample(x, y) for x, y in zip(xs, np.atleast_2d(ys))]
    return models.sample_from_model(snap.spec, snap.params, n, rng_seed)


def store(buffer: ReplayBuffer, task_id: int, samples, rng_seed: int = 0) -> ReplayBuffer:
    return buffer.store(task_id, samples, rng_seed)


def snapshot_generator(source: GenerativeReplaySource, task_id: int, spec: ModelSpec, params, **kwargs) -> GenerativeReplaySource:
    return source.snapshot_generator(task_id, spec, params, **kwargs)
