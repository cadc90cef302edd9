"""Synthetic task streams with a heterogeneity knob."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from ..models import Family, ModelSpec, NoiseSchedule, Sample, TaskDataset

SINUSOID_X_RANGE = (-5.0, 5.0)


class StreamFamily(str, Enum):
    GAUSSIAN_SHIFT = "GaussianShift"
    SINUSOID_REGRESSION = "SinusoidRegression"
    MIXTURE_2D_DIFFUSION = "Mixture2DDiffusion"


@dataclass(frozen=True)
class TaskStreamSpec:
    family: StreamFamily
    n_tasks: int = 5
    heterogeneity: float = 4.0
    seed: int = 0
    samples_per_task: int = 2000
    eval_samples: int = 500
    dim: int = 0  # GaussianShift data dim; 0 means n_tasks

    def __post_init__(self):
        object.__setattr__(self, "family", StreamFamily(self.family))
        if self.n_tasks < 2:
            raise ValueError("a stream needs at least 2 tasks")
        if not self.heterogeneity >= 0:
            raise ValueError("heterogeneity must be >= 0")
        if self.samples_per_task < 1 or self.eval_samples < 1:
            raise ValueError("sample counts must be positive")
        if self.family is StreamFamily.GAUSSIAN_SHIFT and 0 < self.dim < self.n_tasks:
            raise ValueError("GaussianShift needs dim >= n_tasks")

    @property
    def data_dim(self) -> int:
        if self.family is StreamFamily.GAUSSIAN_SHIFT:
            return self.dim or self.n_tasks
        if self.family is StreamFamily.SINUSOID_REGRESSION:
            return 1
        return 2


def _rng(spec: TaskStreamSpec, *key: int) -> np.random.Generator:
    return np.random.default_rng([spec.seed, *key])


def gaussian_shift_means(spec: TaskStreamSpec) -> np.ndarray:
    """Task ``i`` has mean ``(h / sqrt 2) e_i``, so every pair of tasks is exactly ``h`` apart."""
    d = spec.data_dim
    means = np.zeros((spec.n_tasks, d))
    for i in range(spec.n_tasks):
        means[i, i] = spec.heterogeneity / math.sqrt(2.0)
    return means


def sinusoid_params(spec: TaskStreamSpec) -> list[tuple[float, float]]:
    """(amplitude, phase) per task: a shared base shifted by ``h`` times a task offset."""
    base = _rng(spec, 99)
    amp0, phase0 = base.uniform(1.0, 2.0), base.uniform(0.0, math.pi)
    out = []
    for i in range(spec.n_tasks):
        r = _rng(spec, 100, i)
        out.append((amp0 + 0.25 * spec.heterogeneity * r.uniform(0.0, 1.0),
                    phase0 + 0.25 * spec.heterogeneity * r.uniform(-1.0, 1.0)))
    return out


def mixture_centers(spec: TaskStreamSpec) -> np.ndarray:
    """Two-component mixtures; task ``i`` shifts both centers by ``h`` along its own direction."""
    base = np.array([[-1.0, 0.0], [1.0, 0.0]])
    out = []
    for i in range(spec.n_tasks):
        ang = 2.0 * math.pi * i / spec.n_tasks
        shift = 0.5 * spec.heterogeneity * np.array([math.cos(ang), math.sin(ang)])
        out.append(base + shift)
    return np.array(out)


MIXTURE_STD = 0.1


def sinusoid_target(amplitude: float, phase: float):
    def target(x: np.ndarray) -> np.ndarray:
        return amplitude * np.sin(np.asarray(x) + phase)

    return target


def uniform_inputs(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.uniform(*SINUSOID_X_RANGE, size=(n, 1))


def _draw(spec: TaskStreamSpec, task: int, n: int, split: int) -> list[Sample]:
    rng = _rng(spec, task, split)
    fam = spec.family
    if fam is StreamFamily.GAUSSIAN_SHIFT:
        mean = gaussian_shift_means(spec)[task]
        return [Sample(x) for x in mean + rng.standard_normal((n, spec.data_dim))]
    if fam is StreamFamily.SINUSOID_REGRESSION:
        amp, ph = sinusoid_params(spec)[task]
        xs = uniform_inputs(rng, n)
        ys = sinusoid_target(amp, ph)(xs)
        return [Sample(x, y) for x, y in zip(xs, ys)]
    centers = mixture_centers(spec)[task]
    comp = rng.integers(len(centers), size=n)
    xs = centers[comp] + MIXTURE_STD * rng.standard_normal((n, 2))
    return [Sample(x) for x in xs]


def _truth(spec: TaskStreamSpec, task: int) -> dict:
    if spec.family is StreamFamily.GAUSSIAN_SHIFT:
        return {"mean": gaussian_shift_means(spec)[task].tolist()}
    if spec.family is StreamFamily.SINUSOID_REGRESSION:
        amp, ph = sinusoid_params(spec)[task]
        return {"amplitude": amp, "phase": ph}
    return {"centers": mixture_centers(spec)[task].tolist(), "std": MIXTURE_STD}


def make_task_stream(spec: TaskStreamSpec) -> list[TaskDataset]:
    """Deterministic train/eval datasets; train and eval come from separate seeded draws."""
    return [
        TaskDataset(
            train=_draw(spec, i, spec.samples_per_task, 0),
            eval=_draw(spec, i, spec.eval_samples, 1),
            task_id=i,
            truth=_truth(spec, i),
        )
        for i in range(spec.n_tasks)
    ]


def default_model(spec: TaskStreamSpec) -> ModelSpec:
    if spec.family is StreamFamily.GAUSSIAN_SHIFT:
        return ModelSpec(Family.GAUSSIAN_MEAN, dim=spec.data_dim)
    if spec.family is StreamFamily.SINUSOID_REGRESSION:
        return ModelSpec(Family.MLP, layer_sizes=(1, 20, 20, 1))
    return ModelSpec(Family.TOY_DIFFUSION, layer_sizes=(6, 24, 24, 2), schedule=NoiseSchedule.linear(32))
