"""Empirical Fisher estimation and the Fisher = expected-Hessian check."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import models
from .curvature import MAX_FULL_DIM, Curvature, Diagonal, Full, RankOne
from .models import Family, ModelSpec

DEGENERATE_GRAD_NORM = 1e-12


class FisherMode(str, Enum):
    FULL = "Full"
    DIAGONAL = "Diagonal"
    RANK_ONE = "RankOne"


def _outer_sums(g: np.ndarray, full: bool):
    # fixed sequential reduction so Full and Diagonal agree bit-for-bit
    p = g.shape[1]
    diag = np.zeros(p)
    mat = np.zeros((p, p)) if full else None
    for row in g:
        diag += row * row
        if full:
            mat += np.outer(row, row)
    return mat, diag


def fisher_from_grads(g: np.ndarray, mode: FisherMode) -> Curvature:
    """Build a curvature estimate from stacked per-sample gradients ``g`` (N, P)."""
    mode = FisherMode(mode)
    n, p = g.shape
    if n == 0:
        raise ValueError("need at least one per-sample gradient")
    if mode is FisherMode.FULL:
        if p > MAX_FULL_DIM:
            raise ValueError(f"Full Fisher capped at {MAX_FULL_DIM} params, got {p}")
        mat, _ = _outer_sums(g, full=True)
        return Full(mat / n)
    if mode is FisherMode.DIAGONAL:
        _, diag = _outer_sums(g, full=False)
        return Diagonal(diag / n)

    mean = g.mean(axis=0)
    norm = float(np.linalg.norm(mean))
    if norm < DEGENERATE_GRAD_NORM:
        e1 = np.zeros(p)
        e1[0] = 1.0
        return RankOne(0.0, e1, degenerate=True)
    u = mean / norm
    u = u / np.linalg.norm(u)
    proj = g @ u
    return RankOne(float(np.mean(proj * proj)), u)


def empirical_fisher(spec: ModelSpec, params, data, mode: FisherMode, rng_seed: int = 0) -> Curvature:
    """Empirical Fisher ``(1/N) sum g_i g_i^T`` over the data's per-sample gradients.

    Rank-1 mode uses the mean-gradient direction ``u`` and
    ``rho = (1/N) sum (g_i . u)^2``; a vanishing mean gradient yields a flagged
    ``RankOne(0, e1)``.
    """
    if len(data) == 0:
        raise ValueError("data is empty")
    return fisher_from_grads(models.per_sample_grads(spec, params, data, rng_seed), mode)


def gradient_collinearity(g: np.ndarray) -> float:
    """Mean pairwise cosine similarity between per-sample gradients."""
    norms = np.linalg.norm(g, axis=1)
    keep = norms > 0
    if keep.sum() < 2:
        return 1.0
    unit = g[keep] / norms[keep, None]
    cos = unit @ unit.T
    m = cos.shape[0]
    return float((cos.sum() - m) / (m * (m - 1)))


@dataclass(frozen=True)
class FisherHessianReport:
    frobenius_rel_err: float
    n: int
    fisher: np.ndarray
    expected_hessian: np.ndarray


EXACT_SAMPLING_FAMILIES = (Family.GAUSSIAN_MEAN, Family.CATEGORICAL)


def fisher_hessian_check(spec: ModelSpec, params, n_model_samples: int, rng_seed: int = 0) -> FisherHessianReport:
    """Compare ``E[g g^T]`` with ``E[Hessian of NLL]`` under ``x ~ p_theta``.

    Samples come from the model itself, not a dataset: the identity only holds
    under model sampling.
    """
    if spec.family not in EXACT_SAMPLING_FAMILIES:
        raise ValueError(f"{spec.family.value} has no exact sampler with per-sample NLL Hessian")
    if spec.family is Family.CATEGORICAL and spec.dim > 4:
        raise ValueError("categorical check limited to <= 4 classes")
    if n_model_samples < 1:
        raise ValueError("n_model_samples must be positive")
    xs = models.sample_from_model(spec, params, n_model_samples, rng_seed)
    g = models.per_sample_grads(spec, params, xs)
    fisher = g.T @ g / n_model_samples
    # both exact-Hessian families have a per-sample Hessian independent of x
    h = models.hessian(spec, params, xs)
    err = np.linalg.norm(fisher - h) / np.linalg.norm(fisher)
    return FisherHessianReport(float(err), n_model_samples, fisher, h)
