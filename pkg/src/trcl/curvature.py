"""Curvature representations (full, diagonal, rank-1) and their algebra.

All three representations describe a symmetric PSD operator on parameter
space. They are immutable; arrays are copied on construction and marked
read-only.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np

MAX_FULL_DIM = 512
SYMMETRY_WARN_TOL = 1e-8
UNIT_NORM_TOL = 1e-10


class DimensionError(ValueError):
    """Raised when vector/operator dimensions disagree."""


def as_vector(x, name: str = "vector") -> np.ndarray:
    """Return a read-only float64 copy of ``x`` after checking it is finite 1-D."""
    v = np.array(x, dtype=np.float64, copy=True)
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite entries")
    v.setflags(write=False)
    return v


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Full:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64, copy=True)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
            raise ValueError(f"Full curvature needs a nonempty square matrix, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("Full curvature has non-finite entries")
        asym = float(np.max(np.abs(m - m.T)))
        if asym > SYMMETRY_WARN_TOL:
            warnings.warn(f"symmetrizing matrix with asymmetry {asym:.3e}", stacklevel=3)
        object.__setattr__(self, "matrix", _frozen(0.5 * (m + m.T)))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True, eq=False)
class Diagonal:
    values: np.ndarray

    def __post_init__(self):
        v = as_vector(self.values, "diagonal")
        if v.size == 0:
            raise ValueError("Diagonal curvature must be nonempty")
        if np.any(v < 0):
            raise ValueError("Diagonal curvature entries must be >= 0")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class RankOne:
    """``rho * u u^T`` with unit ``u``. ``degenerate`` marks a zero-mean-gradient estimate."""

    rho: float
    u: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        u = as_vector(self.u, "u")
        rho = float(self.rho)
        if not np.isfinite(rho) or rho < 0:
            raise ValueError(f"rho must be finite and >= 0, got {rho}")
        if abs(np.linalg.norm(u) - 1.0) > UNIT_NORM_TOL:
            raise ValueError("u must have unit norm")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "rho", rho)

    @property
    def dim(self) -> int:
        return self.u.shape[0]


Curvature = Union[Full, Diagonal, RankOne]


def _check_dim(c: Curvature, d: np.ndarray) -> None:
    if d.shape != (c.dim,):
        raise DimensionError(f"curvature has dim {c.dim}, vector has shape {d.shape}")


def curvature_apply(c: Curvature, d) -> np.ndarray:
    """Matrix-vector product ``F d`` for any representation."""
    d = np.asarray(d, dtype=np.float64)
    _check_dim(c, d)
    if isinstance(c, Full):
        return c.matrix @ d
    if isinstance(c, Diagonal):
        return c.values * d
    if isinstance(c, RankOne):
        return c.rho * float(c.u @ d) * c.u
    raise TypeError(f"not a curvature: {type(c).__name__}")


def curvature_square(c: Curvature) -> Curvature:
    """Representation of ``F @ F``. Rank-1 stays rank-1 with ``rho**2``."""
    if isinstance(c, Full):
        return Full(c.matrix @ c.matrix)
    if isinstance(c, Diagonal):
        return Diagonal(c.values * c.values)
    if isinstance(c, RankOne):
        return RankOne(c.rho * c.rho, c.u, c.degenerate)
    raise TypeError(f"not a curvature: {type(c).__name__}")


def quadratic_form(c: Curvature, d) -> float:
    d = np.asarray(d, dtype=np.float64)
    return float(d @ curvature_apply(c, d))


def to_dense(c: Curvature) -> np.ndarray:
    if isinstance(c, Full):
        return np.array(c.matrix)
    if isinstance(c, Diagonal):
        return np.diag(c.values)
    if isinstance(c, RankOne):
        return c.rho * np.outer(c.u, c.u)
    raise TypeError(f"not a curvature: {type(c).__name__}")


class EigenPair(NamedTuple):
    value: float
    vector: np.ndarray
    converged: bool
    degenerate: bool


def top_eigenpair(m, iters: int = 10_000, tol: float = 1e-12, seed: int = 0) -> EigenPair:
    """Dominant eigenpair of a symmetric PSD matrix by power iteration.

    Stops once ``||M v - lam v|| <= tol * lam``. ``converged`` is False when the
    iteration budget runs out first. A zero matrix returns ``(0, e_1)`` with
    ``degenerate=True``.
    """
    if iters < 1:
        raise ValueError("iters must be positive")
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got {m.shape}")
    n = m.shape[0]
    e1 = np.zeros(n)
    e1[0] = 1.0
    if not np.any(m):
        return EigenPair(0.0, e1, True, True)

    v = np.random.default_rng(seed).standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = m @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            # start vector landed in the null space
            v = np.roll(v, 1) + e1
            v /= np.linalg.norm(v)
            continue
        v = w / norm
        lam = float(v @ (m @ v))
        if np.linalg.norm(m @ v - lam * v) <= tol * abs(lam):
            return EigenPair(lam, v, True, False)
    return EigenPair(lam, v, False, False)
