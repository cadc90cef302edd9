"""Toy differentiable model families with exact gradients.

Families
--------
``gaussian_mean``   isotropic unit-variance Gaussian, params = mean; loss = NLL.
``mlp``             tanh MLP regressor; loss = per-sample squared error, batch-averaged.
``toy_diffusion``   MLP noise predictor on ``[x_t, time features]``; noise-prediction loss.
``quadratic``       synthetic per-sample loss ``0.5 * (a . (theta - c))**2`` with
                    ``c = sample.input`` and ``a = sample.target``.
``categorical``     softmax over logits, params = logits, samples are one-hot classes.

Params are flat float64 vectors. MLP layers are packed as ``W1, b1, W2, b2, ...``
with each ``W`` row-major of shape ``(fan_out, fan_in)``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from .curvature import MAX_FULL_DIM, DimensionError

FD_STEP = 1e-5
LOG_2PI = math.log(2.0 * math.pi)


class Family(str, Enum):
    GAUSSIAN_MEAN = "GaussianMean"
    MLP = "Mlp"
    TOY_DIFFUSION = "ToyDiffusion"
    QUADRATIC = "Quadratic"
    CATEGORICAL = "Categorical"


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _dtanh(z):
    return 1.0 - np.tanh(z) ** 2


def _dsigmoid(z):
    s = _sigmoid(z)
    return s * (1.0 - s)


def _softplus(z):
    return np.logaddexp(0.0, z)


# smooth nonlinearities only: (f, f') as functions of the pre-activation
ACTIVATIONS: dict[str, tuple[Callable, Callable]] = {
    "tanh": (np.tanh, _dtanh),
    "sigmoid": (_sigmoid, _dsigmoid),
    "softplus": (_softplus, _sigmoid),
}


@dataclass(frozen=True, eq=False)
class Sample:
    input: np.ndarray
    target: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.array(self.input, dtype=np.float64, copy=True).reshape(-1)
        if not np.all(np.isfinite(x)):
            raise ValueError("sample input has non-finite entries")
        x.setflags(write=False)
        object.__setattr__(self, "input", x)
        if self.target is not None:
            y = np.array(self.target, dtype=np.float64, copy=True).reshape(-1)
            if not np.all(np.isfinite(y)):
                raise ValueError("sample target has non-finite entries")
            y.setflags(write=False)
            object.__setattr__(self, "target", y)


@dataclass(frozen=True, eq=False)
class TaskDataset:
    train: list
    eval: list
    task_id: int
    # ground-truth description of the generating process (family specific)
    truth: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.train or not self.eval:
            raise ValueError("train and eval splits must both be nonempty")


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Variance-preserving forward schedule; timestep ``t`` runs over ``1..steps``."""

    betas: np.ndarray

    def __post_init__(self):
        b = np.array(self.betas, dtype=np.float64, copy=True).reshape(-1)
        if b.size == 0 or np.any(b <= 0) or np.any(b >= 1):
            raise ValueError("betas must be nonempty and lie in (0, 1)")
        b.setflags(write=False)
        object.__setattr__(self, "betas", b)
        alphas = _frozen(1.0 - b)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bars", _frozen(np.cumprod(alphas)))

    @classmethod
    def linear(cls, steps: int = 32, beta_start: float = 1e-4, beta_end: float = 0.2) -> "NoiseSchedule":
        if steps < 1:
            raise ValueError("steps must be positive")
        if steps == 1:
            return cls(np.array([beta_end]))
        return cls(np.linspace(beta_start, beta_end, steps))

    @property
    def steps(self) -> int:
        return self.betas.shape[0]

    def alpha_bar(self, t: int) -> float:
        return float(self.alpha_bars[t - 1])


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ModelSpec:
    family: Family
    layer_sizes: tuple = ()
    schedule: Optional[NoiseSchedule] = None
    activation: str = "tanh"
    dim: Optional[int] = None  # parameter/data dim for non-MLP families
    time_features: int = 4  # ToyDiffusion only; even

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.family in (Family.MLP, Family.TOY_DIFFUSION):
            if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
                raise ValueError("layer_sizes needs at least input and output sizes")
        else:
            if self.dim is None or self.dim < 1:
                raise ValueError(f"{self.family.value} needs a positive dim")
        if self.family is Family.TOY_DIFFUSION:
            if self.schedule is None:
                object.__setattr__(self, "schedule", NoiseSchedule.linear())
            if self.time_features % 2:
                raise ValueError("time_features must be even")
            d = self.data_dim
            if self.layer_sizes[-1] != d or d < 1:
                raise ValueError("denoiser output size must equal the data dimension")

    @property
    def data_dim(self) -> int:
        if self.family is Family.TOY_DIFFUSION:
            return self.layer_sizes[0] - self.time_features
        if self.family is Family.MLP:
            return self.layer_sizes[0]
        return int(self.dim)

    @property
    def n_params(self) -> int:
        if self.family in (Family.MLP, Family.TOY_DIFFUSION):
            s = self.layer_sizes
            return sum(s[i + 1] * s[i] + s[i + 1] for i in range(len(s) - 1))
        return int(self.dim)


# ---------------------------------------------------------------------------
# MLP core


def _unpack(sizes: Sequence[int], params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    layers, k = [], 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = params[k : k + fan_out * fan_in].reshape(fan_out, fan_in)
        k += fan_out * fan_in
        b = params[k : k + fan_out]
        k += fan_out
        layers.append((w, b))
    return layers


def _mlp_forward(layers, act: str, x: np.ndarray):
    f, _ = ACTIVATIONS[act]
    acts, pre = [x], []
    h = x
    for i, (w, b) in enumerate(layers):
        z = h @ w.T + b
        pre.append(z)
        h = f(z) if i < len(layers) - 1 else z
        acts.append(h)
    return h, (acts, pre)


def _mlp_backward(layers, act: str, cache, dout: np.ndarray) -> np.ndarray:
    """Per-sample parameter gradients, shape ``(N, P)``, given dLoss_n/dOutput_n."""
    _, fprime = ACTIVATIONS[act]
    acts, pre = cache
    n = dout.shape[0]
    chunks = []
    delta = dout
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        gw = delta[:, :, None] * acts[i][:, None, :]
        chunks.append((gw.reshape(n, -1), delta))
        if i > 0:
            delta = (delta @ w) * fprime(pre[i - 1])
    out = []
    for gw, gb in reversed(chunks):
        out.extend((gw, gb))
    return np.concatenate(out, axis=1)


def init_params(spec: ModelSpec, seed: int = 0) -> np.ndarray:
    """Deterministic initial parameters (scaled normal for MLP weights, zeros elsewhere)."""
    rng = np.random.default_rng(seed)
    if spec.family in (Family.MLP, Family.TOY_DIFFUSION):
        parts = []
        s = spec.layer_sizes
        for fan_in, fan_out in zip(s[:-1], s[1:]):
            parts.append(rng.standard_normal(fan_out * fan_in) / math.sqrt(fan_in))
            parts.append(np.zeros(fan_out))
        return np.concatenate(parts)
    if spec.family is Family.GAUSSIAN_MEAN:
        return rng.standard_normal(spec.n_params) * 0.1
    return np.zeros(spec.n_params)


def predict(spec: ModelSpec, params, x) -> np.ndarray:
    """MLP outputs for a batch of inputs ``x`` of shape ``(N, in)``."""
    if spec.family is not Family.MLP:
        raise ValueError("predict is defined for the Mlp family")
    params = _check_params(spec, params)
    out, _ = _mlp_forward(_unpack(spec.layer_sizes, params), spec.activation, np.atleast_2d(x))
    return out


# ---------------------------------------------------------------------------
# diffusion helpers


def time_embedding(t: np.ndarray, steps: int, n_features: int) -> np.ndarray:
    """Sinusoidal features of ``t / steps`` at octave frequencies."""
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    if n_features == 0:
        return np.zeros((t.shape[0], 0))
    freqs = (math.pi / 2.0) * 2.0 ** np.arange(n_features // 2)
    ang = (t / steps) * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


@functools.lru_cache(maxsize=256)
def _diffusion_draws_cached(seed: int, n: int, steps: int, dim: int):
    ts = np.empty(n, dtype=np.int64)
    eps = np.empty((n, dim))
    for i in range(n):
        # counter-based: each sample's draw depends only on (seed, index)
        g = np.random.default_rng([seed, i])
        ts[i] = g.integers(1, steps + 1)
        eps[i] = g.standard_normal(dim)
    return _frozen(ts), _frozen(eps)


def diffusion_draws(rng_seed: int, n: int, schedule: NoiseSchedule, dim: int):
    """Per-sample ``(t, eps)`` keyed by ``(rng_seed, sample index)``."""
    return _diffusion_draws_cached(int(rng_seed) & 0xFFFFFFFFFFFFFFFF, int(n), schedule.steps, int(dim))


def diffusion_forward(x0, t: int, eps, schedule: NoiseSchedule) -> np.ndarray:
    """Closed-form forward marginal ``sqrt(abar_t) x0 + sqrt(1 - abar_t) eps``."""
    if not 1 <= t <= schedule.steps:
        raise ValueError(f"t={t} outside 1..{schedule.steps}")
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise DimensionError(f"x0 {x0.shape} and eps {eps.shape} differ")
    ab = schedule.alpha_bar(t)
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps


def _noised_inputs(spec: ModelSpec, x0: np.ndarray, ts: np.ndarray, eps: np.ndarray) -> np.ndarray:
    ab = spec.schedule.alpha_bars[ts - 1][:, None]
    xt = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    return np.concatenate([xt, time_embedding(ts, spec.schedule.steps, spec.time_features)], axis=1)


def predict_noise(spec: ModelSpec, params, xt, t) -> np.ndarray:
    """Denoiser output for noisy points ``xt`` (N, d) at timesteps ``t`` (scalar or (N,))."""
    if spec.family is not Family.TOY_DIFFUSION:
        raise ValueError("predict_noise needs the ToyDiffusion family")
    xt = np.atleast_2d(np.asarray(xt, dtype=np.float64))
    ts = np.broadcast_to(np.asarray(t), (xt.shape[0],))
    feats = np.concatenate([xt, time_embedding(ts, spec.schedule.steps, spec.time_features)], axis=1)
    out, _ = _mlp_forward(_unpack(spec.layer_sizes, _check_params(spec, params)), spec.activation, feats)
    return out


def noise_prediction_loss(eps: np.ndarray, eps_hat: np.ndarray) -> np.ndarray:
    """Per-sample ``||eps - eps_hat||^2``."""
    return np.sum((np.asarray(eps) - np.asarray(eps_hat)) ** 2, axis=-1)


def diffusion_sample(spec: ModelSpec, params, n: int, rng_seed: int) -> list[np.ndarray]:
    """Ancestral sampling through the learned reverse chain, starting from N(0, I)."""
    if spec.family is not Family.TOY_DIFFUSION:
        raise ValueError("diffusion_sample needs the ToyDiffusion family")
    params = _check_params(spec, params)
    sch = spec.schedule
    rng = np.random.default_rng(rng_seed)
    x = rng.standard_normal((n, spec.data_dim))
    for t in range(sch.steps, 0, -1):
        beta, alpha, ab = sch.betas[t - 1], sch.alphas[t - 1], sch.alpha_bars[t - 1]
        eps_hat = predict_noise(spec, params, x, t)
        x = (x - beta / math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(alpha)
        if t > 1:
            x = x + math.sqrt(beta) * rng.standard_normal(x.shape)
    return [row.copy() for row in x]


# ---------------------------------------------------------------------------
# losses and gradients


def _check_params(spec: ModelSpec, params) -> np.ndarray:
    p = np.asarray(params, dtype=np.float64)
    if p.shape != (spec.n_params,):
        raise DimensionError(f"{spec.family.value} expects {spec.n_params} params, got shape {p.shape}")
    return p


def _stack(batch: Sequence[Sample], what: str = "input") -> np.ndarray:
    if len(batch) == 0:
        raise ValueError("batch is empty")
    rows = [getattr(s, what) for s in batch]
    if any(r is None for r in rows):
        raise ValueError(f"every sample needs a {what}")
    try:
        return np.stack(rows)
    except ValueError as exc:
        raise DimensionError(f"ragged sample {what}s") from exc


def _per_sample(spec: ModelSpec, params, batch, rng_seed: int, need_grad: bool):
    """Per-sample losses (N,) and, when asked, per-sample gradients (N, P)."""
    p = _check_params(spec, params)
    x = _stack(batch)
    fam = spec.family

    if fam is Family.GAUSSIAN_MEAN:
        if x.shape[1] != spec.dim:
            raise DimensionError("sample dim differs from model dim")
        r = p - x
        losses = 0.5 * np.sum(r * r, axis=1) + 0.5 * spec.dim * LOG_2PI
        return losses, (r if need_grad else None)

    if fam is Family.QUADRATIC:
        a = _stack(batch, "target")
        if x.shape[1] != spec.dim or a.shape[1] != spec.dim:
            raise DimensionError("quadratic sample dims differ from model dim")
        s = np.sum(a * (p - x), axis=1)
        return 0.5 * s * s, (s[:, None] * a if need_grad else None)

    if fam is Family.CATEGORICAL:
        if x.shape[1] != spec.dim:
            raise DimensionError("one-hot width differs from number of classes")
        logp = p - _logsumexp(p)
        losses = -(x @ logp)
        return losses, (np.exp(logp)[None, :] - x if need_grad else None)

    layers = _unpack(spec.layer_sizes, p)
    if fam is Family.MLP:
        y = _stack(batch, "target")
        if x.shape[1] != spec.layer_sizes[0] or y.shape[1] != spec.layer_sizes[-1]:
            raise DimensionError("sample shapes do not match layer_sizes")
        out, cache = _mlp_forward(layers, spec.activation, x)
        r = out - y
        losses = np.sum(r * r, axis=1)
        return losses, (_mlp_backward(layers, spec.activation, cache, 2.0 * r) if need_grad else None)

    if fam is Family.TOY_DIFFUSION:
        if x.shape[1] != spec.data_dim:
            raise DimensionError("sample dim differs from the denoiser data dim")
        ts, eps = diffusion_draws(rng_seed, x.shape[0], spec.schedule, spec.data_dim)
        out, cache = _mlp_forward(layers, spec.activation, _noised_inputs(spec, x, ts, eps))
        r = out - eps
        losses = np.sum(r * r, axis=1)
        return losses, (_mlp_backward(layers, spec.activation, cache, 2.0 * r) if need_grad else None)

    raise ValueError(f"unknown family {fam}")


def _logsumexp(z: np.ndarray) -> float:
    m = float(np.max(z))
    return m + math.log(float(np.sum(np.exp(z - m))))


def per_sample_losses(spec: ModelSpec, params, batch, rng_seed: int = 0) -> np.ndarray:
    return _per_sample(spec, params, batch, rng_seed, need_grad=False)[0]


def per_sample_grads(spec: ModelSpec, params, batch, rng_seed: int = 0) -> np.ndarray:
    """Gradient of each sample's loss, stacked as rows. ``grad`` is their mean."""
    return _per_sample(spec, params, batch, rng_seed, need_grad=True)[1]


def loss(spec: ModelSpec, params, batch, rng_seed: int = 0) -> float:
    return float(np.mean(per_sample_losses(spec, params, batch, rng_seed)))


def grad(spec: ModelSpec, params, batch, rng_seed: int = 0) -> np.ndarray:
    return np.mean(per_sample_grads(spec, params, batch, rng_seed), axis=0)


def loss_and_grad(spec: ModelSpec, params, batch, rng_seed: int = 0) -> tuple[float, np.ndarray]:
    losses, g = _per_sample(spec, params, batch, rng_seed, need_grad=True)
    return float(np.mean(losses)), np.mean(g, axis=0)


def hessian(spec: ModelSpec, params, batch, rng_seed: int = 0, symmetrize: bool = True) -> np.ndarray:
    """Batch-averaged loss Hessian.

    Exact for the Gaussian, quadratic and categorical families; central finite
    differences of the analytic gradient (step ``FD_STEP``) for the networks.
    """
    p = _check_params(spec, params)
    n = spec.n_params
    if n > MAX_FULL_DIM:
        raise ValueError(f"explicit Hessian capped at {MAX_FULL_DIM} params, model has {n}")
    fam = spec.family
    if fam is Family.GAUSSIAN_MEAN:
        _stack(batch)
        return np.eye(n)
    if fam is Family.QUADRATIC:
        a = _stack(batch, "target")
        return a.T @ a / a.shape[0]
    if fam is Family.CATEGORICAL:
        _stack(batch)
        prob = np.exp(p - _logsumexp(p))
        return np.diag(prob) - np.outer(prob, prob)

    h = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = FD_STEP
        h[:, j] = (grad(spec, p + e, batch, rng_seed) - grad(spec, p - e, batch, rng_seed)) / (2 * FD_STEP)
    return 0.5 * (h + h.T) if symmetrize else h


def sample_from_model(spec: ModelSpec, params, n: int, rng_seed: int) -> list[Sample]:
    """Exact draws ``x ~ p_theta`` for families with a tractable sampler."""
    p = _check_params(spec, params)
    rng = np.random.default_rng(rng_seed)
    if spec.family is Family.GAUSSIAN_MEAN:
        xs = p + rng.standard_normal((n, spec.dim))
        return [Sample(x) for x in xs]
    if spec.family is Family.CATEGORICAL:
        prob = np.exp(p - _logsumexp(p))
        ks = rng.choice(spec.dim, size=n, p=prob)
        eye = np.eye(spec.dim)
        return [Sample(eye[k]) for k in ks]
    if spec.family is Family.TOY_DIFFUSION:
        return [Sample(x) for x in diffusion_sample(spec, p, n, rng_seed)]
    raise ValueError(f"{spec.family.value} has no exact sampler")
