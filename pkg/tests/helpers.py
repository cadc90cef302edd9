"""Shared oracles for the test suite."""

import numpy as np
from scipy import optimize

from trcl import models
from trcl.models import Family, ModelSpec, NoiseSchedule, Sample


def fd_grad(f, x, h=1e-5):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)


def point_diffusion(point=(3.0, 3.0), seed=0):
    """Denoiser fitted to the single-point dataset ``{point}``; returns (spec, params, fresh loss)."""
    spec = ModelSpec(Family.TOY_DIFFUSION, layer_sizes=(6, 32, 32, 2), schedule=NoiseSchedule.linear(16, 1e-2, 0.3))
    batch = [Sample(point)] * 256
    res = optimize.minimize(lambda p: models.loss_and_grad(spec, p, batch, 7), models.init_params(spec, seed),
                            jac=True, method="L-BFGS-B", options={"maxiter": 300})
    return spec, res.x, models.loss(spec, res.x, batch, 99)
