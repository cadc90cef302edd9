import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trcl import models
from trcl.curvature import DimensionError
from trcl.harness.verify import gradcheck_families
from trcl.models import Family, ModelSpec, NoiseSchedule, Sample, TaskDataset

from helpers import fd_grad, point_diffusion, rel_err


def test_sample_rejects_non_finite_and_is_frozen():
    with pytest.raises(ValueError):
        Sample([1.0, np.nan])
    with pytest.raises(ValueError):
        Sample([1.0], [np.inf])
    src = np.array([1.0, 2.0])
    s = Sample(src)
    src[0] = 7.0
    assert s.input[0] == 1.0
    with pytest.raises(ValueError):
        s.input[0] = 3.0


def test_task_dataset_needs_both_splits():
    with pytest.raises(ValueError):
        TaskDataset([], [Sample([0.0])], 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 64), st.floats(1e-5, 0.1), st.floats(0.1, 0.9))
def test_noise_schedule_invariants(steps, lo, hi):
    s = NoiseSchedule.linear(steps, lo, hi)
    ab = s.alpha_bars
    assert ab[0] <= 1 and np.all(ab > 0) and np.all(ab <= 1)
    assert np.all(np.diff(ab) < 0)
    assert s.steps == steps


def test_noise_schedule_rejects_bad_betas():
    for betas in ([], [0.0], [1.0], [0.1, -0.1]):
        with pytest.raises(ValueError):
            NoiseSchedule(np.array(betas))


def test_param_counts_and_shape_errors():
    spec = ModelSpec(Family.MLP, layer_sizes=(1, 20, 20, 1))
    assert spec.n_params == 481
    with pytest.raises(DimensionError):
        models.loss(spec, np.zeros(480), [Sample([0.0], [0.0])])
    with pytest.raises(ValueError):
        ModelSpec(Family.TOY_DIFFUSION, layer_sizes=(6, 8, 3))
    with pytest.raises(ValueError):
        ModelSpec(Family.GAUSSIAN_MEAN)
    with pytest.raises(ValueError):
        models.loss(ModelSpec(Family.GAUSSIAN_MEAN, dim=2), np.zeros(2), [])


def test_gaussian_nll_at_mean():
    spec = ModelSpec(Family.GAUSSIAN_MEAN, dim=3)
    x = np.array([0.5, -1.0, 2.0])
    assert math.isclose(models.loss(spec, x, [Sample(x)]), 1.5 * math.log(2 * math.pi), rel_tol=1e-15)


def test_zero_mlp_fits_zero_targets():
    spec = ModelSpec(Family.MLP, layer_sizes=(2, 5, 3))
    batch = [Sample(np.random.default_rng(i).standard_normal(2), np.zeros(3)) for i in range(4)]
    assert models.loss(spec, np.zeros(spec.n_params), batch) == 0.0


def test_denoiser_predicting_drawn_noise_has_zero_loss():
    # linear denoiser on x0 = 0: x_t = sqrt(1 - abar_t) eps, so W = I / sqrt(1 - abar_t) recovers eps
    spec = ModelSpec(Family.TOY_DIFFUSION, layer_sizes=(6, 2))
    ts, eps = models.diffusion_draws(5, 1, spec.schedule, 2)
    w = np.zeros((2, 6))
    w[:, :2] = np.eye(2) / math.sqrt(1 - spec.schedule.alpha_bar(int(ts[0])))
    params = np.concatenate([w.ravel(), np.zeros(2)])
    assert models.loss(spec, params, [Sample([0.0, 0.0])], 5) < 1e-28
    assert np.all(models.noise_prediction_loss(eps, eps) == 0.0)


def test_gaussian_grad_zero_at_batch_mean():
    spec = ModelSpec(Family.GAUSSIAN_MEAN, dim=3)
    xs = np.random.default_rng(0).standard_normal((10, 3))
    g = models.grad(spec, xs.mean(0), [Sample(x) for x in xs])
    assert np.linalg.norm(g) < 1e-15


def test_linear_mlp_grad_closed_form():
    spec = ModelSpec(Family.MLP, layer_sizes=(3, 2))
    rng = np.random.default_rng(1)
    p = rng.standard_normal(spec.n_params)
    x, y = rng.standard_normal(3), rng.standard_normal(2)
    w, b = p[:6].reshape(2, 3), p[6:]
    r = w @ x + b - y
    expected = np.concatenate([np.outer(2 * r, x).ravel(), 2 * r])
    assert np.allclose(models.grad(spec, p, [Sample(x, y)]), expected, rtol=1e-13, atol=1e-14)


@pytest.mark.parametrize("name,spec,make_batch", gradcheck_families(), ids=lambda v: v if isinstance(v, str) else "")
def test_grad_matches_finite_differences(name, spec, make_batch):
    rng = np.random.default_rng(3)
    for _ in range(5):
        p = rng.standard_normal(spec.n_params) * 0.7
        batch = make_batch(rng)
        g = models.grad(spec, p, batch, 11)
        assert rel_err(g, fd_grad(lambda q: models.loss(spec, q, batch, 11), p)) <= 1e-5


@pytest.mark.parametrize("act", ["tanh", "sigmoid", "softplus"])
def test_activations_gradcheck(act):
    spec = ModelSpec(Family.MLP, layer_sizes=(2, 4, 1), activation=act)
    rng = np.random.default_rng(0)
    p = rng.standard_normal(spec.n_params)
    batch = [Sample(rng.standard_normal(2), rng.standard_normal(1)) for _ in range(3)]
    assert rel_err(models.grad(spec, p, batch), fd_grad(lambda q: models.loss(spec, q, batch), p)) <= 1e-6


def test_per_sample_grads_average_to_grad():
    spec = ModelSpec(Family.MLP, layer_sizes=(1, 6, 1))
    rng = np.random.default_rng(2)
    p = models.init_params(spec, 0)
    batch = [Sample(rng.standard_normal(1), rng.standard_normal(1)) for _ in range(7)]
    g = models.per_sample_grads(spec, p, batch)
    assert g.shape == (7, spec.n_params)
    for i in range(7):
        assert np.allclose(g[i], models.grad(spec, p, [batch[i]]), rtol=1e-13, atol=1e-15)
    assert np.allclose(g.mean(0), models.grad(spec, p, batch))


def test_hessian_closed_forms():
    spec = ModelSpec(Family.GAUSSIAN_MEAN, dim=4)
    assert np.array_equal(models.hessian(spec, np.ones(4), [Sample(np.zeros(4))] * 3), np.eye(4))
    u = np.array([0.6, 0.8, 0.0])
    rho = 2.5
    q = ModelSpec(Family.QUADRATIC, dim=3)
    h = models.hessian(q, np.zeros(3), [Sample(np.ones(3), math.sqrt(rho) * u)] * 2)
    assert np.allclose(h, rho * np.outer(u, u), atol=1e-15)


def test_mlp_hessian_symmetric_and_matches_double_difference():
    spec = ModelSpec(Family.MLP, layer_sizes=(1, 3, 1))
    rng = np.random.default_rng(4)
    p = rng.standard_normal(spec.n_params)
    batch = [Sample(rng.standard_normal(1), rng.standard_normal(1)) for _ in range(5)]
    raw = models.hessian(spec, p, batch, symmetrize=False)
    h = models.hessian(spec, p, batch)
    assert np.max(np.abs(h - h.T)) == 0.0
    assert np.max(np.abs(raw - raw.T)) <= 1e-6
    f = lambda q: models.loss(spec, q, batch)
    e = 1e-4
    n = p.size
    dd = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            ei, ej = np.eye(n)[i] * e, np.eye(n)[j] * e
            dd[i, j] = (f(p + ei + ej) - f(p + ei - ej) - f(p - ei + ej) + f(p - ei - ej)) / (4 * e * e)
    assert np.max(np.abs(h - dd)) <= 1e-5 * max(1.0, np.max(np.abs(dd)))


def test_hessian_size_cap():
    spec = ModelSpec(Family.MLP, layer_sizes=(1, 40, 40, 1))
    with pytest.raises(ValueError):
        models.hessian(spec, np.zeros(spec.n_params), [Sample([0.0], [0.0])])


def test_categorical_hessian_closed_form():
    spec = ModelSpec(Family.CATEGORICAL, dim=3)
    logits = np.array([0.2, -0.5, 1.0])
    p = np.exp(logits) / np.exp(logits).sum()
    assert np.allclose(models.hessian(spec, logits, [Sample([1.0, 0.0, 0.0])]), np.diag(p) - np.outer(p, p))


def test_diffusion_forward_limits():
    x0, eps = np.array([2.0, 0.0]), np.array([0.0, 2.0])
    assert np.array_equal(models.diffusion_forward(x0, 1, eps, NoiseSchedule(np.array([1e-300]))), x0)
    out = models.diffusion_forward(x0, 1, eps, NoiseSchedule(np.array([0.75])))
    assert np.allclose(out, [1.0, math.sqrt(3.0)], rtol=1e-15)
    nearly_noise = NoiseSchedule(np.full(40, 0.999))
    assert np.allclose(models.diffusion_forward(x0, 40, eps, nearly_noise), eps, atol=1e-50)
    with pytest.raises(ValueError):
        models.diffusion_forward(x0, 0, eps, nearly_noise)
    with pytest.raises(DimensionError):
        models.diffusion_forward(x0, 1, np.zeros(3), nearly_noise)


def test_diffusion_draws_are_counter_based():
    s = NoiseSchedule.linear(8)
    t5, e5 = models.diffusion_draws(3, 5, s, 2)
    t9, e9 = models.diffusion_draws(3, 9, s, 2)
    assert np.array_equal(t5, t9[:5]) and np.array_equal(e5, e9[:5])
    assert t9.min() >= 1 and t9.max() <= 8


def _zero_denoiser(steps=8):
    spec = ModelSpec(Family.TOY_DIFFUSION, layer_sizes=(6, 4, 2), schedule=NoiseSchedule.linear(steps, 1e-2, 0.2))
    return spec, np.zeros(spec.n_params)


def test_untrained_denoiser_samples_follow_prior_chain():
    spec, p = _zero_denoiser()
    xs = np.array(models.diffusion_sample(spec, p, 20_000, 0))
    # with eps_hat = 0: v_{t-1} = v_t / alpha_t + beta_t for t > 1, v_0 = v_1 / alpha_1
    s = spec.schedule
    v = 1.0
    for t in range(s.steps, 0, -1):
        v = v / s.alphas[t - 1] + (s.betas[t - 1] if t > 1 else 0.0)
    se = math.sqrt(v / xs.shape[0])
    assert np.all(np.abs(xs.mean(0)) <= 3 * se)
    assert np.allclose(xs.var(0), v, rtol=0.05)


def test_single_step_schedule_applies_one_denoising_step():
    spec = ModelSpec(Family.TOY_DIFFUSION, layer_sizes=(6, 4, 2), schedule=NoiseSchedule.linear(1, beta_end=0.3))
    xs = np.array(models.diffusion_sample(spec, np.zeros(spec.n_params), 5, 42))
    z = np.random.default_rng(42).standard_normal((5, 2))
    assert np.allclose(xs, z / math.sqrt(0.7), rtol=1e-15)


def test_trained_single_point_generates_that_point():
    spec, p, fresh = point_diffusion()
    assert fresh < 0.05
    xs = np.array(models.diffusion_sample(spec, p, 2000, 1))
    assert np.linalg.norm(xs.mean(0) - 3.0) < 0.5


def test_sample_from_model_gaussian_and_categorical():
    g = ModelSpec(Family.GAUSSIAN_MEAN, dim=2)
    xs = np.array([s.input for s in models.sample_from_model(g, np.array([1.0, -2.0]), 20_000, 0)])
    assert np.all(np.abs(xs.mean(0) - [1.0, -2.0]) < 4 / math.sqrt(20_000))
    c = ModelSpec(Family.CATEGORICAL, dim=3)
    oh = np.array([s.input for s in models.sample_from_model(c, np.log([0.2, 0.3, 0.5]), 20_000, 0)])
    assert np.allclose(oh.mean(0), [0.2, 0.3, 0.5], atol=0.015)
    with pytest.raises(ValueError):
        models.sample_from_model(ModelSpec(Family.MLP, layer_sizes=(1, 1)), np.zeros(2), 3, 0)
