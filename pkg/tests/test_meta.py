import math

import numpy as np
import pytest

from trcl import models
from trcl.continual import TaskAnchor
from trcl.curvature import RankOne
from trcl.harness.verify import gap_trend, rank_one_quadratic_task
from trcl.meta import (
    MetaConfig,
    SupportQuery,
    TaskHandle,
    equivalence_gap,
    ftml_step,
    maml_inner_step,
    maml_outer_update,
    maml_outer_update_exact,
    maml_outer_update_first_order,
    split_support_query,
)
from trcl.models import Family, ModelSpec, Sample

from helpers import fd_grad, rel_err

# 0.5 * ||theta||^2 plus a constant
HALF_SQ = ModelSpec(Family.GAUSSIAN_MEAN, dim=2)
ORIGIN = [Sample([0.0, 0.0])]


def test_config_validation():
    assert MetaConfig(alpha=0.0).alpha == 0.0
    with pytest.raises(ValueError):
        MetaConfig(alpha=-1.0)
    with pytest.raises(ValueError):
        MetaConfig(eta=0.0)
    with pytest.raises(ValueError):
        MetaConfig(inner_steps=2)
    with pytest.raises(ValueError):
        SupportQuery([], ORIGIN)


def test_split_support_query():
    batch = [Sample([float(i)]) for i in range(7)]
    sq = split_support_query(batch, 0)
    assert len(sq.support) == 4 and len(sq.query) == 3
    assert sorted(s.input[0] for s in sq.support + sq.query) == list(range(7))
    again = split_support_query(batch, 0)
    assert [s.input[0] for s in again.support] == [s.input[0] for s in sq.support]
    with pytest.raises(ValueError):
        split_support_query(batch[:1], 0)


def test_inner_step_examples():
    theta = np.array([1.0, 0.0])
    assert np.array_equal(maml_inner_step(HALF_SQ, theta, ORIGIN, 0.0), theta)
    assert np.allclose(maml_inner_step(HALF_SQ, theta, ORIGIN, 0.1), [0.9, 0.0], rtol=1e-15)
    assert np.array_equal(maml_inner_step(HALF_SQ, np.zeros(2), ORIGIN, 0.5), np.zeros(2))


def test_outer_update_closed_forms():
    sq = SupportQuery(ORIGIN, ORIGIN)
    cfg = MetaConfig(alpha=0.1, eta=1.0, first_order=False)
    exact = maml_outer_update_exact(HALF_SQ, [1.0, 0.0], sq, cfg)
    assert np.allclose(exact.params, [0.19, 0.0], rtol=1e-14)
    first = maml_outer_update_first_order(HALF_SQ, [1.0, 0.0], sq, cfg)
    assert np.allclose(first.params, [0.1, 0.0], rtol=1e-14)
    assert np.allclose(maml_outer_update(HALF_SQ, [1.0, 0.0], sq, MetaConfig(0.1, 1.0)).params, first.params)


def test_alpha_zero_reduces_to_query_descent():
    spec = ModelSpec(Family.MLP, layer_sizes=(1, 4, 1))
    rng = np.random.default_rng(0)
    sq = SupportQuery([Sample(rng.standard_normal(1), rng.standard_normal(1)) for _ in range(4)],
                      [Sample(rng.standard_normal(1), rng.standard_normal(1)) for _ in range(4)])
    theta = models.init_params(spec, 1)
    cfg = MetaConfig(alpha=0.0, eta=0.3, first_order=False)
    plain = theta - 0.3 * models.grad(spec, theta, sq.query, 1)
    assert np.allclose(maml_outer_update_exact(spec, theta, sq, cfg).params, plain, rtol=1e-15)
    assert np.array_equal(maml_outer_update_first_order(spec, theta, sq, cfg).params,
                          maml_outer_update_exact(spec, theta, sq, cfg).params)


def test_exact_update_matches_finite_difference_hypergradient():
    spec = ModelSpec(Family.MLP, layer_sizes=(1, 4, 1))
    rng = np.random.default_rng(1)
    mk = lambda: [Sample(rng.uniform(-2, 2, 1), rng.standard_normal(1)) for _ in range(5)]
    sq = SupportQuery(mk(), mk())
    cfg = MetaConfig(alpha=0.2, eta=0.5, first_order=False)
    theta = rng.standard_normal(spec.n_params)

    def post_adaptation(t):
        return models.loss(spec, maml_inner_step(spec, t, sq.support, cfg.alpha), sq.query)

    hyper = (theta - maml_outer_update_exact(spec, theta, sq, cfg).params) / cfg.eta
    assert rel_err(hyper, fd_grad(post_adaptation, theta)) <= 1e-4


def test_first_order_gap_is_curvature_term_on_quadratics():
    rng = np.random.default_rng(2)
    for _ in range(10):
        spec, batch, rho, u, theta_star = rank_one_quadratic_task(rng, 3)
        cfg = MetaConfig(alpha=0.05, eta=0.2, first_order=False)
        sq = SupportQuery(batch, batch)
        theta = theta_star + rng.standard_normal(3)
        exact = maml_outer_update_exact(spec, theta, sq, cfg)
        first = maml_outer_update_first_order(spec, theta, sq, cfg)
        h = rho * np.outer(u, u)
        diff = np.linalg.norm(exact.params - first.params)
        assert math.isclose(diff, cfg.eta * cfg.alpha * np.linalg.norm(h @ exact.query_grad), rel_tol=1e-10)


def _gauss_handle(tid, mean):
    return TaskHandle(tid, lambda seed: [Sample(mean + r) for r in np.random.default_rng(seed).standard_normal((4, 2))])


def test_ftml_single_task_and_determinism():
    cfg = MetaConfig(alpha=0.1, eta=0.1)
    cur = _gauss_handle(0, np.zeros(2))
    assert all(ftml_step(HALF_SQ, np.zeros(2), [], cur, cfg, s).task_id == 0 for s in range(20))
    handles = [_gauss_handle(i, np.full(2, float(i))) for i in range(3)]
    a = [ftml_step(HALF_SQ, np.zeros(2), handles, cur, cfg, s).task_id for s in range(30)]
    b = [ftml_step(HALF_SQ, np.zeros(2), handles, cur, cfg, s).task_id for s in range(30)]
    assert a == b


def test_ftml_samples_tasks_uniformly():
    cfg = MetaConfig(alpha=0.1, eta=0.1)
    handles = [_gauss_handle(i, np.zeros(2)) for i in range(3)]
    cur = _gauss_handle(3, np.zeros(2))
    n = 10_000
    counts = np.bincount([ftml_step(HALF_SQ, np.zeros(2), handles, cur, cfg, s).task_id for s in range(n)],
                         minlength=4)
    sigma = math.sqrt(n * 0.25 * 0.75)
    assert np.all(np.abs(counts - n / 4) <= 3 * sigma)


def test_ftml_resamples_empty_tasks_and_fails_when_all_empty():
    cfg = MetaConfig(alpha=0.1, eta=0.1)
    empty = [TaskHandle(i, lambda seed: []) for i in range(3)]
    cur = _gauss_handle(9, np.zeros(2))
    assert all(ftml_step(HALF_SQ, np.zeros(2), empty, cur, cfg, s).task_id == 9 for s in range(10))
    with pytest.raises(RuntimeError):
        ftml_step(HALF_SQ, np.zeros(2), empty, TaskHandle(9, lambda seed: []), cfg, 0)


def test_gap_i_b_vanishes_without_adaptation_at_anchor():
    spec = ModelSpec(Family.MLP, layer_sizes=(1, 4, 1))
    rng = np.random.default_rng(3)
    batch = [Sample(rng.standard_normal(1), rng.standard_normal(1)) for _ in range(6)]
    theta = models.init_params(spec, 0)
    anchor = TaskAnchor(0, theta, RankOne(1.0, np.eye(spec.n_params)[0]))
    sq = SupportQuery(batch, batch)
    gap = equivalence_gap(spec, theta, anchor, batch, sq, MetaConfig(alpha=0.0), lam=1.0)
    assert gap.gap_I_B == 0.0 and gap.delta_norm == 0.0


def test_gap_ii_c_exact_on_rank_one_quadratics():
    rng = np.random.default_rng(4)
    for _ in range(20):
        spec, batch, rho, u, theta_star = rank_one_quadratic_task(rng, int(rng.integers(2, 6)))
        cfg = MetaConfig(alpha=float(rng.uniform(0.01, 0.3)), eta=0.1, first_order=False)
        anchor = TaskAnchor(0, theta_star, RankOne(rho, u))
        theta = theta_star + rng.standard_normal(theta_star.size)
        gap = equivalence_gap(spec, theta, anchor, batch, SupportQuery(batch, batch), cfg, cfg.alpha * rho)
        assert gap.gap_II_C <= 1e-10


def test_gap_shrinks_with_distance_on_mlp_streams():
    means = gap_trend(range(10), deltas=(0.1, 0.05, 0.025))
    assert means[1] / means[0] <= 0.7 and means[2] / means[1] <= 0.7
