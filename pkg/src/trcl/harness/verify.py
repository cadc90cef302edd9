"""Numerical oracle suites run by ``trcl verify``."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np
from scipy import optimize

from .. import models
from ..continual import ContinualConfig, TaskAnchor, finalize_task, trust_region_step
from ..curvature import RankOne, curvature_apply, curvature_square, to_dense
from ..fisher import FisherMode, fisher_hessian_check
from ..meta import (MetaConfig, SupportQuery, equivalence_gap, maml_outer_update_exact, maml_outer_update_first_order,
                    split_support_query)
from ..models import Family, ModelSpec, NoiseSchedule, Sample
from .streams import StreamFamily, TaskStreamSpec, make_task_stream


class Suite(str, Enum):
    ALL = "All"
    FISHER_IDENTITY = "FisherIdentity"
    RANK_ONE_SQUARE = "RankOneSquare"
    GRAD_CHECK = "GradCheck"
    TAYLOR_LOCALITY = "TaylorLocality"
    QUAD_EQUIVALENCE = "QuadEquivalence"


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    bound: str
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f"  ({self.detail})" if self.detail else ""
        return f"[{status}] {self.name}: {self.value:.3e} {self.bound}{extra}"


@dataclass
class VerifyReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def exit_status(self) -> int:
        return 0 if self.passed else 1


# ---------------------------------------------------------------------------
# shared fixtures


def rank_one_quadratic_task(rng: np.random.Generator, dim: int, n: int = 4):
    """Samples whose batch loss is exactly ``0.5 * rho * (u . (theta - theta_star))**2``."""
    u = rng.standard_normal(dim)
    u /= np.linalg.norm(u)
    rho = float(rng.uniform(0.5, 3.0))
    theta_star = rng.standard_normal(dim)
    batch = [Sample(theta_star, np.sqrt(rho) * u) for _ in range(n)]
    return ModelSpec(Family.QUADRATIC, dim=dim), batch, rho, u, theta_star


def relative_error(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / scale)


def fd_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = models.FD_STEP) -> np.ndarray:
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def gradcheck_families(seed: int = 0) -> list[tuple[str, ModelSpec, Callable]]:
    """(name, spec, batch factory) for every model family at desk-check sizes."""

    def gauss(rng):
        return [Sample(x) for x in rng.standard_normal((6, 3))]

    def quad(rng):
        return [Sample(rng.standard_normal(3), rng.standard_normal(3)) for _ in range(5)]

    def cat(rng):
        eye = np.eye(3)
        return [Sample(eye[k]) for k in rng.integers(3, size=6)]

    def mlp(rng):
        return [Sample(rng.uniform(-2, 2, 2), rng.standard_normal(2)) for _ in range(6)]

    def diff(rng):
        return [Sample(rng.standard_normal(2)) for _ in range(6)]

    return [
        ("GaussianMean", ModelSpec(Family.GAUSSIAN_MEAN, dim=3), gauss),
        ("Quadratic", ModelSpec(Family.QUADRATIC, dim=3), quad),
        ("Categorical", ModelSpec(Family.CATEGORICAL, dim=3), cat),
        ("Mlp", ModelSpec(Family.MLP, layer_sizes=(2, 6, 5, 2)), mlp),
        ("ToyDiffusion", ModelSpec(Family.TOY_DIFFUSION, layer_sizes=(6, 8, 2), schedule=NoiseSchedule.linear(32)), diff),
    ]


def random_params(spec: ModelSpec, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal(spec.n_params) * 0.7


def max_gradcheck_error(spec: ModelSpec, make_batch, points: int, seed: int) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(points):
        theta = random_params(spec, rng)
        batch = make_batch(rng)
        rs = int(rng.integers(2**31))
        g = models.grad(spec, theta, batch, rs)
        g_fd = fd_grad(lambda p: models.loss(spec, p, batch, rs), theta)
        worst = max(worst, relative_error(g, g_fd))
    return worst


# ---------------------------------------------------------------------------
# suites


def rank_one_square_checks(seed: int) -> list[Check]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(100):
        dim = int(rng.integers(1, 9))
        u = rng.standard_normal(dim)
        c = RankOne(float(rng.uniform(0, 5)), u / np.linalg.norm(u))
        d = rng.standard_normal(dim)
        lhs = curvature_apply(curvature_square(c), d)
        rhs = c.rho * curvature_apply(c, d)
        worst = max(worst, float(np.linalg.norm(lhs - rhs)) / max(1.0, float(np.linalg.norm(rhs))))
    return [Check("rank-1 square equals rho * F on 100 triples", worst <= 1e-12, worst, "<= 1e-12")]


def fisher_identity_checks(seed: int) -> list[Check]:
    out = []
    spec = ModelSpec(Family.GAUSSIAN_MEAN, dim=4)
    theta = np.random.default_rng(seed).standard_normal(4)
    rep = fisher_hessian_check(spec, theta, 100_000, seed)
    out.append(Check("Fisher vs expected Hessian, GaussianMean d=4, n=1e5", rep.frobenius_rel_err <= 0.05,
                     rep.frobenius_rel_err, "<= 0.05"))
    cat = ModelSpec(Family.CATEGORICAL, dim=3)
    rep = fisher_hessian_check(cat, np.zeros(3), 100_000, seed)
    p = np.full(3, 1.0 / 3.0)
    closed = np.diag(p) - np.outer(p, p)
    err = float(np.linalg.norm(rep.fisher - closed) / np.linalg.norm(closed))
    out.append(Check("categorical Fisher vs diag(p) - pp^T, 3 classes", err <= 0.05, err, "<= 0.05"))
    out.append(Check("categorical Fisher vs expected Hessian", rep.frobenius_rel_err <= 0.05,
                     rep.frobenius_rel_err, "<= 0.05"))
    return out


def grad_check_checks(seed: int, points: int = 20) -> list[Check]:
    out = []
    for name, spec, make_batch in gradcheck_families(seed):
        err = max_gradcheck_error(spec, make_batch, points, seed)
        out.append(Check(f"grad vs central differences, {name} ({points} points)", err <= 1e-5, err, "<= 1e-5"))
    return out


def stationary_mlp_task(seed: int, hidden: int = 8, n: int = 64):
    """A small tanh regressor and parameters at a numerically exact stationary point."""
    rng = np.random.default_rng(seed)
    spec = ModelSpec(Family.MLP, layer_sizes=(1, hidden, 1))
    xs = rng.uniform(-3, 3, size=(n, 1))
    batch = [Sample(x, np.sin(x)) for x in xs]
    # BFGS gets close cheaply, then Newton-type trust-region steps polish the stationary point
    warm = optimize.minimize(lambda p: models.loss_and_grad(spec, p, batch), models.init_params(spec, seed),
                             jac=True, method="BFGS", options={"gtol": 1e-10, "maxiter": 5000})
    res = optimize.minimize(
        lambda p: models.loss(spec, p, batch),
        warm.x,
        jac=lambda p: models.grad(spec, p, batch),
        hess=lambda p: models.hessian(spec, p, batch),
        method="trust-exact",
        options={"gtol": 1e-12, "maxiter": 200},
    )
    return spec, batch, res.x


def taylor_residual_ratio(spec, batch, theta_star, delta_norm: float, directions: int, seed: int) -> float:
    """Mean of ``r(d) / r(d/2)`` with ``r(d) = ||grad L(theta* + d) - H(theta*) d||``."""
    rng = np.random.default_rng(seed)
    h = models.hessian(spec, theta_star, batch)
    ratios = []
    for _ in range(directions):
        v = rng.standard_normal(theta_star.size)
        d = delta_norm * v / np.linalg.norm(v)

        def r(step):
            return float(np.linalg.norm(models.grad(spec, theta_star + step, batch) - h @ step))

        ratios.append(r(d) / r(0.5 * d))
    return float(np.mean(ratios))


def taylor_locality_checks(seed: int) -> list[Check]:
    spec, batch, theta_star = stationary_mlp_task(seed)
    gnorm = float(np.linalg.norm(models.grad(spec, theta_star, batch)))
    ratio = taylor_residual_ratio(spec, batch, theta_star, 0.1, 10, seed)
    return [
        Check("Taylor residual ratio r(d)/r(d/2), |d| = 0.1, 10 directions", 3.0 <= ratio <= 5.0, ratio,
              "in [3, 5]", f"|grad L(theta*)| = {gnorm:.1e}"),
    ]


def quad_equivalence_checks(seed: int, trials: int = 20) -> list[Check]:
    rng = np.random.default_rng(seed)
    worst_gap, worst_fo, worst_update = 0.0, 0.0, 0.0
    for _ in range(trials):
        dim = int(rng.integers(2, 7))
        spec, batch, rho, u, theta_star = rank_one_quadratic_task(rng, dim)
        alpha = float(rng.uniform(0.01, 0.2)) / rho
        cfg = MetaConfig(alpha=alpha, eta=float(rng.uniform(0.05, 0.5)), first_order=False)
        lam = alpha * rho
        anchor = TaskAnchor(0, theta_star, RankOne(rho, u))
        theta = theta_star + 0.3 * rng.standard_normal(dim)
        sq = SupportQuery(batch, batch)

        gap = equivalence_gap(spec, theta, anchor, batch, sq, cfg, lam)
        worst_gap = max(worst_gap, gap.gap_II_C)

        exact = maml_outer_update_exact(spec, theta, sq, cfg)
        first = maml_outer_update_first_order(spec, theta, sq, cfg)
        h = models.hessian(spec, theta, batch)
        expected = cfg.eta * cfg.alpha * (h @ exact.query_grad)
        worst_fo = max(worst_fo, relative_error(exact.params - first.params, expected))

        tr_cfg = ContinualConfig(lam=lam, beta=1.0, eta=cfg.eta)
        tr = trust_region_step(spec, theta, [], [(0, batch)], [anchor], tr_cfg)
        worst_update = max(worst_update, relative_error(theta - tr, theta - exact.params))

    return [
        Check("curvature correction equals lambda F delta with lambda = alpha rho", worst_gap <= 1e-10,
              worst_gap, "<= 1e-10"),
        Check("exact minus first-order MAML equals eta alpha H grad L(theta')", worst_fo <= 1e-10, worst_fo,
              "<= 1e-10"),
        Check("trust-region old-task update vs exact MAML update (beta = 1, lambda = alpha rho)",
              worst_update <= 1e-10, worst_update, "<= 1e-10",
              "exact MAML scales F delta by (1 - alpha rho)^2, the trust-region step by (beta + alpha rho)"),
    ]


def two_task_gap_curve(seed: int, deltas=(0.1, 0.05, 0.025), mode: FisherMode | str = FisherMode.RANK_ONE,
                       alpha: float = 1e-2, train_steps: int = 3000) -> list[float]:
    """gap_II_C at ``theta* + delta * d`` on a two-task sinusoid stream.

    ``theta*`` comes from plain minibatch SGD on task 0, ``d`` is the unit
    descent direction of task 1 at ``theta*`` and ``lambda = alpha * rho``
    with ``rho`` the top eigenvalue of the task-0 anchor Fisher.
    """
    stream = make_task_stream(TaskStreamSpec(StreamFamily.SINUSOID_REGRESSION, 2, 1.0, seed=seed,
                                             samples_per_task=256, eval_samples=64))
    spec = ModelSpec(Family.MLP, layer_sizes=(1, 16, 1))
    theta = models.init_params(spec, seed)
    sgd = ContinualConfig(lam=0.0, beta=0.0, eta=1e-2, batch_size=64)
    rng = np.random.default_rng(seed)
    train = stream[0].train
    for _ in range(train_steps):
        batch = [train[i] for i in rng.choice(len(train), sgd.batch_size, replace=False)]
        theta = trust_region_step(spec, theta, batch, [], [], sgd)
    anchor = finalize_task(spec, theta, stream[0], mode)
    fisher = anchor.fisher
    rho = fisher.rho if isinstance(fisher, RankOne) else float(np.linalg.eigvalsh(to_dense(fisher))[-1])
    cfg = MetaConfig(alpha=alpha, eta=1e-2, first_order=False)
    d = -models.grad(spec, theta, stream[1].train)
    d /= np.linalg.norm(d)
    sq = split_support_query([train[i] for i in rng.choice(len(train), 64, replace=False)], seed)
    replay = [train[i] for i in rng.choice(len(train), 32, replace=False)]
    return [equivalence_gap(spec, theta + r * d, anchor, replay, sq, cfg, alpha * rho).gap_II_C for r in deltas]


def gap_trend(seeds=range(10), deltas=(0.1, 0.05, 0.025), mode: FisherMode | str = FisherMode.RANK_ONE) -> list[float]:
    """Mean of :func:`two_task_gap_curve` over ``seeds``, one value per delta."""
    curves = np.array([two_task_gap_curve(s, deltas, mode) for s in seeds])
    return curves.mean(axis=0).tolist()


SUITES: dict[Suite, Callable[[int], list[Check]]] = {
    Suite.RANK_ONE_SQUARE: rank_one_square_checks,
    Suite.FISHER_IDENTITY: fisher_identity_checks,
    Suite.GRAD_CHECK: grad_check_checks,
    Suite.TAYLOR_LOCALITY: taylor_locality_checks,
    Suite.QUAD_EQUIVALENCE: quad_equivalence_checks,
}


def run_verify(suite: Suite | str = Suite.ALL, seed: int = 0) -> VerifyReport:
    suite = Suite(suite)
    chosen = list(SUITES) if suite is Suite.ALL else [suite]
    report = VerifyReport()
    for s in chosen:
        report.checks.extend(SUITES[s](seed))
    return report
