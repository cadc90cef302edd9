"""Sequential training loops for finetune / EWC / replay / trust region / FTML."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

from .. import models
from ..continual import ContinualConfig, TaskAnchor, finalize_task, trust_region_feasible, trust_region_step
from ..curvature import RankOne, to_dense, top_eigenpair
from ..fisher import gradient_collinearity
from ..meta import MetaConfig, TaskHandle, ftml_step
from ..models import Family, ModelSpec, TaskDataset
from ..replay import GenerativeReplaySource, ReplayBuffer, sample_replay_batch
from .metrics import MetricsLog, Record
from .streams import StreamFamily, TaskStreamSpec, sinusoid_target, uniform_inputs

log = logging.getLogger(__name__)


class Method(str, Enum):
    FINETUNE = "Finetune"
    EWC = "Ewc"
    REPLAY = "Replay"
    TRUST_REGION = "TrustRegion"
    FTML = "Ftml"


ANCHOR_METHODS = (Method.EWC, Method.TRUST_REGION)
REPLAY_METHODS = (Method.REPLAY, Method.TRUST_REGION, Method.FTML)


class DivergenceError(RuntimeError):
    def __init__(self, message: str, log: MetricsLog):
        super().__init__(message)
        self.log = log


@dataclass(frozen=True)
class RunConfig:
    method: Method
    model: ModelSpec
    continual: ContinualConfig = field(default_factory=ContinualConfig)
    meta: Optional[MetaConfig] = None
    eval_interval: int = 10
    seeds: tuple = (0,)
    replay_source: str = "buffer"  # or "generative"
    buffer_capacity: int = 2000

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if (self.meta is not None) != (self.method is Method.FTML):
            raise ValueError("meta config must be given exactly when method is Ftml")
        if self.eval_interval < 1:
            raise ValueError("eval_interval must be positive")
        if not self.seeds:
            raise ValueError("need at least one seed")
        if self.replay_source not in ("buffer", "generative"):
            raise ValueError("replay_source must be 'buffer' or 'generative'")
        if self.buffer_capacity < 1:
            raise ValueError("buffer_capacity must be positive")


def _effective(cfg: RunConfig) -> ContinualConfig:
    # each baseline is the trust-region step with the unused terms switched off
    c = cfg.continual
    if cfg.method is Method.FINETUNE:
        return replace(c, lam=0.0, beta=0.0)
    if cfg.method is Method.EWC:
        return replace(c, beta=0.0)
    if cfg.method is Method.REPLAY:
        return replace(c, lam=0.0)
    return c


def _seed(*key: int) -> int:
    return int(np.random.SeedSequence([k & 0xFFFFFFFF for k in key]).generate_state(2, np.uint64)[0] >> 1)


def _current_batch(data: TaskDataset, n: int, seed: int) -> list:
    rng = np.random.default_rng(seed)
    n = min(n, len(data.train))
    idx = rng.choice(len(data.train), size=n, replace=False)
    return [data.train[i] for i in idx]


def _eval(spec: ModelSpec, theta, stream, upto: int, seed: int) -> dict:
    # fixed evaluation noise per task so curves are comparable across steps and methods
    return {t: models.loss(spec, theta, stream[t].eval, _seed(seed, 7, t)) for t in range(upto + 1)}


class _Replay:
    def __init__(self, cfg: RunConfig, stream_spec: Optional[TaskStreamSpec]):
        self.cfg = cfg
        self.stream_spec = stream_spec
        self.source = ReplayBuffer(cfg.buffer_capacity) if cfg.replay_source == "buffer" else GenerativeReplaySource()

    def register(self, data: TaskDataset, theta, seed: int) -> None:
        if isinstance(self.source, ReplayBuffer):
            self.source.store(data.task_id, data.train, seed)
            return
        kwargs = {}
        if self.cfg.model.family is Family.MLP:
            if "amplitude" not in data.truth:
                raise ValueError("generative replay for Mlp needs a sinusoid task")
            kwargs = dict(input_sampler=uniform_inputs,
                          target_fn=sinusoid_target(data.truth["amplitude"], data.truth["phase"]))
        self.source.snapshot_generator(data.task_id, self.cfg.model, theta, **kwargs)

    def batch(self, task_id: int, n: int, seed: int) -> list:
        return sample_replay_batch(self.source, task_id, n, seed)


def run_continual(stream: list, cfg: RunConfig, seed: Optional[int] = None, stream_spec: Optional[TaskStreamSpec] = None) -> MetricsLog:
    """Train on ``stream`` in order and return the evaluation trace.

    Raises ``DivergenceError`` (carrying the partial, flagged log) when
    parameters or evaluation losses become non-finite.
    """
    seed = cfg.seeds[0] if seed is None else int(seed)
    spec = cfg.model
    cc = _effective(cfg)
    theta = models.init_params(spec, _seed(seed, 1))
    anchors: list[TaskAnchor] = []
    replay = _Replay(cfg, stream_spec)
    seen: list[int] = []
    out = MetricsLog(eval_interval=cfg.eval_interval)
    step = 0

    for k, data in enumerate(stream):
        out.task_starts.append(step)
        for j in range(cc.steps_per_task):
            s = _seed(seed, 2, k, j)
            batch = _current_batch(data, cc.batch_size, _seed(s, 0))
            if cfg.method is Method.FTML:
                theta = _ftml_update(spec, theta, data, batch, seen, replay, cfg, s)
            else:
                rb = []
                if cfg.method in REPLAY_METHODS:
                    rb = [(i, replay.batch(i, cc.batch_size, _seed(s, 1, i))) for i in seen]
                theta = trust_region_step(spec, theta, batch, rb, anchors, cc, _seed(s, 2))
            step += 1
            if not np.all(np.isfinite(theta)):
                out.diverged = True
                raise DivergenceError(f"non-finite parameters at step {step}", out)
            if step % cfg.eval_interval == 0:
                ev = _eval(spec, theta, stream, k, seed)
                if not all(np.isfinite(v) for v in ev.values()):
                    out.diverged = True
                    raise DivergenceError(f"non-finite eval loss at step {step}", out)
                out.append(Record(step, data.task_id, ev))

        if cfg.method in ANCHOR_METHODS:
            anchors.append(finalize_task(spec, theta, data, cc.fisher_mode, _seed(seed, 3, k)))
            if log.isEnabledFor(logging.INFO):
                _log_anchor(spec, theta, data, anchors[-1], _seed(seed, 3, k))
            if cc.trust_radius is not None:
                log.info("task %d: trust region (radius %g) feasible=%s", data.task_id, cc.trust_radius,
                         trust_region_feasible(theta, anchors, cc.trust_radius))
        if cfg.method in REPLAY_METHODS:
            replay.register(data, theta, _seed(seed, 4, k))
        seen.append(data.task_id)
    return out


def _log_anchor(spec, theta, data: TaskDataset, anchor: TaskAnchor, seed: int) -> None:
    f = anchor.fisher
    rho = f.rho if isinstance(f, RankOne) else top_eigenpair(to_dense(f)).value
    g = models.per_sample_grads(spec, theta, data.train[:256], seed)
    log.info("task %d anchor: top curvature %.4g, gradient collinearity %.3f%s", data.task_id, rho,
             gradient_collinearity(g), " (degenerate)" if anchor.degenerate else "")


def _ftml_update(spec, theta, data, batch, seen, replay, cfg: RunConfig, s: int):
    n = cfg.continual.batch_size
    handles = [TaskHandle(i, lambda sd, i=i: replay.batch(i, n, sd)) for i in seen]
    current = TaskHandle(data.task_id, lambda sd: batch)
    return ftml_step(spec, theta, handles, current, cfg.meta, _seed(s, 5)).params


def run_seeds(stream: list, cfg: RunConfig, stream_spec: Optional[TaskStreamSpec] = None) -> dict:
    return {s: run_continual(stream, cfg, s, stream_spec) for s in cfg.seeds}
