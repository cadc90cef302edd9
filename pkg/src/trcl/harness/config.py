"""Config files (YAML or JSON) mirroring TaskStreamSpec / RunConfig field names.

Example::

    stream:
      family: GaussianShift
      n_tasks: 5
      heterogeneity: 4.0
      seed: 0
    run:
      method: TrustRegion
      continual: {lambda: 1.0, beta: 1.0, eta: 0.01, fisher_mode: Full,
                  steps_per_task: 500, batch_size: 64}
      eval_interval: 10
      seeds: [0, 1, 2, 3, 4]

``run.model`` is optional and defaults to the stream family's toy model.
"""

from __future__ import annotations

import copy
import itertools
import json
from dataclasses import fields
from pathlib import Path
from typing import Any

import yaml

from ..continual import ContinualConfig
from ..meta import MetaConfig
from ..models import ModelSpec, NoiseSchedule
from .runner import RunConfig
from .streams import TaskStreamSpec, default_model


class ConfigError(ValueError):
    pass


def read_tree(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        tree = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(tree, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return tree


def _build(cls, tree: Any, where: str, rename: dict | None = None):
    if not isinstance(tree, dict):
        raise ConfigError(f"{where}: expected a mapping")
    rename = rename or {}
    names = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in tree.items():
        name = rename.get(key, key)
        if name not in names:
            raise ConfigError(f"{where}: unknown key {key!r}")
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _model(tree: dict) -> ModelSpec:
    tree = dict(tree)
    sched = tree.pop("schedule", None)
    if sched is not None:
        if not isinstance(sched, dict):
            raise ConfigError("run.model.schedule: expected a mapping")
        try:
            tree["schedule"] = NoiseSchedule.linear(**sched)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"run.model.schedule: {exc}") from exc
    return _build(ModelSpec, tree, "run.model")


def parse_config(tree: dict) -> tuple[TaskStreamSpec, RunConfig]:
    if "stream" not in tree or "run" not in tree:
        raise ConfigError("config needs 'stream' and 'run' sections")
    extra = set(tree) - {"stream", "run"}
    if extra:
        raise ConfigError(f"unknown top-level keys: {sorted(extra)}")
    stream = _build(TaskStreamSpec, tree["stream"], "stream")
    run = dict(tree["run"])
    model = _model(run.pop("model")) if run.get("model") is not None else default_model(stream)
    run.pop("model", None)
    continual = _build(ContinualConfig, run.pop("continual", {}) or {}, "run.continual", {"lambda": "lam"})
    meta = run.pop("meta", None)
    meta = _build(MetaConfig, meta, "run.meta") if meta is not None else None
    run.update(model=model, continual=continual, meta=meta)
    return stream, _build(RunConfig, run, "run")


def load_config(path) -> tuple[TaskStreamSpec, RunConfig]:
    return parse_config(read_tree(path))


def _set_path(tree: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = tree
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"grid key {dotted!r} crosses a non-mapping")
    node[keys[-1]] = value


def expand_grid(base: dict, grid: dict) -> list[tuple[dict, dict]]:
    """Cartesian product of ``grid`` (dotted key -> list of values) applied to ``base``."""
    if not grid:
        return [({}, copy.deepcopy(base))]
    keys = sorted(grid)
    for k in keys:
        if not isinstance(grid[k], list) or not grid[k]:
            raise ConfigError(f"grid entry {k!r} must be a nonempty list")
    out = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        tree = copy.deepcopy(base)
        point = dict(zip(keys, combo))
        for k, v in point.items():
            _set_path(tree, k, v)
        out.append((point, tree))
    return out


def config_to_tree(stream: TaskStreamSpec, run: RunConfig) -> dict:
    """Plain-data description of a run for metadata sidecars."""
    m = run.model
    model = {"family": m.family.value, "layer_sizes": list(m.layer_sizes), "activation": m.activation,
             "dim": m.dim, "time_features": m.time_features}
    if m.schedule is not None:
        model["schedule_betas"] = m.schedule.betas.tolist()
    c = run.continual
    return {
        "stream": {"family": stream.family.value, "n_tasks": stream.n_tasks, "heterogeneity": stream.heterogeneity,
                   "seed": stream.seed, "samples_per_task": stream.samples_per_task,
                   "eval_samples": stream.eval_samples, "dim": stream.dim},
        "run": {
            "method": run.method.value,
            "model": model,
            "continual": {"lambda": c.lam, "beta": c.beta, "eta": c.eta, "fisher_mode": c.fisher_mode.value,
                          "trust_radius": c.trust_radius, "steps_per_task": c.steps_per_task,
                          "batch_size": c.batch_size},
            "meta": None if run.meta is None else {"alpha": run.meta.alpha, "eta": run.meta.eta,
                                                   "inner_steps": run.meta.inner_steps,
                                                   "first_order": run.meta.first_order},
            "eval_interval": run.eval_interval,
            "seeds": list(run.seeds),
            "replay_source": run.replay_source,
            "buffer_capacity": run.buffer_capacity,
        },
    }
