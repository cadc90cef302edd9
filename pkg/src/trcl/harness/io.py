"""Result files: per-run CSV (+ metadata sidecar) and the cross-method summary."""

from __future__ import annotations

import csv
import io
import json
import statistics
from pathlib import Path
from typing import Optional

from .. import __version__
from .metrics import DEFAULT_THRESHOLDS, MetricsLog, compute_forgetting, final_average_eval, steps_to_reconverge

CSV_HEADER = ("step", "task_in_training", "task_id", "eval_loss")


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def log_to_csv(log: MetricsLog) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in log.records:
        for t in sorted(r.per_task_eval):
            w.writerow((r.step, r.task_in_training, t, repr(float(r.per_task_eval[t]))))
    return buf.getvalue()


def log_to_json(log: MetricsLog) -> dict:
    return {
        "eval_interval": log.eval_interval,
        "task_starts": list(log.task_starts),
        "diverged": log.diverged,
        "records": [{"step": r.step, "task_in_training": r.task_in_training,
                     "per_task_eval": {str(t): float(v) for t, v in sorted(r.per_task_eval.items())}}
                    for r in log.records],
    }


def export_results(log: MetricsLog, path, format: str = "csv", metadata: Optional[dict] = None) -> Path:
    """Write ``log`` to ``path`` plus a ``<path>.meta.json`` sidecar. Output is byte-stable."""
    path = Path(path)
    if format == "csv":
        _write(path, log_to_csv(log))
    elif format == "json":
        _write(path, _dumps(log_to_json(log)))
    else:
        raise ValueError(f"unknown format {format!r}")
    meta = {"library_version": __version__, "diverged": log.diverged, **(metadata or {})}
    _write(path.with_name(path.name + ".meta.json"), _dumps(meta))
    return path


def _median(values: list) -> Optional[float]:
    # absent (never re-converged) counts as +inf
    med = statistics.median([float("inf") if v is None else v for v in values])
    return None if med == float("inf") else med


def summarize(logs_by_method: dict, thresholds=DEFAULT_THRESHOLDS) -> dict:
    """Forgetting table and steps-to-reconverge table from ``{method: {seed: MetricsLog}}``."""
    forgetting, avg_forgetting, final_eval, reconv = {}, {}, {}, []
    for method, logs in sorted(logs_by_method.items()):
        runs = [lg for lg in logs.values() if lg.records and not lg.diverged]
        if not runs:
            continue
        per = [compute_forgetting(lg) for lg in runs]
        tasks = sorted(per[0].per_task)
        forgetting[method] = {str(t): statistics.fmean(f.per_task[t] for f in per) for t in tasks}
        avg_forgetting[method] = statistics.fmean(f.average for f in per)
        final_eval[method] = statistics.fmean(final_average_eval(lg) for lg in runs)
        starts = runs[0].task_starts
        for task in tasks[:-1]:
            for thr in thresholds:
                for trans in [s for s in starts[1:] if s > starts[task]]:
                    vals = [steps_to_reconverge(lg, task, trans, thr) for lg in runs]
                    reconv.append({"method": method, "task": task, "threshold": thr.label,
                                   "transition_step": trans, "steps_median": _median(vals),
                                   "per_seed": vals})
    return {
        "library_version": __version__,
        "forgetting": forgetting,
        "average_forgetting": avg_forgetting,
        "final_average_eval_loss": final_eval,
        "steps_to_reconverge": reconv,
    }


def write_summary(summary: dict, path) -> Path:
    path = Path(path)
    _write(path, _dumps(summary))
    return path
