"""Continual-learning evaluation metrics: P, F and forward transfer.

Evaluation curves are treated as step functions (the last recorded value
is carried forward), both when reading P(t) at a point and when
integrating areas under the curve. Forward transfer for a task compares
the normalized AUC over its training window against a single-task
baseline trained from scratch over [0, delta]:

    FT = (AUC - AUC_b) / (1 - AUC_b)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MetricsError(ValueError):
    pass


@dataclass
class EvalCurve:
    task_id: int
    samples: list[tuple[float, float]]  # (global step, success rate)

    def __post_init__(self):
        steps = [s for s, _ in self.samples]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise MetricsError("curve steps must be strictly increasing")
        if any(not (0.0 <= r <= 1.0) for _, r in self.samples):
            raise MetricsError("success rates must lie in [0, 1]")

    def value_at(self, t: float) -> float:
        """Step-function lookup: last sample at or before t."""
        val = None
        for step, rate in self.samples:
            if step <= t:
                val = rate
            else:
                break
        if val is None:
            raise MetricsError(
                f"task {self.task_id}: no sample at or before step {t}")
        return val

    def auc(self, start: float, end: float) -> float:
        """Mean of the step-carried curve over [start, end]."""
        if end <= start:
            raise MetricsError("empty integration window")
        total = 0.0
        t = start
        current = self.value_at(start)
        for step, rate in self.samples:
            if step <= start:
                continue
            if step >= end:
                break
            total += current * (step - t)
            t = step
            current = rate
        total += current * (end - t)
        return total / (end - start)


@dataclass
class MetricsResult:
    P: float
    F: float
    FT_mean: float
    FT_per_task: list[float]
    AUC: list[float]
    AUC_b: list[float]
    delta: float


def average_performance(curves: list[EvalCurve], t: float) -> float:
    if not curves:
        raise MetricsError("no curves")
    return float(np.mean([c.value_at(t) for c in curves]))


def forgetting(curves: list[EvalCurve], delta: float, n_tasks: int) -> float:
    """Mean of p_k(k*delta) - p_k(n*delta) over tasks (1-based k)."""
    if len(curves) != n_tasks:
        raise MetricsError("curve count does not match task count")
    losses = []
    for k, curve in enumerate(curves, start=1):
        losses.append(curve.value_at(k * delta) - curve.value_at(n_tasks * delta))
    return float(np.mean(losses))


def forward_transfer(curve: EvalCurve, baseline: EvalCurve, delta: float,
                     task_index: int) -> tuple[float, float, float]:
    """Returns (FT, AUC, AUC_b); task_index is 1-based. FT is NaN when the
    baseline already saturates (AUC_b = 1)."""
    auc = curve.auc((task_index - 1) * delta, task_index * delta)
    auc_b = baseline.auc(0.0, delta)
    if auc_b >= 1.0:
        return float("nan"), auc, auc_b
    return (auc - auc_b) / (1.0 - auc_b), auc, auc_b


def compute_metrics(curves: list[EvalCurve], delta: float,
                    baselines: list[EvalCurve] | None = None) -> MetricsResult:
    n = len(curves)
    P = average_performance(curves, n * delta)
    F = forgetting(curves, delta, n)
    fts, aucs, aucbs = [], [], []
    if baselines is not None:
        if len(baselines) != n:
            raise MetricsError("need one baseline curve per task")
        for k, (curve, base) in enumerate(zip(curves, baselines), start=1):
            ft, auc, auc_b = forward_transfer(curve, base, delta, k)
            fts.append(ft)
            aucs.append(auc)
            aucbs.append(auc_b)
    ft_mean = float(np.nanmean(fts)) if fts else float("nan")
    return MetricsResult(P=P, F=F, FT_mean=ft_mean, FT_per_task=fts,
                         AUC=aucs, AUC_b=aucbs, delta=delta)


def read_eval_csv(path) -> list[EvalCurve]:
    """Read the harness eval-curve CSV (global_step, task_id, success_rate)."""
    rows: dict[int, list[tuple[float, float]]] = {}
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header != ["global_step", "task_id", "success_rate"]:
            raise MetricsError(f"unexpected eval CSV header: {header}")
        for line in fh:
            if not line.strip():
                continue
            step_s, task_s, rate_s = line.strip().split(",")
            rows.setdefault(int(task_s), []).append((float(step_s), float(rate_s)))
    return [EvalCurve(task_id=k, samples=sorted(v)) for k, v in sorted(rows.items())]


def write_metrics_csv(path, result: MetricsResult):
    with open(path, "w") as fh:
        fh.write("task_id,AUC,AUC_b,FT\n")
        for k in range(len(result.FT_per_task)):
            fh.write(f"{k},{result.AUC[k]:.6f},{result.AUC_b[k]:.6f},"
                     f"{result.FT_per_task[k]:.6f}\n")
        fh.write(f"# P={result.P:.6f} F={result.F:.6f} FT={result.FT_mean:.6f}\n")
