"""Interpolated grid-optimization baseline: record a gain/task grid once,
pick the cheapest feasible gains per task, and linearly interpolate gains
across tasks at query time.

Interpolated gains are deliberately not safety-checked; measuring how often
that goes wrong is the point of the comparison experiments.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GridRecord:
    x_opt: np.ndarray
    x_tau: np.ndarray
    cost: float
    constraint: float
    feasible_run: bool  # False when the simulation went unstable


@dataclass
class GainGrid:
    """All recorded (gains, task) combinations plus per-task optima."""

    gain_values: list  # per-gain-dimension value lists
    task_values: list  # per-task-dimension value lists
    records: list = field(default_factory=list)

    @property
    def task_points(self) -> np.ndarray:
        return np.array(list(itertools.product(*self.task_values)))

    @property
    def n_cells(self) -> int:
        n = 1
        for vals in self.gain_values + self.task_values:
            n *= len(vals)
        return n

    def save(self, path) -> None:
        rows = np.array(
            [
                np.concatenate([r.x_opt, r.x_tau, [r.cost, r.constraint, float(r.feasible_run)]])
                for r in self.records
            ]
        )
        d_opt = len(self.gain_values)
        d_tau = len(self.task_values)
        header = ",".join(
            [f"g{i}" for i in range(d_opt)]
            + [f"t{i}" for i in range(d_tau)]
            + ["cost", "constraint", "feasible_run"]
        )
        np.savetxt(path, rows, delimiter=",", header=header, comments="", fmt="%.10g")


def record_grid(gain_values, task_values, evaluate) -> GainGrid:
    """Simulate every permutation of gains x tasks once.

    ``evaluate(x_opt, x_tau) -> (cost, constraint, ok)`` runs one experiment;
    ``ok`` False marks an unstable run, stored as an infeasible record.
    """
    gain_values = [list(v) for v in gain_values]
    task_values = [list(v) for v in task_values]
    if not gain_values or not task_values or any(len(v) == 0 for v in gain_values + task_values):
        raise ValueError("gain and task grids must be non-empty")
    grid = GainGrid(gain_values, task_values)
    for task in itertools.product(*task_values):
        for gains in itertools.product(*gain_values):
            x_opt = np.array(gains, dtype=float)
            x_tau = np.array(task, dtype=float)
            f, q, ok = evaluate(x_opt, x_tau)
            grid.records.append(GridRecord(x_opt, x_tau, float(f), float(q), bool(ok)))
    logger.info("recorded %d grid candidates", len(grid.records))
    return grid


@dataclass
class OptimumTable:
    """Per recorded task: the feasible candidate with minimal cost."""

    task_values: list
    gains: dict  # task tuple -> gain vector
    infeasible_tasks: list

    def gains_at(self, task_tuple) -> np.ndarray | None:
        return self.gains.get(tuple(task_tuple))


def select_per_task_optima(grid: GainGrid, c) -> OptimumTable:
    """Feasibility-filtered argmin of recorded cost per task.

    ``c`` is the constraint limit (scalar or callable of the task). Ties go
    to the lexicographically smallest gain vector. Tasks with no feasible
    candidate are flagged; queries there fall back to the caller's seed.
    """
    table: dict = {}
    infeasible = []
    for task in itertools.product(*grid.task_values):
        limit = float(c(np.array(task))) if callable(c) else float(c)
        recs = [
            r
            for r in grid.records
            if tuple(r.x_tau) == task and r.feasible_run and r.constraint <= limit
        ]
        if not recs:
            infeasible.append(task)
            continue
        best = min(recs, key=lambda r: (r.cost, tuple(r.x_opt)))
        table[task] = best.x_opt.copy()
    if infeasible:
        logger.warning("%d tasks have no feasible grid candidate", len(infeasible))
    return OptimumTable(grid.task_values, table, infeasible)


def _interp_weights(values: list[float], x: float) -> list[tuple[int, float]]:
    """Linear interpolation/extrapolation weights on a 1-D sorted grid."""
    v = np.asarray(values, dtype=float)
    if v.size == 1:
        return [(0, 1.0)]
    i = int(np.clip(np.searchsorted(v, x) - 1, 0, v.size - 2))
    t = (x - v[i]) / (v[i + 1] - v[i])  # unclipped: linear beyond the hull
    return [(i, 1.0 - t), (i + 1, t)]


def lpv_interpolate(
    table: OptimumTable,
    task: np.ndarray,
    fallback: np.ndarray,
    gain_bounds: np.ndarray | None = None,
) -> np.ndarray:
    """Per-gain multilinear interpolation of the per-task optima.

    Beyond the recorded hull the edge cells extrapolate linearly, clipped to
    ``gain_bounds``. Cells without a feasible optimum contribute the
    ``fallback`` gains (and a task exactly on such a cell returns them).
    """
    task = np.atleast_1d(np.asarray(task, dtype=float))
    if task.size != len(table.task_values):
        raise ValueError("task dimension does not match the recorded grid")
    axes = [_interp_weights(vals, x) for vals, x in zip(table.task_values, task)]
    out = None
    for combo in itertools.product(*axes):
        idx = tuple(table.task_values[d][i] for d, (i, _) in enumerate(combo))
        w = float(np.prod([wt for _, wt in combo]))
        if w == 0.0:
            continue
        g = table.gains_at(idx)
        if g is None:
            g = fallback
        out = w * g if out is None else out + w * g
    if gain_bounds is not None:
        out = np.clip(out, gain_bounds[:, 0], gain_bounds[:, 1])
    return out
