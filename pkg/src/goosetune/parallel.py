"""Parallel execution schemes for the tuning loop.

Two schemes share one manager/worker architecture: a receding-horizon scheme
that precomputes optimizers for the next few predicted tasks, and a lookup
scheme that maintains a task-grid table of optimizers refreshed in a
neighborhood of each applied task (full refresh on phase switches).

Experiments run on a deterministic virtual clock: the machine cycle has a
fixed duration and worker compute time is charged from the deterministic
work count of each optimization job, so ignore rates and timings are
bit-reproducible. A thread-backed pool with the same snapshot-coherence
rules is provided for wall-clock operation.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import threading
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .goose import ACTIVE, GooseSnapshot, GooseTuner, StepResult, compute_optimizer

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TaskEntry:
    """One unit of optimization work: compute the optimizer for a task."""

    task: np.ndarray
    target: int | tuple  # iteration index (horizon) or grid cell index (lookup)
    phase: str
    seq: int  # enqueue order, consumed first come first served


@dataclass
class CellEntry:
    x_opt: np.ndarray
    value: float
    version: int  # snapshot version the optimizer was computed on; -1 = seed
    is_seed: bool


class OptimaGrid:
    """Task-grid lookup table of optimizers, initialized to the safe seed.

    Reads never block: a query returns the last published optimizer of the
    nearest cell (distance scaled by the per-dimension discretization, ties
    broken by the lexicographically smallest cell index).
    """

    def __init__(self, task_values, seed_point: np.ndarray, delta_tau):
        self.task_values = [np.asarray(v, dtype=float) for v in task_values]
        if not self.task_values:
            raise ValueError("lookup scheme needs a non-empty task grid")
        self.delta_tau = np.asarray(delta_tau, dtype=float)
        if self.delta_tau.size != len(self.task_values) or np.any(self.delta_tau <= 0):
            raise ValueError("delta_tau must be positive, one entry per task dimension")
        self.shape = tuple(len(v) for v in self.task_values)
        seed_point = np.asarray(seed_point, dtype=float)
        self.cells = {
            idx: CellEntry(seed_point.copy(), np.inf, -1, True)
            for idx in itertools.product(*(range(n) for n in self.shape))
        }

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    def cell_task(self, idx: tuple) -> np.ndarray:
        return np.array([self.task_values[d][i] for d, i in enumerate(idx)])

    def nearest_cell(self, task: np.ndarray) -> tuple:
        task = np.atleast_1d(np.asarray(task, dtype=float))
        best = None
        for idx in sorted(self.cells):
            d = np.linalg.norm((self.cell_task(idx) - task) / self.delta_tau)
            if best is None or d < best[0] - 1e-12:
                best = (d, idx)
        return best[1]

    def query(self, task: np.ndarray) -> np.ndarray:
        return self.cells[self.nearest_cell(task)].x_opt.copy()

    def neighborhood(self, applied_task: np.ndarray, k: float) -> list[tuple]:
        """Cells with |cell - applied| < k * delta_tau in every dimension."""
        applied_task = np.atleast_1d(np.asarray(applied_task, dtype=float))
        if k <= 0:
            return []
        out = []
        for idx in sorted(self.cells):
            gap = np.abs(self.cell_task(idx) - applied_task)
            if np.all(gap < k * self.delta_tau):
                out.append(idx)
        return out

    def publish(self, idx: tuple, x_opt: np.ndarray, value: float, version: int) -> None:
        self.cells[idx] = CellEntry(np.asarray(x_opt, dtype=float).copy(), value, version, False)


def lookup_query(grid: OptimaGrid, task: np.ndarray) -> np.ndarray:
    """Stored optimizer of the nearest grid cell; never blocks."""
    return grid.query(task)


def lookup_update(grid: OptimaGrid, applied_task: np.ndarray, k: float) -> list[tuple]:
    """Cell indices to refresh after observing ``applied_task``."""
    return grid.neighborhood(applied_task, k)


def phase_switch_refresh(grid: OptimaGrid) -> list[tuple]:
    """All cells: the acquisition changed, the whole table is stale."""
    return sorted(grid.cells)


@dataclass(frozen=True)
class ParallelConfig:
    scheme: str  # "para" | "lookup"
    workers: int = 4
    horizon: int = 4
    k: float = 1.0
    delta_tau: tuple = (0.3, 0.2)
    task_grid: tuple | None = None  # per-dimension value tuples (lookup)
    cycle_time: float = 2.4
    seconds_per_op: float = 2e-8
    ignore_passive: bool = True  # only count ignores that cost learning data

    def __post_init__(self):
        if self.scheme not in ("para", "lookup"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.workers < 1 or self.horizon < 1:
            raise ValueError("need at least one worker and a positive horizon")


Predictor = Callable[[int, int], list]
"""(next_iteration, horizon) -> predicted tasks for the next `horizon` runs."""


def perfect_predictor(schedule) -> Predictor:
    """Oracle predictor: reads the true schedule (clamped at its end)."""

    def predict(next_iteration: int, horizon: int):
        return [schedule[min(next_iteration + j, len(schedule) - 1)] for j in range(horizon)]

    return predict


def constant_hold_predictor(schedule) -> Predictor:
    """Assumes the task stays at its current value."""

    def predict(next_iteration: int, horizon: int):
        current = schedule[min(next_iteration - 1, len(schedule) - 1)] if next_iteration else schedule[0]
        return [current for _ in range(horizon)]

    return predict


@dataclass
class IterationRecord:
    iteration: int
    task: np.ndarray
    x_opt: np.ndarray
    y_f: float
    y_q: float
    phase: str
    violation: bool
    used_seed: bool
    mispredicted: bool
    accepted: bool
    virtual_time: float
    compute_ops: int


@dataclass
class ParallelRunResult:
    records: list[IterationRecord] = field(default_factory=list)
    ignored: int = 0
    seed_uses: int = 0  # iterations that applied the seed for any reason
    scheduling_misses: int = 0  # optimizer not computed in time
    mispredictions: int = 0
    points_added: int = 0
    finished_at: float = 0.0
    termination_time: float | None = None  # when the stop condition was hit
    phase_switches: int = 0
    initial_refresh_done_at: float | None = None


class _Worker:
    __slots__ = ("busy_until",)

    def __init__(self):
        self.busy_until = 0.0


class ParallelCoordinator:
    """Virtual-time manager: one tuner owner, a FIFO task queue, m workers.

    Workers always compute on the manager's current snapshot. A measurement
    can only be folded into the models when every worker is idle and the
    queue is empty (all processes in the same phase with the same data);
    otherwise it is ignored and only counted.
    """

    def __init__(
        self,
        tuner: GooseTuner,
        config: ParallelConfig,
        predictor: Predictor | None = None,
        seed_point: np.ndarray | None = None,
    ):
        self.tuner = tuner
        self.config = config
        self.predictor = predictor
        seed_pt = seed_point if seed_point is not None else tuner.seed.points[0]
        self.seed_point = np.asarray(seed_pt, dtype=float)
        self.queue: deque[TaskEntry] = deque()
        self.workers = [_Worker() for _ in range(config.workers)]
        self._seq = 0
        self._job_salt = 0
        self.snapshot: GooseSnapshot = tuner.snapshot()
        # iteration -> (x_opt, step, task-it-was-computed-for, enqueue seq)
        self.optimizers: dict[int, tuple] = {}
        self.grid: OptimaGrid | None = None
        if config.scheme == "lookup":
            if config.task_grid is None:
                raise ValueError("lookup scheme requires a task grid")
            self.grid = OptimaGrid(config.task_grid, self.seed_point, config.delta_tau)
        self.manager_busy_until = 0.0
        self._completions: list = []  # heap of (finish_time, seq, entry, result)

    # -- queue management (spec operations) ---------------------------------

    def para_schedule(self, horizon_tasks, next_iteration: int) -> None:
        """Enqueue one optimization job per predicted task (receding horizon)."""
        for j, task in enumerate(horizon_tasks):
            self._enqueue(np.asarray(task, dtype=float), next_iteration + j, self.tuner.phase)

    def lookup_schedule(self, cell_indices) -> None:
        for idx in cell_indices:
            self._enqueue(self.grid.cell_task(idx), idx, self.tuner.phase)

    def _enqueue(self, task: np.ndarray, target, phase: str) -> None:
        self.queue.append(TaskEntry(task, target, phase, self._seq))
        self._seq += 1

    # -- DES core -------------------------------------------------------------

    def _start_jobs(self, now: float) -> None:
        """Hand queued jobs to idle workers, earliest-finishing worker first."""
        while self.queue:
            w = min(self.workers, key=lambda w: w.busy_until)
            start = max(w.busy_until, now, self.manager_busy_until)
            entry = self.queue.popleft()
            result = self._compute(entry)
            duration = result.ops * self.config.seconds_per_op
            finish = start + duration
            w.busy_until = finish
            heapq.heappush(self._completions, (finish, entry.seq, entry, result))

    def _compute(self, entry: TaskEntry) -> StepResult:
        if isinstance(entry.target, int):
            seed_index = entry.target  # horizon jobs reuse the serial stream
        else:
            self._job_salt += 1
            seed_index = 2_000_000 + self._job_salt
        return compute_optimizer(self.snapshot, entry.task, seed_index)

    def _publish_until(self, t: float) -> None:
        while self._completions and self._completions[0][0] <= t + 1e-12:
            finish, seq, entry, result = heapq.heappop(self._completions)
            if isinstance(entry.target, tuple):
                self.grid.publish(entry.target, result.x_opt, result.acq_value, self.snapshot.version)
            else:
                stored = self.optimizers.get(entry.target)
                if stored is None or stored[3] < seq:  # freshest computation wins
                    self.optimizers[entry.target] = (result.x_opt, result, entry.task, seq)

    def _all_idle(self, t: float) -> bool:
        return (
            not self.queue
            and all(w.busy_until <= t + 1e-12 for w in self.workers)
            and self.manager_busy_until <= t + 1e-12
        )

    # -- experiment loop --------------------------------------------------------

    def run(
        self,
        schedule,
        measure: Callable[[np.ndarray, np.ndarray, int], tuple[float, float]],
        stop_after_points: int | None = None,
    ) -> ParallelRunResult:
        """Drive the machine cycle over the task schedule in virtual time.

        ``measure(x_opt, task, iteration)`` performs one run and returns the
        cost/constraint pair. ``stop_after_points`` ends the experiment once
        that many observations entered the models (the completion of the
        active phase in the comparison protocol).
        """
        cfg = self.config
        res = ParallelRunResult()
        tuner = self.tuner
        schedule = [np.atleast_1d(np.asarray(t, dtype=float)) for t in schedule]
        tuner.observe_task(schedule[0])

        if cfg.scheme == "para":
            if self.predictor is None:
                raise ValueError("receding-horizon scheme requires a task predictor")
            self.para_schedule(self.predictor(0, cfg.horizon), 0)
        else:
            self.lookup_schedule(phase_switch_refresh(self.grid))
        self._start_jobs(0.0)

        last_phase = tuner.phase
        for k, task in enumerate(schedule):
            t_start = k * cfg.cycle_time
            self._publish_until(t_start)

            mispredicted = False
            if cfg.scheme == "para":
                got = self.optimizers.get(k)
                if got is None:
                    # no optimizer arrived in time: the machine runs the seed
                    x_opt, used_seed, ops = self.seed_point.copy(), True, 0
                    res.scheduling_misses += 1
                else:
                    x_opt, step, computed_for, _ = got
                    used_seed, ops = step.used_seed_fallback, step.ops
                    mispredicted = bool(np.any(np.abs(computed_for - task) > 1e-12))
            else:
                x_opt = lookup_query(self.grid, task)
                cell = self.grid.cells[self.grid.nearest_cell(task)]
                used_seed, ops = cell.is_seed, 0

            if used_seed:
                res.seed_uses += 1
            if mispredicted:
                res.mispredictions += 1

            y_f, y_q = measure(x_opt, task, k)
            t_meas = t_start + cfg.cycle_time
            self._publish_until(t_meas)

            accepted = self._all_idle(t_meas)
            phase_at_meas = tuner.phase
            if accepted:
                version_before = tuner.version
                update_ops = tuner.report_measurement(x_opt, task, y_f, y_q, k)
                self.manager_busy_until = t_meas + update_ops * cfg.seconds_per_op
                if tuner.version > version_before:
                    res.points_added += 1
                if cfg.scheme == "lookup" and res.initial_refresh_done_at is None:
                    res.initial_refresh_done_at = t_meas
                self.snapshot = tuner.snapshot()
                if k + 1 < len(schedule):
                    tuner.observe_task(schedule[k + 1])
                    self.snapshot = tuner.snapshot()
                    if tuner.phase != last_phase:
                        res.phase_switches += 1
                        if cfg.scheme == "lookup":
                            self.queue.clear()
                            self.lookup_schedule(phase_switch_refresh(self.grid))
                        last_phase = tuner.phase
                    if cfg.scheme == "para":
                        self.optimizers = {
                            i: v for i, v in self.optimizers.items() if i > k
                        }
                        self.para_schedule(self.predictor(k + 1, cfg.horizon), k + 1)
                    else:
                        self.lookup_schedule(lookup_update(self.grid, task, cfg.k))
                self._start_jobs(self.manager_busy_until)
            else:
                if phase_at_meas == ACTIVE or not cfg.ignore_passive:
                    res.ignored += 1

            violation = y_q > tuner.config.limit(task)
            res.records.append(
                IterationRecord(
                    iteration=k,
                    task=task.copy(),
                    x_opt=np.asarray(x_opt, dtype=float).copy(),
                    y_f=float(y_f),
                    y_q=float(y_q),
                    phase=phase_at_meas,
                    violation=bool(violation),
                    used_seed=bool(used_seed),
                    mispredicted=bool(mispredicted),
                    accepted=bool(accepted),
                    virtual_time=t_meas,
                    compute_ops=int(ops),
                )
            )
            res.finished_at = t_meas
            if (
                stop_after_points is not None
                and res.points_added >= stop_after_points
                and res.termination_time is None
            ):
                res.termination_time = t_meas
                break
        return res


class ThreadedWorkerPool:
    """Wall-clock worker pool with the same snapshot-coherence contract.

    Jobs compute on the snapshot current at submission; measurements are
    folded in only when no job is in flight, otherwise they are dropped and
    counted, mirroring the virtual-time coordinator.
    """

    def __init__(self, tuner: GooseTuner, workers: int = 4):
        self.tuner = tuner
        self.pool = ThreadPoolExecutor(max_workers=workers)
        self.lock = threading.Lock()
        self.snapshot = tuner.snapshot()
        self.in_flight = 0
        self.ignored = 0
        self.results: dict = {}

    def submit(self, task: np.ndarray, target) -> None:
        with self.lock:
            snap = self.snapshot
            self.in_flight += 1

        def job():
            try:
                result = compute_optimizer(snap, task, target if isinstance(target, int) else hash(target) % (2**31))
                with self.lock:
                    self.results[target] = result
            finally:
                with self.lock:
                    self.in_flight -= 1

        self.pool.submit(job)

    def collect(self, x_opt, task, y_f, y_q, iteration: int) -> bool:
        """Try to fold a measurement in; returns False when it was ignored."""
        with self.lock:
            if self.in_flight > 0:
                self.ignored += 1
                return False
            self.tuner.report_measurement(x_opt, task, y_f, y_q, iteration)
            self.snapshot = self.tuner.snapshot()
            return True

    def shutdown(self) -> None:
        self.pool.shutdown(wait=True)
