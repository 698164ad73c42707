"""Safe run-to-run tuning loop with active (learning) and passive
(exploitation) phases over a pair of cost/constraint GP models.

The proposal step is a pure function of an immutable snapshot, so the serial
loop and parallel workers share one code path and produce identical decisions
for identical snapshots and seeds.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .gp import GpModel, validate_hyperparameters
from .pso import PsoConfig, pso_optimize
from .safeset import (
    EvaluationHistory,
    SafeSeed,
    expander_set,
    optimistic_member,
    prepare_expanders,
    safe_set_from_history,
)

logger = logging.getLogger(__name__)

ACTIVE = "active"
PASSIVE = "passive"

# RNG stream tags so that every consumer derives an independent,
# order-independent stream from (base_seed, stream, iteration)
STREAM_PSO = 1
STREAM_FINAL = 2
STREAM_TRACK = 3


def derive_rng_seed(base_seed: int, stream: int, iteration: int) -> np.random.SeedSequence:
    return np.random.SeedSequence((int(base_seed), int(stream), int(iteration)))


@dataclass(frozen=True)
class Criteria:
    """Phase-switch rules: how many new points end the active phase, and
    which events restart it."""

    termination_points: int = 30
    restart_on_violation: bool = True
    restart_on_new_task: bool = True

    def __post_init__(self):
        if self.termination_points < 0:
            raise ValueError("termination count must be non-negative")


@dataclass(frozen=True)
class GooseConfig:
    """Static configuration of the tuning loop."""

    bounds: np.ndarray  # (d_opt, 2) box for the optimization variables
    c: float | Callable[[np.ndarray], float]
    xi: float
    criteria: Criteria = Criteria()
    data_limit: int | None = None
    mode: str = "modified"  # "modified" | "baseline"
    epsilon: float | None = None  # baseline exploration threshold; None -> 6*sigma_n^q
    task_change_threshold: np.ndarray | None = None  # None -> half the task lengthscales
    pso_particles: int = 50
    pso_iterations: int = 100
    pso_inertia: float = 0.7
    pso_cognitive: float = 1.5
    pso_social: float = 1.5
    pso_v0_scale: float = 0.5
    base_seed: int = 0

    def __post_init__(self):
        bounds = np.atleast_2d(np.asarray(self.bounds, dtype=float))
        if bounds.shape[1] != 2 or np.any(bounds[:, 0] >= bounds[:, 1]):
            raise ValueError("bounds must be (d_opt, 2) with low < high")
        if self.mode not in ("modified", "baseline"):
            raise ValueError(f"unknown mode {self.mode!r}")
        object.__setattr__(self, "bounds", bounds)

    @property
    def d_opt(self) -> int:
        return self.bounds.shape[0]

    def limit(self, task: np.ndarray) -> float:
        if callable(self.c):
            return float(self.c(np.atleast_1d(np.asarray(task, dtype=float))))
        return float(self.c)


@dataclass(frozen=True)
class GooseSnapshot:
    """Immutable view of the tuner state that proposal computation needs."""

    gp_f: GpModel
    gp_q: GpModel
    history_x_opts: np.ndarray  # (n, d_opt) evaluated parameter vectors
    seed: SafeSeed
    config: GooseConfig
    phase: str
    version: int = 0


@dataclass(frozen=True)
class StepResult:
    """Outcome of one proposal."""

    x_opt: np.ndarray
    acq_value: float
    used_seed_fallback: bool
    pso_feasible: bool
    ops: int  # deterministic work count, used by the virtual clock
    phase: str


def _joint(X: np.ndarray, task: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(X)
    task = np.atleast_1d(task)
    if task.size == 0:
        return X
    return np.hstack([X, np.tile(task, (X.shape[0], 1))])


def _history_safe_set(snap: GooseSnapshot, task: np.ndarray):
    x_opts = snap.history_x_opts
    if x_opts.size:
        candidates = _joint(x_opts, task)
        mask = snap.gp_q.ucb(candidates) <= snap.config.limit(task)
        if np.any(mask):
            return np.unique(x_opts[mask], axis=0), False
    return snap.seed.points.copy(), True


def _expander_candidates(
    snap: GooseSnapshot, safe_points: np.ndarray, used_seed: bool, task: np.ndarray, c: float
) -> np.ndarray:
    """Certified candidates on the periphery of the safe set.

    Expanders must lie inside the pessimistic set, so the seed fallback
    yields no candidates (a seed is trusted, not certified). Evaluated safe
    points themselves are essentially noise-width, so each spawns a
    deterministic ring of offsets at ~0.7 lengthscales which is then
    filtered back through the pessimistic criterion.
    """
    if used_seed:
        return np.empty((0, snap.config.d_opt))
    cfg = snap.config
    ls = snap.gp_q.kernel.lengthscales[: cfg.d_opt]
    offsets = np.vstack([np.diag(0.7 * ls), np.diag(-0.7 * ls)])
    cloud = (safe_points[:, None, :] + offsets[None, :, :]).reshape(-1, cfg.d_opt)
    cloud = np.clip(cloud, cfg.bounds[:, 0], cfg.bounds[:, 1])
    candidates = np.unique(np.vstack([safe_points, cloud]), axis=0)
    mask = snap.gp_q.ucb(_joint(candidates, task)) <= c
    return candidates[mask]


def compute_optimizer(
    snap: GooseSnapshot, task: np.ndarray, iteration: int, acquisition: str | None = None
) -> StepResult:
    """One acquisition step on a snapshot: build the safe set, run the swarm.

    ``acquisition`` defaults by phase: lcb while learning, ucb while
    exploiting. The candidate returned is pessimistically safe for ``task``
    (or a seed point); in baseline mode feasibility is optimistic-set
    membership instead.
    """
    cfg = snap.config
    task = np.atleast_1d(np.asarray(task, dtype=float))
    c = cfg.limit(task)
    if acquisition is None:
        acquisition = "lcb" if snap.phase == ACTIVE else "ucb"

    safe_points, used_seed = _history_safe_set(snap, task)
    n_data = snap.gp_f.n

    if acquisition == "lcb":
        acq = lambda X: snap.gp_f.lcb(_joint(X, task))
    else:
        acq = lambda X: snap.gp_f.ucb(_joint(X, task))

    ops = 0
    if cfg.mode == "baseline" and snap.phase == ACTIVE:
        eps = cfg.epsilon if cfg.epsilon is not None else 6.0 * snap.gp_q.noise_std
        candidates = _expander_candidates(snap, safe_points, used_seed, task, c)
        expanders = expander_set(snap.gp_q, candidates, eps, task)
        data = prepare_expanders(snap.gp_q, expanders, task)
        n_exp = data.points.shape[0]
        feasible = lambda X: optimistic_member(snap.gp_q, data, X, eps, c, task)
        # candidate screening plus lcb + gradient at each expander
        ops += (candidates.shape[0] + 2 * n_exp) * (n_data * (n_data + 1) + n_data)
        per_eval_extra = n_exp
    else:
        feasible = lambda X: snap.gp_q.ucb(_joint(X, task)) <= c
        per_eval_extra = 0

    pso_cfg = PsoConfig(
        bounds=cfg.bounds,
        lengthscales=snap.gp_f.kernel.lengthscales[: cfg.d_opt],
        n_particles=cfg.pso_particles,
        inertia=cfg.pso_inertia,
        cognitive=cfg.pso_cognitive,
        social=cfg.pso_social,
        max_iterations=cfg.pso_iterations,
        v0_scale=cfg.pso_v0_scale,
    )
    rng_seed = derive_rng_seed(cfg.base_seed, STREAM_PSO, iteration)
    result = pso_optimize(acq, feasible, safe_points, pso_cfg, rng_seed)

    # work model: every evaluated position costs two GP posteriors
    # (n kernel rows + an n^2 triangular solve each) plus a size-independent
    # evaluation overhead, in addition to the safe-set screening and any
    # expander work; drives the deterministic virtual compute clock
    ops += result.n_evals * (2 * n_data * (n_data + 1) + 600 + per_eval_extra)
    ops += snap.history_x_opts.shape[0] * (n_data * (n_data + 1) + 1)

    return StepResult(
        x_opt=result.x,
        acq_value=result.value,
        used_seed_fallback=used_seed,
        pso_feasible=result.feasible,
        ops=ops,
        phase=snap.phase,
    )


class GooseTuner:
    """Single-owner tuning state machine.

    Mutation happens only through :meth:`report_measurement` and the phase
    logic; proposals are computed on immutable snapshots, which parallel
    executors may also consume.
    """

    def __init__(
        self,
        gp_f: GpModel,
        gp_q: GpModel,
        seed: SafeSeed,
        config: GooseConfig,
        validate: bool = True,
    ):
        if gp_f.dim != gp_q.dim:
            raise ValueError("cost and constraint models must share one input space")
        if seed.dim != config.d_opt:
            raise ValueError("seed dimension must match the optimization box")
        report = validate_hyperparameters(
            gp_f, gp_q, c=config.limit(np.zeros(gp_f.dim - config.d_opt)), xi=config.xi
        )
        if not report.ok:
            msg = f"prior consistency check failed: {report.describe()}"
            if validate:
                raise ValueError(msg)
            logger.warning("%s (override in effect)", msg)
        self.gp_f = gp_f
        self.gp_q = gp_q
        self.seed = seed
        self.config = config
        self.history = EvaluationHistory()
        self.phase = ACTIVE
        self.points_in_phase = 0
        self.version = 0
        self.last_task: np.ndarray | None = None
        self.violations = 0
        self.restarts = 0
        self.validity = report

    @property
    def d_tau(self) -> int:
        return self.gp_f.dim - self.config.d_opt

    def snapshot(self) -> GooseSnapshot:
        return GooseSnapshot(
            gp_f=self.gp_f,
            gp_q=self.gp_q,
            history_x_opts=self.history.x_opts().reshape(len(self.history), self.config.d_opt)
            if len(self.history)
            else np.empty((0, self.config.d_opt)),
            seed=self.seed,
            config=self.config,
            phase=self.phase,
            version=self.version,
        )

    # -- phase steps -----------------------------------------------------------

    def observe_task(self, task: np.ndarray) -> None:
        """Track the applied task; a large jump restarts learning."""
        task = np.atleast_1d(np.asarray(task, dtype=float))
        if (
            self.phase == PASSIVE
            and self.config.criteria.restart_on_new_task
            and self.last_task is not None
            and self._task_changed(task)
        ):
            logger.info("new task detected (%s -> %s); restarting", self.last_task, task)
            self._restart()
        self.last_task = task

    def _task_changed(self, task: np.ndarray) -> bool:
        thr = self.config.task_change_threshold
        if thr is None:
            ls_tau = self.gp_f.kernel.lengthscales[self.config.d_opt :]
            thr = 0.5 * ls_tau
        if np.size(thr) == 0:
            return False
        return bool(np.any(np.abs(task - self.last_task) > np.asarray(thr)))

    def active_step(self, task: np.ndarray, iteration: int) -> StepResult:
        if self.phase != ACTIVE:
            raise RuntimeError("active_step requires the active phase")
        self.observe_task(task)
        return compute_optimizer(self.snapshot(), task, iteration)

    def passive_step(self, task: np.ndarray, iteration: int) -> StepResult:
        if self.phase != PASSIVE:
            raise RuntimeError("passive_step requires the passive phase")
        self.observe_task(task)  # may flip phase back to active on a task jump
        return compute_optimizer(self.snapshot(), task, iteration)

    def propose(self, task: np.ndarray, iteration: int) -> StepResult:
        """Phase-dispatching step used by the experiment loops."""
        self.observe_task(task)
        return compute_optimizer(self.snapshot(), task, iteration)

    def final_optimum(self, task: np.ndarray, salt: int = 0) -> StepResult:
        """Post-experiment pessimistic optimum: min ucb over the safe set.

        Pure query: the tuner state is not modified.
        """
        snap = replace(self.snapshot(), phase=PASSIVE)
        it = 1_000_000 + salt  # distinct RNG stream from the run itself
        return compute_optimizer(snap, task, it, acquisition="ucb")

    # -- measurement intake ----------------------------------------------------

    def report_measurement(
        self, x_opt: np.ndarray, task: np.ndarray, y_f: float, y_q: float, iteration: int
    ) -> int:
        """Record one measurement; returns the ops charged for model updates.

        Active phase: the observation extends both GPs (evicting the oldest
        point first when the window is full) and advances the termination
        counter. Passive phase: models stay frozen; the measurement is only
        monitored for the restart criteria.
        """
        if not (np.isfinite(y_f) and np.isfinite(y_q)):
            raise ValueError(f"measurements must be finite, got f={y_f}, q={y_q}")
        x_opt = np.atleast_1d(np.asarray(x_opt, dtype=float))
        task = np.atleast_1d(np.asarray(task, dtype=float))
        violated = y_q > self.config.limit(task)
        if violated:
            self.violations += 1
        self.history.append(x_opt, task, y_f, y_q, iteration, self.phase)

        ops = 0
        if self.phase == ACTIVE:
            x = np.concatenate([x_opt, task])
            limit = self.config.data_limit
            if limit is not None:
                while self.gp_f.n >= limit:
                    self.gp_f = self.gp_f.remove_oldest()
                    self.gp_q = self.gp_q.remove_oldest()
                    ops += 2 * self.gp_f.n**3
            self.gp_f = self.gp_f.add_observation(x, y_f)
            self.gp_q = self.gp_q.add_observation(x, y_q)
            ops += 2 * self.gp_f.n**2
            self.version += 1
            self.points_in_phase += 1
            if self.points_in_phase >= self.config.criteria.termination_points:
                logger.info("termination criterion met; entering passive phase")
                self.phase = PASSIVE
                self.points_in_phase = 0
        else:
            if violated and self.config.criteria.restart_on_violation:
                logger.info("constraint violation in passive phase; restarting")
                self._restart()
        return ops

    def _restart(self) -> None:
        self.phase = ACTIVE
        self.points_in_phase = 0
        self.restarts += 1
