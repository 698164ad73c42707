"""Safe-set machinery: pessimistic membership, history-derived safe sets,
and the expander/optimistic-set operators used by the baseline tuner variant.

All functions are pure over GP snapshots and immutable history, so they can
be evaluated concurrently without coordination.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .gp import GpModel

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SafeSeed:
    """Parameter vectors known a priori to satisfy the constraint for every
    task; the fallback whenever no data-supported safe point exists."""

    points: np.ndarray  # (k, d_opt)

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[0] == 0:
            raise ValueError("safe seed must contain at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("safe seed must be finite")
        object.__setattr__(self, "points", pts)

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass
class EvaluationHistory:
    """Append-only record of evaluated inputs and their measurements."""

    records: list = field(default_factory=list)

    def append(self, x_opt, x_tau, y_f, y_q, iteration: int, phase: str) -> None:
        if self.records and iteration <= self.records[-1].iteration:
            raise ValueError("history iterations must be strictly increasing")
        self.records.append(
            HistoryRecord(
                x_opt=np.asarray(x_opt, dtype=float).copy(),
                x_tau=np.asarray(x_tau, dtype=float).copy(),
                y_f=float(y_f),
                y_q=float(y_q),
                iteration=int(iteration),
                phase=phase,
            )
        )

    def __len__(self) -> int:
        return len(self.records)

    def x_opts(self) -> np.ndarray:
        """All evaluated parameter vectors, in insertion order (may repeat)."""
        if not self.records:
            return np.empty((0, 0))
        return np.array([r.x_opt for r in self.records])


@dataclass(frozen=True)
class HistoryRecord:
    x_opt: np.ndarray
    x_tau: np.ndarray
    y_f: float
    y_q: float
    iteration: int
    phase: str


def _with_task(x_opts: np.ndarray, task: np.ndarray) -> np.ndarray:
    """Pair each parameter vector with one task vector -> joint inputs."""
    task = np.atleast_1d(np.asarray(task, dtype=float))
    if x_opts.size == 0:
        return np.empty((0, task.size))
    return np.hstack([x_opts, np.tile(task, (x_opts.shape[0], 1))]) if task.size else x_opts.copy()


def pessimistic_member(gp_q: GpModel, x: np.ndarray, c: float) -> np.ndarray:
    """True where the constraint upper confidence bound is within the limit."""
    return gp_q.ucb(np.atleast_2d(x)) <= c


def safe_set_from_history(
    history: EvaluationHistory,
    gp_q: GpModel,
    task: np.ndarray,
    c: float,
    seed: SafeSeed,
) -> tuple[np.ndarray, bool]:
    """Previously evaluated parameter vectors that are safe for ``task``.

    Pairs every historical x_opt with the current task and keeps the
    pessimistically safe ones. Falls back to the seed when none qualify;
    the second return value reports whether the fallback was used.
    """
    x_opts = history.x_opts()
    if x_opts.size:
        candidates = _with_task(x_opts, task)
        mask = pessimistic_member(gp_q, candidates, c)
        if np.any(mask):
            return np.unique(x_opts[mask], axis=0), False
    logger.debug("no safe history for task %s; using the safe seed", task)
    return seed.points.copy(), True


def expander_set(
    gp_q: GpModel, safe_points: np.ndarray, epsilon: float, task: np.ndarray | None = None
) -> np.ndarray:
    """Safe points that still carry enough uncertainty to certify neighbours.

    A point qualifies when its confidence width exceeds ``epsilon``. Inputs
    are parameter vectors; ``task`` (if given) is appended before querying.
    """
    safe_points = np.atleast_2d(safe_points)
    if safe_points.shape[0] == 0:
        return safe_points
    joint = _with_task(safe_points, task) if task is not None else safe_points
    width = gp_q.confidence_width(joint)
    return safe_points[width > epsilon]


@dataclass(frozen=True)
class ExpanderData:
    """Precomputed per-expander quantities for vectorized optimistic checks."""

    points: np.ndarray  # (k, d_opt)
    lcb: np.ndarray  # (k,)
    grad_norm: np.ndarray  # (k,) infinity norm over the optimizable dims


def prepare_expanders(
    gp_q: GpModel, expanders: np.ndarray, task: np.ndarray | None = None
) -> ExpanderData:
    expanders = np.atleast_2d(expanders)
    if expanders.shape[0] == 0:
        return ExpanderData(expanders, np.empty(0), np.empty(0))
    joint = _with_task(expanders, task) if task is not None else expanders
    lcb = gp_q.lcb(joint)
    d_opt = expanders.shape[1]
    # gradient in lengthscale units so it pairs with the weighted distance
    ls = gp_q.kernel.lengthscales[:d_opt]
    grad_norm = np.array(
        [np.max(np.abs(gp_q.posterior_mean_gradient(row)[:d_opt] * ls)) for row in joint]
    )
    return ExpanderData(expanders, lcb, grad_norm)


def _weighted_distance(a: np.ndarray, b: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    """Lengthscale-weighted Euclidean distance between rows of a and b."""
    diff = (a[:, None, :] - b[None, :, :]) / lengthscales
    return np.sqrt(np.sum(diff**2, axis=-1))


def expansion_operator(
    gp_q: GpModel,
    x_bar: np.ndarray,
    x: np.ndarray,
    epsilon: float,
    c: float,
    task: np.ndarray | None = None,
) -> int:
    """Indicator that expander ``x_bar`` certifies candidate ``x`` as safe.

    Certification: lcb(x_bar) + |grad mean(x_bar)|_inf * d(x_bar, x) + eps <= c,
    with d the lengthscale-weighted Euclidean distance over the optimizable
    dimensions.
    """
    data = prepare_expanders(gp_q, np.atleast_2d(x_bar), task)
    x = np.atleast_2d(x)
    ls = gp_q.kernel.lengthscales[: data.points.shape[1]]
    d = _weighted_distance(data.points, x, ls)[0, 0]
    return int(data.lcb[0] + data.grad_norm[0] * d + epsilon <= c)


def optimistic_member(
    gp_q: GpModel,
    expanders: ExpanderData | np.ndarray,
    x: np.ndarray,
    epsilon: float,
    c: float,
    task: np.ndarray | None = None,
) -> np.ndarray:
    """True where some expander certifies the candidate row as safe."""
    if not isinstance(expanders, ExpanderData):
        expanders = prepare_expanders(gp_q, expanders, task)
    x = np.atleast_2d(x)
    if expanders.points.shape[0] == 0:
        return np.zeros(x.shape[0], dtype=bool)
    ls = gp_q.kernel.lengthscales[: expanders.points.shape[1]]
    d = _weighted_distance(expanders.points, x, ls)  # (k, m)
    cert = expanders.lcb[:, None] + expanders.grad_norm[:, None] * d + epsilon <= c
    return np.any(cert, axis=0)
