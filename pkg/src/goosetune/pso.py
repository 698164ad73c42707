"""Feasibility-first particle swarm search for acquisition functions.

Particles start on the current safe set and move through the box; positions
are always evaluated, but personal/global bests only ever update on feasible
positions, so the returned optimizer is feasible whenever any feasible point
was seen. Runs are deterministic given the seed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

logger = logging.getLogger(__name__)

Acquisition = Callable[[np.ndarray], np.ndarray]
Feasibility = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class PsoConfig:
    """Swarm parameters.

    ``bounds`` is (d, 2) [low, high] per dimension. ``lengthscales`` set the
    scale of the initial velocities: each particle starts with speed
    ``v0_scale`` in lengthscale units, pointed uniformly at random.
    """

    bounds: np.ndarray
    lengthscales: np.ndarray
    n_particles: int = 50
    inertia: float = 0.7
    cognitive: float = 1.5
    social: float = 1.5
    max_iterations: int = 100
    v0_scale: float = 0.5

    def __post_init__(self):
        bounds = np.atleast_2d(np.asarray(self.bounds, dtype=float))
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if bounds.shape[1] != 2 or np.any(bounds[:, 0] >= bounds[:, 1]):
            raise ValueError("bounds must be (d, 2) with low < high")
        if ls.size != bounds.shape[0]:
            raise ValueError("need one lengthscale per bounded dimension")
        if not np.all(ls > 0):
            raise ValueError("lengthscales must be positive")
        if self.n_particles < 1:
            raise ValueError("need at least one particle")
        if min(self.inertia, self.cognitive, self.social) < 0:
            raise ValueError("PSO coefficients must be non-negative")
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "lengthscales", ls)

    @property
    def dim(self) -> int:
        return self.bounds.shape[0]


@dataclass
class Swarm:
    positions: np.ndarray
    velocities: np.ndarray
    pbest_pos: np.ndarray
    pbest_val: np.ndarray  # +inf until a feasible evaluation lands
    gbest_pos: np.ndarray | None = None
    gbest_val: float = np.inf


@dataclass(frozen=True)
class PsoResult:
    x: np.ndarray
    value: float
    feasible: bool  # False when every visited point failed the constraint
    n_evals: int


def init_swarm(init_points: np.ndarray, config: PsoConfig, rng: np.random.Generator) -> Swarm:
    """Swarm seeded on the initial points with random lengthscale-sized kicks.

    When particle and init counts match the assignment is a permutation;
    otherwise points are drawn with replacement.
    """
    init_points = np.atleast_2d(np.asarray(init_points, dtype=float))
    n, d = config.n_particles, config.dim
    k = init_points.shape[0]
    if k == n:
        idx = rng.permutation(n)
    else:
        idx = rng.integers(0, k, size=n)
    positions = np.clip(init_points[idx], config.bounds[:, 0], config.bounds[:, 1])

    direction = rng.normal(size=(n, d))
    norms = np.linalg.norm(direction, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    velocities = config.v0_scale * config.lengthscales * direction / norms

    return Swarm(
        positions=positions,
        velocities=velocities,
        pbest_pos=positions.copy(),
        pbest_val=np.full(n, np.inf),
    )


def pso_optimize(
    acq: Acquisition,
    feasible: Feasibility,
    init_points: np.ndarray,
    config: PsoConfig,
    rng_seed,
) -> PsoResult:
    """Minimize ``acq`` over the box subject to ``feasible``.

    Both callables take (m, d) batches. Returns the best feasible point
    found; if nothing feasible was ever visited, returns the initial point
    with the best acquisition value (callers seed the swarm with safe points,
    so this only happens in the optimistic/baseline mode).
    """
    init_points = np.atleast_2d(np.asarray(init_points, dtype=float))
    if init_points.shape[0] == 0:
        raise ValueError("init_points must not be empty")
    if init_points.shape[1] != config.dim:
        raise ValueError(
            f"init point dim {init_points.shape[1]} != bounds dim {config.dim}"
        )
    rng = np.random.default_rng(rng_seed)
    swarm = init_swarm(init_points, config, rng)
    n_evals = 0

    def evaluate(pos: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        nonlocal n_evals
        n_evals += pos.shape[0]
        return np.asarray(acq(pos), dtype=float), np.asarray(feasible(pos), dtype=bool)

    vals, feas = evaluate(swarm.positions)
    improved = feas & (vals < swarm.pbest_val)
    swarm.pbest_val = np.where(improved, vals, swarm.pbest_val)
    swarm.pbest_pos[improved] = swarm.positions[improved]
    _update_gbest(swarm)

    lo, hi = config.bounds[:, 0], config.bounds[:, 1]
    for _ in range(config.max_iterations):
        r1 = rng.random(swarm.positions.shape)
        r2 = rng.random(swarm.positions.shape)
        attract = swarm.gbest_pos if swarm.gbest_pos is not None else swarm.pbest_pos
        swarm.velocities = (
            config.inertia * swarm.velocities
            + config.cognitive * r1 * (swarm.pbest_pos - swarm.positions)
            + config.social * r2 * (attract - swarm.positions)
        )
        swarm.positions = np.clip(swarm.positions + swarm.velocities, lo, hi)
        vals, feas = evaluate(swarm.positions)
        improved = feas & (vals < swarm.pbest_val)
        swarm.pbest_val = np.where(improved, vals, swarm.pbest_val)
        swarm.pbest_pos[improved] = swarm.positions[improved]
        _update_gbest(swarm)

    if swarm.gbest_pos is not None:
        return PsoResult(swarm.gbest_pos.copy(), float(swarm.gbest_val), True, n_evals)
    # nothing feasible seen anywhere: fall back to the best init point
    init_vals = np.asarray(acq(init_points), dtype=float)
    n_evals += init_points.shape[0]
    best = int(np.argmin(init_vals))
    logger.debug("no feasible point visited; returning best init point")
    return PsoResult(init_points[best].copy(), float(init_vals[best]), False, n_evals)


def _update_gbest(swarm: Swarm) -> None:
    best = int(np.argmin(swarm.pbest_val))
    if swarm.pbest_val[best] < swarm.gbest_val:
        swarm.gbest_val = float(swarm.pbest_val[best])
        swarm.gbest_pos = swarm.pbest_pos[best].copy()
