"""Constrained particle-swarm optimizer tests."""

import numpy as np
import pytest

from goosetune.pso import PsoConfig, init_swarm, pso_optimize


def box_config(d=2, lo=-1.0, hi=1.0, **kw):
    return PsoConfig(
        bounds=np.array([[lo, hi]] * d),
        lengthscales=np.full(d, 0.3),
        **kw,
    )


def always_feasible(x):
    return np.ones(x.shape[0], dtype=bool)


def test_converges_to_analytic_optimum():
    target = np.array([0.3, -0.4])
    acq = lambda X: np.sum((X - target) ** 2, axis=1)
    cfg = box_config(max_iterations=100)
    init = np.array([[-0.9, 0.9]])
    res = pso_optimize(acq, always_feasible, init, cfg, rng_seed=0)
    assert res.feasible
    assert np.linalg.norm(res.x - target) < 1e-2


def test_zero_iterations_returns_init_point():
    cfg = box_config(max_iterations=0)
    init = np.array([[0.25, 0.5]])
    res = pso_optimize(lambda X: np.sum(X**2, axis=1), always_feasible, init, cfg, 1)
    np.testing.assert_allclose(res.x, init[0])


def test_constrained_optimum_matches_grid_oracle():
    # feasible region: left half of the box; acq optimum in the right half
    target = np.array([0.8, 0.0])
    acq = lambda X: np.sum((X - target) ** 2, axis=1)
    feasible = lambda X: X[:, 0] <= 0.0
    cfg = box_config(max_iterations=150)
    init = np.array([[-0.5, 0.0], [-0.9, 0.5]])
    res = pso_optimize(acq, feasible, init, cfg, rng_seed=3)
    assert res.feasible
    assert res.x[0] <= 0.0
    # dense grid oracle over the feasible half
    g = np.linspace(-1, 1, 201)
    gx, gy = np.meshgrid(g, g)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    pts = pts[pts[:, 0] <= 0.0]
    oracle_best = np.min(acq(pts))
    assert res.value <= oracle_best + 1e-2


def test_deterministic_given_seed():
    acq = lambda X: np.cos(3 * X[:, 0]) + X[:, 1] ** 2
    cfg = box_config(max_iterations=40)
    init = np.array([[0.0, 0.0], [0.5, -0.5]])
    r1 = pso_optimize(acq, always_feasible, init, cfg, rng_seed=42)
    r2 = pso_optimize(acq, always_feasible, init, cfg, rng_seed=42)
    np.testing.assert_array_equal(r1.x, r2.x)
    assert r1.value == r2.value
    r3 = pso_optimize(acq, always_feasible, init, cfg, rng_seed=43)
    assert not np.array_equal(r1.x, r3.x)


def test_returned_point_feasible_when_init_is():
    rng = np.random.default_rng(0)
    feasible = lambda X: np.linalg.norm(X, axis=1) <= 0.5
    acq = lambda X: -np.linalg.norm(X, axis=1)  # pulls outward
    cfg = box_config(max_iterations=60)
    init = rng.uniform(-0.2, 0.2, size=(5, 2))
    res = pso_optimize(acq, feasible, init, cfg, rng_seed=5)
    assert res.feasible
    assert np.linalg.norm(res.x) <= 0.5 + 1e-12


def test_no_feasible_anywhere_falls_back_to_best_init():
    acq = lambda X: np.sum(X**2, axis=1)
    never = lambda X: np.zeros(X.shape[0], dtype=bool)
    cfg = box_config(max_iterations=20)
    init = np.array([[0.5, 0.5], [0.1, 0.1], [-0.8, 0.2]])
    res = pso_optimize(acq, never, init, cfg, rng_seed=7)
    assert not res.feasible
    np.testing.assert_allclose(res.x, [0.1, 0.1])


def test_init_swarm_bijective_assignment_when_counts_match():
    cfg = box_config(n_particles=8)
    pts = np.arange(16, dtype=float).reshape(8, 2) / 16.0
    swarm = init_swarm(pts, cfg, np.random.default_rng(0))
    got = np.sort(swarm.positions.view([("", float), ("", float)]).ravel())
    want = np.sort(pts.view([("", float), ("", float)]).ravel())
    assert np.array_equal(got, want)


def test_init_swarm_single_point_distinct_velocities():
    cfg = box_config(n_particles=10)
    swarm = init_swarm(np.array([[0.2, 0.2]]), cfg, np.random.default_rng(1))
    assert np.all(swarm.positions == [0.2, 0.2])
    assert len(np.unique(swarm.velocities.round(12), axis=0)) == 10


def test_init_velocity_magnitude_in_lengthscale_units():
    cfg = box_config(n_particles=50, v0_scale=0.5)
    swarm = init_swarm(np.array([[0.0, 0.0]]), cfg, np.random.default_rng(2))
    scaled_speed = np.linalg.norm(swarm.velocities / cfg.lengthscales, axis=1)
    np.testing.assert_allclose(scaled_speed, 0.5, atol=1e-12)


def test_gbest_value_non_increasing():
    values = []
    real_acq = lambda X: np.sum((X - 0.3) ** 2, axis=1)

    def tracking_acq(X):
        out = real_acq(X)
        values.append(np.min(out))
        return out

    cfg = box_config(max_iterations=50)
    pso_optimize(tracking_acq, always_feasible, np.array([[0.9, -0.9]]), cfg, 11)
    best_so_far = np.minimum.accumulate(values)
    assert np.all(np.diff(best_so_far) <= 0)


def test_positions_stay_in_bounds():
    seen = []

    def acq(X):
        seen.append(X.copy())
        return np.sum(X**2, axis=1)

    cfg = box_config(max_iterations=30)
    pso_optimize(acq, always_feasible, np.array([[0.99, 0.99]]), cfg, 13)
    allpts = np.vstack(seen)
    assert np.all(allpts >= -1.0 - 1e-12) and np.all(allpts <= 1.0 + 1e-12)


def test_empty_init_rejected():
    cfg = box_config()
    with pytest.raises(ValueError):
        pso_optimize(lambda X: np.zeros(len(X)), always_feasible, np.empty((0, 2)), cfg, 0)


def test_config_validation():
    with pytest.raises(ValueError):
        PsoConfig(bounds=np.array([[1.0, 0.0]]), lengthscales=[1.0])
    with pytest.raises(ValueError):
        PsoConfig(bounds=np.array([[0.0, 1.0]]), lengthscales=[1.0, 2.0])
    with pytest.raises(ValueError):
        PsoConfig(bounds=np.array([[0.0, 1.0]]), lengthscales=[1.0], n_particles=0)
