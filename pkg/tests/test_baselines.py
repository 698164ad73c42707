"""LPV grid baseline tests against brute-force and scipy interpolation oracles."""

import itertools

import numpy as np
import pytest

from goosetune.baselines import (
    GainGrid,
    lpv_interpolate,
    record_grid,
    select_per_task_optima,
)


def synthetic_evaluate(x_opt, x_tau):
    """Deterministic closed-form cost/constraint for grid tests."""
    f = float(np.sum((x_opt - 2.0 * x_tau[0]) ** 2) + x_tau[-1])
    q = float(np.sum(x_opt) * 0.1 + x_tau[0])
    return f, q, True


def test_record_grid_counts_permutations():
    gains = [[200, 300, 400], [600, 800, 1000], [1000, 1250, 1500]]
    tasks = [list(np.log10([1, 2, 5, 10, 20, 50, 100])), [0.4, 1.2]]
    grid = record_grid(gains, tasks, synthetic_evaluate)
    assert len(grid.records) == 27 * 14 == 378
    assert grid.n_cells == 378


def test_record_grid_single_cell():
    grid = record_grid([[1.0]], [[0.0]], synthetic_evaluate)
    assert len(grid.records) == 1


def test_record_grid_rejects_empty():
    with pytest.raises(ValueError):
        record_grid([], [[0.0]], synthetic_evaluate)
    with pytest.raises(ValueError):
        record_grid([[1.0], []], [[0.0]], synthetic_evaluate)


def test_unstable_candidate_marked_infeasible():
    def evaluate(x_opt, x_tau):
        ok = x_opt[0] < 2.5
        return float(x_opt[0]), 0.0, ok

    grid = record_grid([[1.0, 2.0, 3.0]], [[0.0]], evaluate)
    table = select_per_task_optima(grid, c=10.0)
    np.testing.assert_allclose(table.gains_at((0.0,)), [1.0])
    # the infeasible (unstable) candidate never wins even with a better cost
    def evaluate2(x_opt, x_tau):
        return float(-x_opt[0]), 0.0, x_opt[0] < 2.5

    grid2 = record_grid([[1.0, 2.0, 3.0]], [[0.0]], evaluate2)
    table2 = select_per_task_optima(grid2, c=10.0)
    np.testing.assert_allclose(table2.gains_at((0.0,)), [2.0])


def test_optima_match_brute_force_oracle():
    rng = np.random.default_rng(4)
    gains = [[1.0, 2.0], [10.0, 20.0]]
    tasks = [[0.0, 1.0], [0.5, 1.5]]
    values = {}

    def evaluate(x_opt, x_tau):
        key = (tuple(x_opt), tuple(x_tau))
        if key not in values:
            values[key] = (rng.normal(), rng.uniform(0, 2), True)
        return values[key]

    grid = record_grid(gains, tasks, evaluate)
    c = 1.0
    table = select_per_task_optima(grid, c)
    for task in itertools.product(*tasks):
        feas = [
            (v[0], go)
            for (go, to), v in values.items()
            if to == task and v[1] <= c
        ]
        if not feas:
            assert task in table.infeasible_tasks
        else:
            best_cost = min(f for f, _ in feas)
            got = table.gains_at(task)
            assert values[(tuple(got), task)][0] == pytest.approx(best_cost)


def test_all_infeasible_task_flagged_with_fallback():
    def evaluate(x_opt, x_tau):
        return 1.0, 5.0, True  # constraint always above the limit

    grid = record_grid([[1.0, 2.0]], [[0.0]], evaluate)
    table = select_per_task_optima(grid, c=1.0)
    assert (0.0,) in table.infeasible_tasks
    fallback = np.array([9.0])
    got = lpv_interpolate(table, np.array([0.0]), fallback)
    np.testing.assert_allclose(got, fallback)


def test_tie_breaks_to_smallest_gain_vector():
    def evaluate(x_opt, x_tau):
        return 1.0, 0.0, True  # all costs equal

    grid = record_grid([[2.0, 1.0], [5.0, 3.0]], [[0.0]], evaluate)
    table = select_per_task_optima(grid, c=1.0)
    np.testing.assert_allclose(table.gains_at((0.0,)), [1.0, 3.0])


def make_simple_table():
    tasks = [[0.0, 1.0, 2.0], [0.0, 1.0]]
    gains = {}
    for t0 in tasks[0]:
        for t1 in tasks[1]:
            gains[(t0, t1)] = np.array([10 * t0 + t1, 5 - t0])
    from goosetune.baselines import OptimumTable

    return OptimumTable(tasks, gains, [])


def test_interpolation_identity_on_grid_points():
    table = make_simple_table()
    got = lpv_interpolate(table, np.array([1.0, 1.0]), np.zeros(2))
    np.testing.assert_allclose(got, table.gains_at((1.0, 1.0)))


def test_interpolation_midpoint_average():
    table = make_simple_table()
    got = lpv_interpolate(table, np.array([0.5, 0.0]), np.zeros(2))
    want = 0.5 * (table.gains_at((0.0, 0.0)) + table.gains_at((1.0, 0.0)))
    np.testing.assert_allclose(got, want)


def test_interpolation_matches_scipy_oracle():
    from scipy.interpolate import RegularGridInterpolator

    table = make_simple_table()
    t0, t1 = table.task_values
    vals = np.array([[table.gains_at((a, b)) for b in t1] for a in t0])
    rng = np.random.default_rng(8)
    for _ in range(30):
        task = np.array([rng.uniform(0, 2), rng.uniform(0, 1)])
        got = lpv_interpolate(table, task, np.zeros(2))
        for g in range(2):
            oracle = RegularGridInterpolator((t0, t1), vals[:, :, g])(task)[0]
            assert got[g] == pytest.approx(oracle, rel=1e-12)


def test_extrapolation_beyond_hull_linear_and_clipped():
    table = make_simple_table()
    # beyond the upper task edge: linear continuation of the last segment
    got = lpv_interpolate(table, np.array([3.0, 0.0]), np.zeros(2))
    g2 = table.gains_at((2.0, 0.0))
    g1 = table.gains_at((1.0, 0.0))
    np.testing.assert_allclose(got, g2 + (g2 - g1))
    bounds = np.array([[0.0, 25.0], [0.0, 10.0]])
    clipped = lpv_interpolate(table, np.array([3.0, 0.0]), np.zeros(2), bounds)
    assert clipped[0] == 25.0


def test_grid_persistence_roundtrip(tmp_path):
    grid = record_grid([[1.0, 2.0]], [[0.0, 1.0]], synthetic_evaluate)
    path = tmp_path / "grid.csv"
    grid.save(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    assert data.shape == (4, 1 + 1 + 3)
