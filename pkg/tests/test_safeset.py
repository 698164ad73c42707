"""Safe-set, expander, and optimistic-membership tests."""

import numpy as np
import pytest

from goosetune.gp import GpModel, KernelSpec
from goosetune.safeset import (
    EvaluationHistory,
    SafeSeed,
    expander_set,
    expansion_operator,
    optimistic_member,
    pessimistic_member,
    prepare_expanders,
    safe_set_from_history,
)


def q_model(mu0=2.0, sv=1.0, sn=0.12, beta=3.0, dim=2):
    return GpModel(KernelSpec([1.0] * dim, sv), noise_std=sn, prior_mean=mu0, beta=beta)


def test_zero_data_prior_at_limit_is_unsafe_everywhere():
    c = 2.0
    gp = q_model(mu0=c)
    rng = np.random.default_rng(0)
    pts = rng.uniform(-3, 3, size=(50, 2))
    assert not np.any(pessimistic_member(gp, pts, c))


def test_observed_low_point_becomes_safe():
    c = 2.0
    gp = q_model(mu0=c, sn=1e-3)
    x = np.array([0.5, 0.5])
    gp = gp.add_observation(x, c - 2.0)
    assert pessimistic_member(gp, x[None, :], c)[0]


def test_huge_beta_is_never_safe():
    c = 2.0
    gp = q_model(mu0=c, sn=1e-3, beta=1e6)
    x = np.array([0.0, 0.0])
    gp = gp.add_observation(x, c - 2.0)
    assert not pessimistic_member(gp, x[None, :], c)[0]


def make_history(entries):
    h = EvaluationHistory()
    for i, (x_opt, x_tau, y_f, y_q) in enumerate(entries):
        h.append(x_opt, x_tau, y_f, y_q, i, "active")
    return h


def test_safe_set_empty_history_returns_seed():
    seed = SafeSeed(np.array([[0.1], [0.2]]))
    gp = q_model(dim=2)
    pts, used_seed = safe_set_from_history(make_history([]), gp, np.array([0.0]), 2.0, seed)
    assert used_seed
    np.testing.assert_array_equal(pts, seed.points)


def test_safe_set_unsafe_history_returns_seed():
    c = 2.0
    seed = SafeSeed(np.array([[0.0]]))
    gp = q_model(mu0=c, dim=2)  # no data: nothing is safe
    h = make_history([([0.5], [0.0], 1.0, 1.0), ([0.7], [0.0], 1.0, 1.0)])
    pts, used_seed = safe_set_from_history(h, gp, np.array([0.0]), c, seed)
    assert used_seed
    np.testing.assert_array_equal(pts, seed.points)


def test_safe_set_filters_exactly_like_brute_force():
    c = 2.0
    rng = np.random.default_rng(3)
    gp = q_model(mu0=c, sn=0.05, dim=2)
    # observe a few low values so part of the space becomes safe
    for x in ([0.0, 0.0], [0.3, 0.0], [2.5, 0.0]):
        gp = gp.add_observation(np.array(x), c - 1.8)
    h = make_history(
        [(rng.uniform(-1, 3, size=1), [0.0], 1.0, 1.0) for _ in range(20)]
    )
    task = np.array([0.0])
    seed = SafeSeed(np.array([[0.0]]))
    pts, used_seed = safe_set_from_history(h, gp, task, c, seed)
    # independent filter: loop over history, check ucb point by point
    expected = []
    for r in h.records:
        joint = np.concatenate([r.x_opt, task])
        if gp.ucb(joint[None, :])[0] <= c:
            expected.append(r.x_opt)
    if expected:
        assert not used_seed
        expected = np.unique(np.array(expected), axis=0)
        np.testing.assert_allclose(np.sort(pts, axis=0), np.sort(expected, axis=0))
    else:
        assert used_seed


def test_history_enforces_increasing_iterations():
    h = make_history([([0.0], [0.0], 1.0, 1.0)])
    with pytest.raises(ValueError):
        h.append([0.1], [0.0], 1.0, 1.0, 0, "active")


def test_expander_set_membership():
    c = 2.0
    sv, beta, sn = 1.0, 3.0, 0.12
    gp = q_model(mu0=c, sv=sv, sn=sn, beta=beta, dim=1)
    eps = 6 * sn  # exploration threshold
    observed = np.array([0.0])
    for _ in range(60):  # pin down one location
        gp = gp.add_observation(observed, c - 1.5)
    far = np.array([5.0])
    pts = np.vstack([observed, far])
    exp = expander_set(gp, pts, eps)
    # unobserved point keeps width 2*beta*sv = 6 > 6*0.12, stays an expander
    assert any(np.allclose(row, far) for row in exp)
    # the heavily observed point has collapsed width, drops out
    assert not any(np.allclose(row, observed) for row in exp)


def test_expander_set_zero_epsilon_keeps_everything_uncertain():
    gp = q_model(dim=1)
    pts = np.array([[0.0], [1.0]])
    exp = expander_set(gp, pts, 0.0)
    assert exp.shape == pts.shape


def test_expansion_operator_at_zero_distance():
    c = 2.0
    gp = q_model(mu0=c, sn=0.01, dim=1)
    x = np.array([0.0])
    gp = gp.add_observation(x, c - 1.5)
    eps = 0.05
    # lcb(x) + eps <= c since the observation sits well below the limit
    assert expansion_operator(gp, x, x, eps, c) == 1


def test_expansion_operator_fails_at_large_distance():
    c = 2.0
    gp = q_model(mu0=c, sn=0.01, dim=1)
    for x in ([0.0], [0.4]):
        gp = gp.add_observation(np.array(x), c - 1.5)
    assert expansion_operator(gp, np.array([0.4]), np.array([500.0]), 0.05, c) in (0, 1)
    # force a nonzero gradient norm, then push the candidate far away
    data = prepare_expanders(gp, np.array([[0.4]]))
    assert data.grad_norm[0] > 0
    assert expansion_operator(gp, np.array([0.4]), np.array([500.0]), 0.05, c) == 0


def test_expansion_operator_matches_hand_formula():
    c = 2.0
    rng = np.random.default_rng(7)
    gp = q_model(mu0=c, sn=0.05, dim=1)
    for _ in range(5):
        gp = gp.add_observation(rng.uniform(-1, 1, size=1), c - rng.uniform(0.5, 2.0))
    eps = 0.1
    for _ in range(20):
        x_bar = rng.uniform(-1, 1, size=1)
        x = rng.uniform(-2, 2, size=1)
        lcb = gp.lcb(x_bar[None, :])[0]
        gnorm = np.max(np.abs(gp.posterior_mean_gradient(x_bar)))
        dist = np.sqrt(np.sum(((x_bar - x) / gp.kernel.lengthscales) ** 2))
        expected = int(lcb + gnorm * dist + eps <= c)
        assert expansion_operator(gp, x_bar, x, eps, c) == expected


def test_optimistic_member_empty_expanders_false():
    gp = q_model(dim=1)
    assert not optimistic_member(gp, np.empty((0, 1)), np.array([[0.0]]), 0.1, 2.0)[0]


def test_optimistic_member_self_certifies():
    c = 2.0
    gp = q_model(mu0=c, sn=0.01, dim=1)
    x = np.array([0.0])
    gp = gp.add_observation(x, c - 1.5)
    assert optimistic_member(gp, x[None, :], x[None, :], 0.05, c)[0]


def test_optimistic_member_equals_exhaustive_scan():
    c = 2.0
    rng = np.random.default_rng(11)
    gp = q_model(mu0=c, sn=0.05, dim=1)
    for _ in range(6):
        gp = gp.add_observation(rng.uniform(-1, 1, size=1), c - rng.uniform(0.2, 1.8))
    expanders = rng.uniform(-1, 1, size=(5, 1))
    queries = rng.uniform(-2, 2, size=(30, 1))
    eps = 0.1
    got = optimistic_member(gp, expanders, queries, eps, c)
    for j, x in enumerate(queries):
        expected = any(
            expansion_operator(gp, xb, x, eps, c) == 1 for xb in expanders
        )
        assert got[j] == expected


def test_optimistic_set_monotone_in_epsilon():
    c = 2.0
    rng = np.random.default_rng(13)
    gp = q_model(mu0=c, sn=0.05, dim=1)
    for _ in range(5):
        gp = gp.add_observation(rng.uniform(-1, 1, size=1), c - rng.uniform(0.5, 1.5))
    expanders = rng.uniform(-1, 1, size=(5, 1))
    queries = rng.uniform(-2, 2, size=(40, 1))
    small = optimistic_member(gp, expanders, queries, 0.05, c)
    large = optimistic_member(gp, expanders, queries, 0.5, c)
    # increasing epsilon never adds members
    assert not np.any(large & ~small)


def test_pessimistic_set_inside_plausible_set():
    c = 2.0
    rng = np.random.default_rng(17)
    gp = q_model(mu0=c, sn=0.05, dim=2)
    for _ in range(8):
        gp = gp.add_observation(rng.uniform(-1, 1, size=2), c - rng.uniform(-0.5, 1.5))
    pts = rng.uniform(-2, 2, size=(100, 2))
    pess = pessimistic_member(gp, pts, c)
    plausible = gp.lcb(pts) <= c
    assert not np.any(pess & ~plausible)


def test_seed_validation():
    with pytest.raises(ValueError):
        SafeSeed(np.empty((0, 3)))
    with pytest.raises(ValueError):
        SafeSeed(np.array([[np.nan, 1.0]]))
