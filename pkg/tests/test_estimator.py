import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ecosim import estimator as est
from ecosim.dynamics import TrafficState, VehicleState
from ecosim.game import Action, GameParams, Role

P = GameParams()
W = est.NoiseModel()


def prev(state):
    return TrafficState({0: VehicleState(0, 20, 0), 1: state})


def test_residual_zero_when_model_matches():
    x = VehicleState(30, 16, 4)
    obs = est.apply_action(x, Action.MILD_ACCEL, P, 0.1)
    r = est.residual(obs, prev(x), Action.MILD_ACCEL, P, 0.1)
    assert np.allclose(r, 0.0, atol=1e-12)


def test_residual_hard_accel_hypothesis():
    x = VehicleState(30, 16, 4)
    obs = VehicleState(30 + 1.6, 16, 4)  # maintained speed
    r = est.residual(obs, prev(x), Action.HARD_ACCEL, P, 0.1)
    assert r == pytest.approx([-0.01, -0.2, 0.0], abs=1e-12)


def test_residual_lateral_mismatch():
    x = VehicleState(30, 16, 4)
    obs = VehicleState(31.6, 16, 4)  # no steering happened
    r = est.residual(obs, prev(x), Action.STEER_RIGHT, P, 0.1)
    assert r[2] == pytest.approx(0.2, abs=1e-12)
    x = VehicleState(30, 16, 2)
    obs = VehicleState(31.6, 16, 2)
    r = est.residual(obs, prev(x), Action.STEER_LEFT, P, 0.1)
    assert r[2] == pytest.approx(-0.2, abs=1e-12)


def test_identical_residuals_leave_posterior():
    post = est.RolePosterior(0.3, 0.7)
    r = np.array([0.01, -0.02, 0.003])
    out = est.update(post, {Role.LEADER: r, Role.FOLLOWER: r}, W)
    assert out.posterior.p_leader == pytest.approx(0.3, abs=1e-15)


def test_gaussian_ratio_example_without_floor():
    out = est.update(
        est.RolePosterior(),
        {Role.LEADER: np.zeros(3), Role.FOLLOWER: np.array([0.0, 0.2, 0.0])},
        W, floor=0.0,
    )
    expected = 1.0 / (1.0 + math.exp(-20.0))
    assert out.posterior.p_leader == pytest.approx(expected, abs=1e-15)
    assert out.posterior.p_leader == pytest.approx(1.0, abs=1e-8)


def test_default_floor_caps_certainty():
    out = est.update(
        est.RolePosterior(),
        {Role.LEADER: np.zeros(3), Role.FOLLOWER: np.array([0.0, 0.2, 0.0])},
        W,
    )
    assert out.posterior.p_leader == pytest.approx(1.0 - est.DEFAULT_FLOOR)


def test_strong_prior_against_evidence():
    ll = {Role.LEADER: 0.0, Role.FOLLOWER: math.log(100.0)}
    out = est.update_from_loglik(est.RolePosterior(0.99, 0.01), ll)
    assert out.posterior.p_leader == pytest.approx(0.99 / 1.99, abs=1e-12)
    assert (round(out.posterior.p_leader, 3), round(out.posterior.p_follower, 3)) == (0.497, 0.503)


def test_skip_when_both_likelihoods_underflow():
    post = est.RolePosterior(0.4, 0.6)
    big = np.array([100.0, 100.0, 100.0])
    out = est.update(post, {Role.LEADER: big, Role.FOLLOWER: 2 * big}, W)
    assert out.skipped
    assert out.posterior == post


def test_posterior_validation():
    with pytest.raises(ValueError):
        est.RolePosterior(0.5, 0.6)
    with pytest.raises(ValueError):
        est.NoiseModel((0.1, 0.0, 0.1))


residual3 = st.lists(st.floats(-0.5, 0.5), min_size=3, max_size=3).map(np.array)


@settings(max_examples=200, deadline=None)
@given(p=st.floats(0.001, 0.999), rl=residual3, rf=residual3)
def test_posterior_sums_to_one(p, rl, rf):
    out = est.update(est.RolePosterior(p, 1 - p), {Role.LEADER: rl, Role.FOLLOWER: rf}, W)
    post = out.posterior
    assert post.p_leader + post.p_follower == pytest.approx(1.0, abs=1e-12)
    assert est.DEFAULT_FLOOR - 1e-15 <= post.p_leader <= 1 - est.DEFAULT_FLOOR + 1e-15


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(residual3, residual3), min_size=1, max_size=8).map(
    lambda xs: [(a * 0.05, b * 0.05) for a, b in xs]))
def test_batch_equals_sequential(steps):
    seq = [{Role.LEADER: a, Role.FOLLOWER: b} for a, b in steps]
    post = est.RolePosterior()
    for res in seq:
        post = est.update(post, res, W, floor=0.0).posterior
    batch = est.batch_update(est.RolePosterior(), seq, W, floor=0.0)
    assert batch.p_leader == pytest.approx(post.p_leader, abs=1e-9)


def test_floor_keeps_filter_responsive():
    good = np.zeros(3)
    bad = np.array([0.02, 0.04, 0.0])
    post = est.RolePosterior()
    for _ in range(40):
        post = est.update(post, {Role.LEADER: bad, Role.FOLLOWER: good}, W).posterior
    assert post.p_leader == pytest.approx(est.DEFAULT_FLOOR)
    for n in range(1, 21):
        post = est.update(post, {Role.LEADER: good, Role.FOLLOWER: bad}, W).posterior
        if post.p_leader > 0.5:
            break
    assert post.p_leader > 0.5
