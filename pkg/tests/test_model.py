"""Exact simulation of the embedded chain: jump-time inversion, hazard
closed forms, boundary-jump bookkeeping and trajectory suprema."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

import pdmpstop as p
from conftest import two_state_model

IDX_HALF, IDX_QUARTER, IDX_ZERO = 0, 1, 2  # points sorted by exit time


def test_points_sorted_by_exit_time(model3):
    assert model3.points.tolist() == [0.5, 0.25, 0.0]
    assert model3.exit_times.tolist() == [0.5, 0.75, 1.0]
    assert model3.initial_index == IDX_ZERO


def test_rng_stream_reproducible():
    a = p.rng_stream(11, "simulation", 4).random(5)
    b = p.rng_stream(11, "simulation", 4).random(5)
    c = p.rng_stream(11, "simulation", 5).random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_jump_time_u_one_is_immediate(model3):
    t, boundary = p.sample_jump_time(model3, IDX_ZERO, 1.0)
    assert t == 0.0 and boundary is False


def test_jump_time_below_exit_survival_is_forced(model3):
    # survival to the exit from 0 is e^{-1.5} ~ 0.2231 > 0.1
    t, boundary = p.sample_jump_time(model3, IDX_ZERO, 0.1)
    assert t == 1.0 and boundary is True


def test_jump_time_median_from_zero(model3):
    # (3/2) t^2 = ln 2  =>  t = sqrt(2 ln 2 / 3)
    t, boundary = p.sample_jump_time(model3, IDX_ZERO, 0.5)
    assert boundary is False
    assert t == pytest.approx(math.sqrt(2.0 * math.log(2.0) / 3.0), abs=1e-12)


def test_jump_time_closed_form_matches_bisection(model3):
    # same instance registered without the closed-form inverse
    slow = p.linear_flow_model([0.0, 0.25, 0.5], 3.0, 1.0, 0.25, 9, 0.0)
    object.__setattr__(slow, "hazard_inverse", None)
    for u in (0.95, 0.7, 0.5, 0.3):
        t_fast, b_fast = p.sample_jump_time(model3, IDX_ZERO, u)
        t_slow, b_slow = p.sample_jump_time(slow, IDX_ZERO, u)
        assert b_fast == b_slow
        assert t_fast == pytest.approx(t_slow, abs=1e-9)


def test_jump_time_rejects_bad_u(model3):
    with pytest.raises(ValueError):
        p.sample_jump_time(model3, IDX_ZERO, 0.0)
    with pytest.raises(ValueError):
        p.sample_jump_time(model3, IDX_ZERO, 1.5)


def test_cum_hazard_closed_form(model3):
    assert p.cum_hazard_generic(model3, IDX_ZERO, 0.0) == 0.0
    assert p.cum_hazard_generic(model3, IDX_ZERO, 1.0) == pytest.approx(1.5, abs=1e-12)
    assert p.cum_hazard_generic(model3, IDX_HALF, 0.5) == pytest.approx(1.125, abs=1e-12)


def test_cum_hazard_quadrature_fallback(model3):
    quad = p.make_model(
        points=[0.0, 0.25, 0.5],
        flow=lambda x, t: x + np.asarray(t),
        exit_time=lambda x: 1.0 - x,
        rate=lambda x: 3.0 * np.asarray(x),
        cum_hazard=None,
        kernel=lambda x: np.full(3, 1.0 / 3.0),
        noise_density=model3.noise_density,
        noise_sampler=model3.noise_sampler,
        obs_map=lambda x: x,
        reward=lambda x: np.asarray(x),
        reward_bound=1.0, reward_time_lipschitz=1.0, rate_bound=3.0,
        horizon=9, initial_point=0.0, kernel_is_constant=True,
    )
    for z, t in ((IDX_ZERO, 1.0), (IDX_HALF, 0.5), (IDX_QUARTER, 0.3)):
        assert p.cum_hazard_generic(quad, z, t) == pytest.approx(
            p.cum_hazard_generic(model3, z, t), abs=1e-8)


def test_cum_hazard_domain_error(model3):
    with pytest.raises(p.HazardDomainError):
        p.cum_hazard_generic(model3, IDX_HALF, 0.6)


_FLOW_MODEL = p.example_model()


@given(x=st.floats(0.0, 0.9), t=st.floats(0.0, 0.5), s=st.floats(0.0, 0.5))
@settings(deadline=None)
def test_flow_semigroup(x, t, s):
    lhs = _FLOW_MODEL.flow(_FLOW_MODEL.flow(x, t), s)
    assert lhs == pytest.approx(_FLOW_MODEL.flow(x, t + s), abs=1e-12)


def test_first_jump_time_distribution(model3):
    # from x=0: natural CDF 1 - exp(-1.5 t^2) on (0,1), atom e^{-1.5} at 1
    batch = p.simulate_paths(model3, 100_000, p.rng_stream(7, "simulation", 0),
                             p.rng_stream(7, "noise", 0))
    s1 = batch.s[:, 1]
    ts = np.linspace(0.01, 0.99, 199)
    emp = (s1[:, None] <= ts[None, :]).mean(axis=0)
    exact = 1.0 - np.exp(-1.5 * ts ** 2)
    assert np.abs(emp - exact).max() < 0.01


def test_boundary_fraction_from_zero(model3):
    batch = p.simulate_paths(model3, 100_000, p.rng_stream(8, "simulation", 0),
                             p.rng_stream(8, "noise", 0))
    frac = batch.boundary[:, 1].mean()
    assert abs(frac - math.exp(-1.5)) < 0.005


def test_boundary_jump_times_bit_exact(model3):
    batch = p.simulate_paths(model3, 5_000, p.rng_stream(9, "simulation", 0),
                             p.rng_stream(9, "noise", 0))
    assert np.all(batch.s[:, 1:] <= model3.t_star_max)
    for n in range(1, model3.horizon + 1):
        mask = batch.boundary[:, n]
        stored = model3.exit_times[batch.z[mask, n - 1]]
        assert np.array_equal(batch.s[mask, n], stored)
        natural = ~mask
        below = batch.s[natural, n] < model3.exit_times[batch.z[natural, n - 1]]
        assert below.all()


def test_single_point_chain_stays_put():
    model = p.linear_flow_model([0.3], 3.0, 1.0, 0.25, 5, 0.3)
    batch = p.simulate_paths(model, 200, p.rng_stream(10, "simulation", 0))
    assert np.all(batch.z == 0)


def test_position_dependent_kernel_transitions():
    # late jumps happen higher up the flow, so they land on 0.6 more often
    model = two_state_model()
    batch = p.simulate_paths(model, 200_000, p.rng_stream(12, "simulation", 0),
                             p.rng_stream(12, "noise", 0))
    pre = model.points[batch.z[:, 0]] + batch.s[:, 1]
    hit6 = batch.z[:, 1] == 0
    for lo, hi in ((0.2, 0.5), (0.5, 0.8), (0.8, 1.01)):
        band = (pre >= lo) & (pre < hi)
        expect = 0.35 + 0.45 * pre[band].mean()
        assert hit6[band].mean() == pytest.approx(expect, abs=0.01)


def test_trajectory_sup_left_limit(model3):
    path = p.ChainPath(z=np.array([IDX_ZERO, IDX_QUARTER]),
                       s=np.array([0.0, 1.0]),
                       y=np.array([0.0, 0.25]),
                       boundary=np.array([False, True]))
    # the flow from 0 reaches 1 at the forced jump; its left limit wins
    assert p.trajectory_value_sup(model3, path) == pytest.approx(1.0, abs=1e-12)


def test_trajectory_sup_constant_reward():
    model = p.make_model(
        points=[0.0, 0.25, 0.5],
        flow=lambda x, t: x + np.asarray(t),
        exit_time=lambda x: 1.0 - x,
        rate=lambda x: 3.0 * np.asarray(x),
        cum_hazard=lambda x, t: 3.0 * (x * np.asarray(t) + 0.5 * np.asarray(t) ** 2),
        kernel=lambda x: np.full(3, 1.0 / 3.0),
        noise_density=lambda w: np.exp(-np.asarray(w) ** 2 / 0.5) / math.sqrt(0.5 * math.pi),
        noise_sampler=lambda rng, n: rng.normal(0.0, 0.5, size=n),
        obs_map=lambda x: x,
        reward=lambda x: 0.7 * np.ones_like(np.asarray(x, dtype=float)),
        reward_bound=0.7, reward_time_lipschitz=0.0, rate_bound=3.0,
        horizon=3, initial_point=0.0, kernel_is_constant=True,
    )
    batch = p.simulate_paths(model, 50, p.rng_stream(13, "simulation", 0))
    assert np.allclose(p.trajectory_value_sups(model, batch), 0.7, atol=1e-12)


def test_trajectory_sup_monotone_fast_path_matches_grid(model3):
    slow = p.linear_flow_model([0.0, 0.25, 0.5], 3.0, 1.0, 0.25, 9, 0.0)
    object.__setattr__(slow, "flow_reward_monotone", False)
    batch = p.simulate_paths(model3, 100, p.rng_stream(14, "simulation", 0),
                             p.rng_stream(14, "noise", 0))
    fast = p.trajectory_value_sups(model3, batch)
    grid = p.trajectory_value_sups(slow, batch)
    # the grid search includes every segment endpoint, so they agree exactly
    assert np.array_equal(fast, grid)


def test_mean_first_jump_time_matches_quadrature(model3):
    density = lambda t: t * 3.0 * t * math.exp(-1.5 * t * t)
    exact = integrate.quad(density, 0.0, 1.0)[0] + math.exp(-1.5)
    batch = p.simulate_paths(model3, 100_000, p.rng_stream(15, "simulation", 0),
                             p.rng_stream(15, "noise", 0))
    s1 = batch.s[:, 1]
    se = s1.std(ddof=1) / math.sqrt(len(s1))
    assert abs(s1.mean() - exact) < 3.0 * se


def test_make_model_validation():
    uniform = lambda x: np.full(2, 0.5)
    base = dict(
        flow=lambda x, t: x + np.asarray(t), exit_time=lambda x: 1.0 - x,
        rate=lambda x: 3.0 * np.asarray(x),
        cum_hazard=lambda x, t: 3.0 * (x * np.asarray(t) + 0.5 * np.asarray(t) ** 2),
        kernel=uniform,
        noise_density=lambda w: np.exp(-np.asarray(w) ** 2 / 0.5) / math.sqrt(0.5 * math.pi),
        noise_sampler=lambda rng, n: rng.normal(0.0, 0.5, size=n),
        obs_map=lambda x: x, reward=lambda x: np.asarray(x),
        reward_bound=1.0, reward_time_lipschitz=1.0, rate_bound=3.0,
    )
    with pytest.raises(p.ModelValidationError):
        p.make_model(points=[0.1, 0.4], horizon=2, initial_point=0.3, **base)
    with pytest.raises(p.ModelValidationError):
        p.make_model(points=[0.1, 0.4], horizon=0, initial_point=0.1, **base)
    bad_kernel = dict(base, kernel=lambda x: np.array([0.6, 0.6]))
    with pytest.raises(p.ModelValidationError):
        p.make_model(points=[0.1, 0.4], horizon=2, initial_point=0.1, **bad_kernel)
    shifted = dict(base, cum_hazard=lambda x, t: 0.1 + 3.0 * x * np.asarray(t))
    with pytest.raises(p.ModelValidationError):
        p.make_model(points=[0.1, 0.4], horizon=2, initial_point=0.1, **shifted)


def test_linear_flow_model_rejects_bad_parameters():
    with pytest.raises(p.ModelValidationError):
        p.linear_flow_model([0.0, 0.5], a=-1.0, v=1.0, sigma2=0.25,
                            horizon=9, initial_point=0.0)
    with pytest.raises(p.ModelValidationError):
        p.linear_flow_model([0.0, 1.2], a=3.0, v=1.0, sigma2=0.25,
                            horizon=9, initial_point=0.0)
