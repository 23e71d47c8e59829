"""Shared fixtures: the benchmark instance, a two-state instance with a
position-dependent kernel, and a small trained quantization reused by the
dp and stop tests."""

import math
import warnings

import numpy as np
import pytest

import pdmpstop as p


@pytest.fixture(scope="session")
def model3():
    """Three-point benchmark instance: a=3, v=1, points {0, 1/4, 1/2}."""
    return p.example_model()


def two_state_model(horizon: int = 1) -> p.PdmpModel:
    """Two post-jump points with a jump kernel that depends on the pre-jump
    location, so the filter genuinely mixes the prior."""
    a, v, sigma2 = 3.0, 1.0, 0.0625
    sigma = math.sqrt(sigma2)
    log_norm = -0.5 * math.log(2.0 * math.pi * sigma2)

    def kernel(x):
        # lands on 0.6 with probability 0.35 + 0.45 x, x in [0.2, 1]
        p6 = 0.35 + 0.45 * x
        return np.array([p6, 1.0 - p6])

    def cum_hazard(x, t):
        return a * (x * t + 0.5 * v * np.asarray(t) ** 2)

    def hazard_inverse(x, w):
        return (-a * x + np.sqrt(a * a * x * x + 2.0 * a * v * np.asarray(w))) / (a * v)

    return p.make_model(
        points=[0.2, 0.6],
        flow=lambda x, t: x + v * np.asarray(t),
        exit_time=lambda x: (1.0 - x) / v,
        rate=lambda x: a * np.asarray(x),
        cum_hazard=cum_hazard,
        kernel=kernel,
        noise_density=lambda w: np.exp(-np.asarray(w) ** 2 / (2 * sigma2))
        / math.sqrt(2 * math.pi * sigma2),
        noise_sampler=lambda rng, n: rng.normal(0.0, sigma, size=n),
        obs_map=lambda x: x,
        reward=lambda x: np.asarray(x),
        reward_bound=1.0,
        reward_time_lipschitz=v,
        rate_bound=a,
        horizon=horizon,
        initial_point=0.2,
        hazard_inverse=hazard_inverse,
        noise_log_density=lambda w: log_norm - np.asarray(w) ** 2 / (2 * sigma2),
    )


@pytest.fixture(scope="session")
def model2():
    return two_state_model()


@pytest.fixture(scope="session")
def small_quantization(model3):
    """Size-30 grids with errors and a solved table; fast shared artifact."""
    seed = 1717
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        stages = p.clvq_train(
            model3, [30], 20_000,
            p.rng_stream(seed, "quantizer", 0),
            noise_rng=p.rng_stream(seed, "quantizer", 1),
        )
    errs = p.quant_errors(
        stages, model3, 20_000,
        p.rng_stream(seed, "simulation", 3),
        noise_rng=p.rng_stream(seed, "noise", 3),
    )
    grid = p.build_time_grid(model3, [e.s for e in errs[1:]])
    table = p.backward_recursion(stages, model3, grid)
    return stages, errs, grid, table


def random_simplex(rng, n, q):
    """n uniform points on the q-simplex."""
    g = rng.gamma(1.0, size=(n, q))
    return g / g.sum(axis=1, keepdims=True)


def hand_stage(points, k=1, s_scale=1.0, trans=None):
    """Explicit stage from (filter..., time) rows; classes in row order."""
    pts = np.asarray(points, dtype=float)
    classes, cls_of_pt = np.unique(pts[:, :-1], axis=0, return_inverse=True)
    cls_of_pt = np.asarray(cls_of_pt).ravel().astype(np.int64)
    weights = np.full(len(pts), 1.0 / len(pts))
    class_weights = np.bincount(cls_of_pt, weights=weights, minlength=len(classes))
    return p.QuantizedStage(k=k, points=pts, weights=weights,
                            pi_class_of_point=cls_of_pt, pi_classes=classes,
                            class_weights=class_weights, trans=trans,
                            s_scale=s_scale)
