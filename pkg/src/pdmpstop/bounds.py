"""A priori and empirical error bounds for the quantized value approximation
and for the reward loss of the computable stopping rule.

Both a priori bounds telescope a one-step inequality from the horizon down
to step zero.  Their inputs are the measured quantization errors of the
(filter, inter-jump time) chain, the model constants, and the time-grid
step, which must be large enough relative to the time errors for the
one-step inequality to hold and small enough to fit between distinct exit
times.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .model import PdmpModel


class DeltaConditionError(ValueError):
    """The time step violates an admissibility condition of the bound."""


@dataclass(frozen=True)
class BoundInputs:
    """Measured quantization errors plus the constants entering the bounds.

    ``pi_errors[n]`` is the filter error at step n in the total-variation
    style norm (sum of absolute coordinate differences), ``s_errors[n]`` the
    inter-jump-time error, both for n = 0..horizon with the step-0 entries
    zero by construction.
    """

    pi_errors: np.ndarray
    s_errors: np.ndarray
    reward_bound: float           # sup |g|
    rate_bound: float             # sup of the jump rate
    reward_time_lipschitz: float  # Lipschitz constant of t -> g(flow(x, t))
    horizon: int
    delta: float
    delta_upper: Optional[float] = None   # strict cap from the exit-time gaps

    def __post_init__(self):
        pi = np.asarray(self.pi_errors, dtype=float)
        s = np.asarray(self.s_errors, dtype=float)
        object.__setattr__(self, "pi_errors", pi)
        object.__setattr__(self, "s_errors", s)
        n = self.horizon
        if pi.shape != (n + 1,) or s.shape != (n + 1,):
            raise ValueError(
                f"expected {n + 1} per-step errors, got {pi.shape} and {s.shape}"
            )
        if (pi < 0).any() or (s < 0).any():
            raise ValueError("quantization errors must be nonnegative")
        if self.delta <= 0:
            raise ValueError("delta must be positive")


def bound_inputs(
    model: PdmpModel,
    pi_errors: Sequence[float],
    s_errors: Sequence[float],
    delta: float,
) -> BoundInputs:
    """Assemble BoundInputs from a model and measured per-step errors."""
    from .dp import delta_upper_bound

    return BoundInputs(
        pi_errors=np.asarray(pi_errors, dtype=float),
        s_errors=np.asarray(s_errors, dtype=float),
        reward_bound=model.reward_bound,
        rate_bound=model.rate_bound,
        reward_time_lipschitz=model.reward_time_lipschitz,
        horizon=model.horizon,
        delta=delta,
        delta_upper=delta_upper_bound(model),
    )


def lipschitz_constants(model: PdmpModel) -> np.ndarray:
    """Lipschitz constants of the value functions, indexed by step n = 0..N.

    The backward recursion propagates [v_n] <= 3 C_g + 2 [v_{n+1}] from
    [v_N] <= C_g, which closes to (2^(N-n+2) - 3) C_g.
    """
    n = np.arange(model.horizon + 1)
    return (2.0 ** (model.horizon - n + 2) - 3.0) * model.reward_bound


def _check_delta(inputs: BoundInputs) -> None:
    lower = (2.0 * inputs.rate_bound) ** -0.5 * np.sqrt(inputs.s_errors[1:].max())
    if not inputs.delta > lower:
        raise DeltaConditionError(
            f"delta={inputs.delta:.6g} must exceed "
            f"(2*rate_bound)^-1/2 * max sqrt(s_error) = {lower:.6g}"
        )
    if inputs.delta_upper is not None and not inputs.delta < inputs.delta_upper:
        raise DeltaConditionError(
            f"delta={inputs.delta:.6g} must stay below half the minimal "
            f"exit-time gap {inputs.delta_upper:.6g}"
        )


def _vlip(inputs: BoundInputs) -> np.ndarray:
    n = np.arange(inputs.horizon + 1)
    return (2.0 ** (inputs.horizon - n + 2) - 3.0) * inputs.reward_bound


def value_bound_steps(inputs: BoundInputs) -> np.ndarray:
    """Per-step bounds B_n on the value approximation error, n = 0..N.

    B_N = C_g * pi_error_N; going backward each step adds
    a*delta + b*sqrt(s_error_{n+1}) + c_n*pi_error_n
    + 2[v_{n+1}]*pi_error_{n+1} with a = [g]_2 + 2 C_g C_lambda,
    b = 2 C_g sqrt(2 C_lambda), c_n = [v_n] + 4 C_g + 2 [v_{n+1}].
    """
    _check_delta(inputs)
    c_g = inputs.reward_bound
    vlip = _vlip(inputs)
    a = inputs.reward_time_lipschitz + 2.0 * c_g * inputs.rate_bound
    b = 2.0 * c_g * np.sqrt(2.0 * inputs.rate_bound)
    big_n = inputs.horizon
    steps = np.empty(big_n + 1)
    steps[big_n] = c_g * inputs.pi_errors[big_n]
    for n in range(big_n - 1, -1, -1):
        c_n = vlip[n] + 4.0 * c_g + 2.0 * vlip[n + 1]
        steps[n] = (
            steps[n + 1]
            + a * inputs.delta
            + b * np.sqrt(inputs.s_errors[n + 1])
            + c_n * inputs.pi_errors[n]
            + 2.0 * vlip[n + 1] * inputs.pi_errors[n + 1]
        )
    return steps


def theoretical_bound(inputs: BoundInputs) -> float:
    """A priori bound on |V_0 - Vhat_0| from the measured quantization errors."""
    return float(value_bound_steps(inputs)[0])


def policy_bound(inputs: BoundInputs) -> float:
    """A priori bound on |V_0 - Vbar_0|, the reward loss of the stopping rule.

    Telescopes PB_n = PB_{n+1} + B_n + B_{n+1} + d_n*pi_error_n
    + 2[v_{n+1}]*pi_error_{n+1} + b*sqrt(s_error_{n+1}) from PB_N = 0,
    with d_n = 7 C_g + 4 [v_{n+1}] and the B_n of the value bound.
    """
    b_steps = value_bound_steps(inputs)
    c_g = inputs.reward_bound
    vlip = _vlip(inputs)
    b = 2.0 * c_g * np.sqrt(2.0 * inputs.rate_bound)
    acc = 0.0
    for n in range(inputs.horizon - 1, -1, -1):
        d_n = 7.0 * c_g + 4.0 * vlip[n + 1]
        acc += (
            b_steps[n]
            + b_steps[n + 1]
            + d_n * inputs.pi_errors[n]
            + 2.0 * vlip[n + 1] * inputs.pi_errors[n + 1]
            + b * np.sqrt(inputs.s_errors[n + 1])
        )
    return float(acc)


def empirical_bound(vbar0: float, vhat0: float, sup_estimate: float) -> float:
    """Data-driven error proxy: max of |Vbar_0 - Vhat_0| and |sup - Vhat_0|.

    The first term gauges the spread between the two convergent estimates of
    the value, the second the gap to the Monte Carlo mean of the running
    supremum of the reward, an upper bound on the value.
    """
    return max(abs(vbar0 - vhat0), abs(sup_estimate - vhat0))
