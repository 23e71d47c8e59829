"""Online stopping rule driven by the value-policy table, and its Monte
Carlo evaluation.

At each jump the current (filter, inter-jump time) pair is projected onto
that step's grid; the stored decision data of the projected filter-class
yields a planned stopping horizon: the largest exit time when continuation
strictly won the recursion, otherwise the smallest maximizing grid time.
The realized stopping time accumulates planned-horizon/inter-jump-time
minima, and once a jump overshoots the plan every later plan is forced to
zero, which is exactly the structural condition making the rule a stopping
time of the observed filtration.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .dp import ValuePolicyTable
from .filter import filter_init, filter_path, filter_step_batch
from .model import PdmpModel, rng_stream, simulate_paths
from .quantize import QuantizedStage, nearest_indices, project

EVAL_CHUNK = 1 << 15


@dataclass
class StoppingDecision:
    """Decision record for one online step."""

    k: int
    planned: float        # planned stopping horizon measured from the current jump
    pi_class: int         # projected filter-class index used for the lookup
    halted: bool          # True once a previous jump overshot the plan


def policy_decide(table: ValuePolicyTable, stages: Sequence[QuantizedStage], k: int,
                  pi: np.ndarray, s: float) -> float:
    """Planned stopping horizon after the k-th jump given filter and
    inter-jump time: deterministic lookup through the step-k grid."""
    idx = project(stages[k], (pi, s))
    cls = int(stages[k].pi_class_of_point[idx])
    if bool(table.wait[k][cls]):
        return _t_star_max(stages)
    return float(table.shat[k][cls])


def _t_star_max(stages: Sequence[QuantizedStage]) -> float:
    return float(stages[0].s_scale)


def run_policy(model: PdmpModel, table: ValuePolicyTable,
               stages: Sequence[QuantizedStage], rng, noise_rng=None,
               trace: Optional[list] = None) -> tuple[float, float]:
    """Simulate one path under the stopping rule; returns (stop time, reward).

    A mid-flight stop is rewarded at the flow point reached when the plan
    runs out; exhausting all jumps stops at the final jump with the post-jump
    reward.  ``trace`` collects per-step decision records when provided.
    """
    path = simulate_paths(model, 1, rng, noise_rng).path(0)
    pis = filter_path(model, path)
    halted = False
    stop_time = 0.0
    reward = None
    for k in range(model.horizon):
        if halted:
            planned = 0.0
            cls = -1
        else:
            idx = project(stages[k], (pis[k], float(path.s[k])))
            cls = int(stages[k].pi_class_of_point[idx])
            planned = model.t_star_max if bool(table.wait[k][cls]) else float(table.shat[k][cls])
        if trace is not None:
            trace.append(StoppingDecision(k=k, planned=planned, pi_class=cls, halted=halted))
        s_next = float(path.s[k + 1])
        stop_time += min(planned, s_next)
        if not halted and s_next > planned:
            reward = float(model.reward(model.flow(model.points[path.z[k]], planned)))
            halted = True
    if not halted:
        reward = float(model.reward(model.points[path.z[-1]]))
    return stop_time, reward


def _planned_batch(table, stages, k, pis, ss):
    """Vectorized policy_decide over a batch at one step."""
    stage = stages[k]
    samples = np.column_stack([pis, ss / stage.s_scale])
    idx = nearest_indices(stage.scaled_points(), samples)
    cls = stage.pi_class_of_point[idx]
    t_q = stages[0].s_scale
    return np.where(table.wait[k][cls], t_q, table.shat[k][cls]), cls


def run_policy_batch(model: PdmpModel, table: ValuePolicyTable,
                     stages: Sequence[QuantizedStage], n_paths: int, rng,
                     noise_rng=None, return_trace: bool = False):
    """Policy rollout for a batch; returns (stop_times, rewards) and, when
    asked, the per-step planned horizons and inter-jump times for invariant
    checks."""
    batch = simulate_paths(model, n_paths, rng, noise_rng)
    n_steps = model.horizon
    pis = filter_init(model)[None, :].repeat(n_paths, axis=0)
    halted = np.zeros(n_paths, dtype=bool)
    stop_time = np.zeros(n_paths)
    reward = np.empty(n_paths)
    planned_all = np.zeros((n_paths, n_steps)) if return_trace else None
    for k in range(n_steps):
        planned, _ = _planned_batch(table, stages, k, pis, batch.s[:, k])
        planned = np.where(halted, 0.0, planned)
        if return_trace:
            planned_all[:, k] = planned
        s_next = batch.s[:, k + 1]
        stop_time += np.minimum(planned, s_next)
        overshoot = ~halted & (s_next > planned)
        if overshoot.any():
            reward[overshoot] = model.reward(
                model.flow(model.points[batch.z[overshoot, k]], planned[overshoot]))
            halted |= overshoot
        if k + 1 < n_steps:
            pis = filter_step_batch(model, pis, batch.y[:, k + 1], batch.s[:, k + 1],
                                    batch.boundary[:, k + 1])
    reward[~halted] = model.reward(model.points[batch.z[~halted, -1]])
    if return_trace:
        return stop_time, reward, planned_all, batch.s
    return stop_time, reward


def evaluate_policy(model: PdmpModel, table: ValuePolicyTable,
                    stages: Sequence[QuantizedStage], n_paths: int, rng=None,
                    seed: Optional[int] = None, chunk: int = EVAL_CHUNK) -> tuple[float, float]:
    """Mean reward of the stopping rule over independent rollouts with its
    standard error.

    With a ``seed``, paths are generated in fixed-size blocks on separate
    counter-based streams, so the estimate is reproducible and independent
    of any thread-level parallelism in the linear algebra.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    total = 0.0
    total_sq = 0.0
    done = 0
    block = 0
    while done < n_paths:
        m = min(chunk, n_paths - done)
        if seed is not None:
            block_rng = rng_stream(seed, "evaluation", 2 * block)
            block_noise = rng_stream(seed, "evaluation", 2 * block + 1)
        else:
            block_rng, block_noise = rng, None
        _, rewards = run_policy_batch(model, table, stages, m, block_rng, block_noise)
        total += float(np.sum(rewards))
        total_sq += float(np.sum(rewards ** 2))
        done += m
        block += 1
    mean = total / n_paths
    if n_paths == 1:
        return mean, 0.0
    var = max((total_sq - n_paths * mean * mean) / (n_paths - 1), 0.0)
    return mean, float(np.sqrt(var / n_paths))


def epsilon_rule_decide(table: ValuePolicyTable, stages: Sequence[QuantizedStage],
                        k: int, pi: np.ndarray, s: float, eps: float) -> float:
    """Slackened variant of policy_decide used only in tests: the planned
    horizon is the smallest grid time whose operator value comes within
    ``eps`` of the grid maximum (the continuation branch is unchanged)."""
    if table.j_rows is None:
        raise ValueError("table was built without stored operator rows")
    idx = project(stages[k], (pi, s))
    cls = int(stages[k].pi_class_of_point[idx])
    if bool(table.wait[k][cls]):
        return _t_star_max(stages)
    row = table.j_rows[k][cls]
    good = np.flatnonzero(row >= table.max_j[k][cls] - eps)
    return float(table.time_grid.times[good[0]])
