"""Time-grid construction and the quantized backward dynamic-programming
recursion for the value function.

The stopping-time maximization is discretized on a per-stratum grid that
stays strictly between consecutive distinct exit times; conditional
expectations over the quantized chain reduce to weighted sums over the
transition rows estimated by the quantizer.  The recursion records, per
filter-class and step, the maximizing grid time, the grid maximum, the
continuation value and whether continuation strictly wins, which is exactly
the data the stopping rule replays online.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .model import PdmpModel
from .quantize import QuantizedStage


class DeltaInfeasibleError(ValueError):
    """The admissible window for the time step is empty."""


@dataclass(frozen=True)
class TimeGrid:
    """Union of per-stratum grids with step delta.

    ``strata`` maps each index m with distinct consecutive exit times to the
    grid inside that open interval; ``times`` is the sorted union.
    """

    delta: float
    stratum_indices: tuple
    strata: tuple                 # tuple of float arrays, aligned with stratum_indices
    times: np.ndarray

    @property
    def n_times(self) -> int:
        return len(self.times)


def delta_upper_bound(model: PdmpModel) -> float:
    """Half the minimal gap between distinct exit times (0 included)."""
    vals = np.unique(np.concatenate([[0.0], model.exit_times]))
    if len(vals) < 2:
        raise DeltaInfeasibleError("all exit times coincide with 0")
    return 0.5 * float(np.min(np.diff(vals)))


def delta_lower_bound(model: PdmpModel, s_errors: Sequence[float]) -> float:
    """Smallest admissible step given the measured time quantization errors."""
    errs = np.asarray(s_errors, dtype=float)
    return float((2.0 * model.rate_bound) ** -0.5 * np.sqrt(errs.max()))


def build_time_grid(model: PdmpModel, quant_errors: Sequence[float],
                    safety: float = 0.05, delta: Optional[float] = None) -> TimeGrid:
    """Pick the time step just above its lower bound and build the grids.

    ``quant_errors`` holds the L^p errors of the quantized inter-jump times
    for steps 1..N.  The step is (1+safety) times the lower bound, rejected
    when it reaches the half-gap upper bound; a caller-supplied ``delta``
    skips the error-driven choice but is checked against the upper bound.
    """
    upper = delta_upper_bound(model)
    if delta is None:
        lower = delta_lower_bound(model, quant_errors)
        delta = (1.0 + safety) * lower
        if delta >= upper:
            raise DeltaInfeasibleError(
                f"time step {delta:.6g} from measured errors reaches the bound "
                f"{upper:.6g}; use larger quantization grids to shrink the errors")
        if delta <= 0.0:
            raise DeltaInfeasibleError("measured time errors are all zero; supply delta")
    elif not 0.0 < delta < upper:
        raise DeltaInfeasibleError(f"delta must lie in (0, {upper:.6g}), got {delta}")

    t_star = np.concatenate([[0.0], model.exit_times])
    indices, grids, merged = [], [], []
    for m in range(len(t_star) - 1):
        left, right = float(t_star[m]), float(t_star[m + 1])
        if not left < right:
            continue
        pts = []
        i = 1
        while left + i * delta <= right - delta:
            pts.append(left + i * delta)
            i += 1
        endpoint = right - delta
        if endpoint not in pts:
            pts.append(endpoint)
        grid = np.array(sorted(pts))
        assert grid[0] > left and grid[-1] < right
        indices.append(m)
        grids.append(grid)
        merged.append(grid)
    times = np.concatenate(merged)
    return TimeGrid(delta=float(delta), stratum_indices=tuple(indices),
                    strata=tuple(grids), times=times)


@dataclass
class ValuePolicyTable:
    """Backward-recursion output.

    ``values[n]`` holds the approximate value per filter-class of the step-n
    grid; the remaining per-class arrays exist for n = 0..N-1 and carry the
    optimizer data replayed by the stopping rule: the smallest maximizing
    grid time, the grid maximum, the continuation value, and the flag set
    when continuation strictly beats every grid time.
    """

    values: list                  # n = 0..N
    shat: list                    # n = 0..N-1
    max_j: list
    cont: list
    wait: list
    time_grid: TimeGrid
    j_rows: Optional[list] = field(default=None, repr=False)  # per-class J on the grid

    def value_at_start(self) -> float:
        return float(self.values[0][0])


def terminal_value(model: PdmpModel, pi: np.ndarray) -> float:
    """Expected reward if forced to stop at the last jump: sum of point
    rewards weighted by the filter, accumulated left to right."""
    acc = 0.0
    for i in range(model.q):
        acc += float(model.reward(model.points[i])) * float(pi[i])
    return acc


def op_J_hat(stage: QuantizedStage, next_stage: QuantizedStage, v_next: np.ndarray,
             pi_class: int, u: float, model: PdmpModel) -> float:
    """Discretized reward-if-waiting-until-u plus continuation-before-u value.

    Successor mass with inter-jump time at most u contributes the next-step
    value of its filter-class; each still-alive state contributes its flowed
    reward damped by its exact no-jump probability up to u.
    """
    row = stage.trans.getrow(pi_class)
    cols, w = row.indices, row.data
    s_next = next_stage.points[cols, -1]
    v_pts = v_next[next_stage.pi_class_of_point[cols]]
    before = s_next <= u
    g_term = float(np.sum(w[before] * v_pts[before]))
    pi = stage.pi_classes[pi_class]
    running = 0.0
    for i in range(model.q):
        if u < model.exit_times[i]:
            running += (float(pi[i])
                        * float(model.reward(model.flow(model.points[i], u)))
                        * float(np.exp(-model.cum_hazard(model.points[i], u))))
    return g_term + running


def op_K_hat(stage: QuantizedStage, next_stage: QuantizedStage, v_next: np.ndarray,
             pi_class: int) -> float:
    """Continuation value: expected next-step value given the class."""
    row = stage.trans.getrow(pi_class)
    return float(np.sum(row.data * v_next[next_stage.pi_class_of_point[row.indices]]))


def backward_recursion(stages: Sequence[QuantizedStage], model: PdmpModel,
                       time_grid: TimeGrid, store_j: bool = True) -> ValuePolicyTable:
    """Value recursion from the horizon down to the start.

    The terminal value per class is the filter-weighted reward; each earlier
    value is the maximum between the best grid time of the one-step operator
    and the continuation value, continuation winning only on strict
    inequality.
    """
    n_stages = len(stages)
    u = time_grid.times
    n_u = len(u)
    values: list = [None] * n_stages
    shat = [None] * (n_stages - 1)
    max_j = [None] * (n_stages - 1)
    cont = [None] * (n_stages - 1)
    wait = [None] * (n_stages - 1)
    j_rows = [None] * (n_stages - 1) if store_j else None

    values[-1] = np.array([terminal_value(model, pi) for pi in stages[-1].pi_classes])

    # survival-damped running reward of still-alive states per grid time
    alive = u[None, :] < model.exit_times[:, None]            # (q, n_u)
    flowed_reward = np.array([model.reward(model.flow(model.points[i], u))
                              for i in range(model.q)])       # (q, n_u)
    no_jump = np.array([np.exp(-model.cum_hazard(model.points[i], u))
                        for i in range(model.q)])             # (q, n_u)
    h_base = np.where(alive, flowed_reward * no_jump, 0.0)

    for n in range(n_stages - 1, 0, -1):
        stage, nxt = stages[n - 1], stages[n]
        v_next = values[n]
        v_pts = v_next[nxt.pi_class_of_point]                 # (P,)
        s_pts = nxt.points[:, -1]                             # (P,)
        le = (s_pts[:, None] <= u[None, :]).astype(float)     # (P, n_u)
        g_mat = stage.trans @ (v_pts[:, None] * le)           # (C, n_u)
        h_mat = stage.pi_classes @ h_base                     # (C, n_u)
        j_mat = g_mat + h_mat
        best = np.argmax(j_mat, axis=1)                       # first max = smallest time
        jmax = j_mat[np.arange(len(best)), best]
        k_val = stage.trans @ v_pts
        values[n - 1] = np.maximum(jmax, k_val)
        shat[n - 1] = u[best]
        max_j[n - 1] = jmax
        cont[n - 1] = k_val
        wait[n - 1] = k_val > jmax
        if store_j:
            j_rows[n - 1] = j_mat
    return ValuePolicyTable(values=values, shat=shat, max_j=max_j, cont=cont,
                            wait=wait, time_grid=time_grid, j_rows=j_rows)


def table_to_jsonable(table: ValuePolicyTable) -> dict:
    tg = table.time_grid
    return {"time_grid": {"delta": tg.delta,
                          "stratum_indices": list(tg.stratum_indices),
                          "strata": [g.tolist() for g in tg.strata]},
            "values": [v.tolist() for v in table.values],
            "shat": [v.tolist() for v in table.shat],
            "max_j": [v.tolist() for v in table.max_j],
            "cont": [v.tolist() for v in table.cont],
            "wait": [v.astype(int).tolist() for v in table.wait]}


def table_from_jsonable(payload: dict) -> ValuePolicyTable:
    tg_rec = payload["time_grid"]
    strata = tuple(np.array(g, dtype=float) for g in tg_rec["strata"])
    tg = TimeGrid(delta=float(tg_rec["delta"]),
                  stratum_indices=tuple(tg_rec["stratum_indices"]),
                  strata=strata,
                  times=np.concatenate(strata) if strata else np.array([]))
    return ValuePolicyTable(
        values=[np.array(v, dtype=float) for v in payload["values"]],
        shat=[np.array(v, dtype=float) for v in payload["shat"]],
        max_j=[np.array(v, dtype=float) for v in payload["max_j"]],
        cont=[np.array(v, dtype=float) for v in payload["cont"]],
        wait=[np.array(v, dtype=bool) for v in payload["wait"]],
        time_grid=tg)


def save_table(table: ValuePolicyTable, path) -> None:
    with open(path, "w") as fh:
        json.dump(table_to_jsonable(table), fh)


def load_table(path) -> ValuePolicyTable:
    with open(path) as fh:
        return table_from_jsonable(json.load(fh))
