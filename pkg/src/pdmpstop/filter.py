"""Exact recursive filter for the post-jump location given the noisy
observations and inter-jump times.

The conditional law of Z_n over the finite post-jump set is updated at each
jump from the previous filter state, the new observation and the inter-jump
time.  Two branches exist: a natural jump strictly between consecutive exit
times mixes rate and survival weights over the still-alive states, while a
jump exactly at an exit time is necessarily forced from the state that runs
out of domain, which drops the dependence on the previous filter state.
Weight products are accumulated in log space before normalization so that
far-tail observations do not underflow.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .model import ChainPath, PdmpModel

SIMPLEX_TOL = 1e-12


class FilterDomainError(ValueError):
    pass


class DegenerateLikelihoodError(ArithmeticError):
    """All posterior weights vanished; reports the offending observation."""

    def __init__(self, y, s):
        super().__init__(f"filter weights all vanished at y={y!r}, s={s!r}")
        self.y = y
        self.s = s


def filter_init(model: PdmpModel, override=None) -> np.ndarray:
    """Initial filter state: point mass at the starting point, or a caller
    supplied distribution validated on the simplex."""
    if override is not None:
        pi = np.asarray(override, dtype=float)
        if pi.shape != (model.q,) or np.any(pi < 0) or abs(pi.sum() - 1.0) > SIMPLEX_TOL:
            raise ValueError("override must be a probability vector over the points")
        return pi.copy()
    pi = np.zeros(model.q)
    pi[model.initial_index] = 1.0
    return pi


def _log_noise_density(model: PdmpModel, diff: np.ndarray) -> np.ndarray:
    if model.noise_log_density is not None:
        return np.asarray(model.noise_log_density(diff), dtype=float)
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(model.noise_density(diff), dtype=float))


def _boundary_stratum(model: PdmpModel, s: float) -> int:
    """Lowest index m with exit_times[m] == s, or -1 if s is no exit time."""
    m = int(np.searchsorted(model.exit_times, s, side="left"))
    if m < model.q and model.exit_times[m] == s:
        return m
    return -1


def _normalize_log_weights(logw: np.ndarray, y, s) -> np.ndarray:
    top = np.max(logw)
    if not np.isfinite(top):
        raise DegenerateLikelihoodError(y, s)
    w = np.exp(logw - top)
    total = w.sum()
    if total <= 0 or not np.isfinite(total):
        raise DegenerateLikelihoodError(y, s)
    return w / total


def filter_step(model: PdmpModel, pi: np.ndarray, y: float, s: float,
                boundary: bool) -> np.ndarray:
    """One filter update from the previous state and the new (y, s).

    ``boundary`` marks a jump forced at an exit time; an ``s`` exactly equal
    to some stored exit time is routed to the forced branch regardless, since
    a natural jump time matches an exit time only on a null event.
    """
    pi = np.asarray(pi, dtype=float)
    if s <= 0:
        raise FilterDomainError(f"inter-jump time must be positive, got {s}")
    if s > model.t_star_max:
        raise FilterDomainError(f"s={s} exceeds the largest exit time {model.t_star_max}")
    x = model.points
    log_f = _log_noise_density(model, y - model.obs_map(x))

    m = _boundary_stratum(model, s)
    if boundary and m < 0:
        raise FilterDomainError(f"boundary flag set but s={s} matches no exit time")
    if m >= 0:
        # forced jump from the state whose domain ends at s
        mix = model.boundary_kernels[m]
    else:
        alive = model.exit_times > s
        coef = np.zeros(model.q)
        flowed = model.flow(x[alive], s)
        coef[alive] = (pi[alive] * np.asarray(model.rate(flowed))
                       * np.exp(-np.asarray(model.cum_hazard(x[alive], s))))
        rows = _kernel_rows_at(model, flowed)
        mix = coef[alive] @ rows
    with np.errstate(divide="ignore"):
        logw = np.log(mix) + log_f
    return _normalize_log_weights(logw, y, s)


def _kernel_rows_at(model: PdmpModel, flowed: np.ndarray) -> np.ndarray:
    if model.kernel_is_constant:
        row = np.asarray(model.kernel(model.points[0]), dtype=float)
        return np.broadcast_to(row, (len(flowed), model.q))
    return np.array([model.kernel(xf) for xf in np.asarray(flowed)], dtype=float)


def filter_path(model: PdmpModel, path: ChainPath, init_override=None) -> np.ndarray:
    """Filter states along a chain path, shape (len(path), q)."""
    out = np.empty((len(path), model.q))
    out[0] = filter_init(model, init_override)
    for n in range(1, len(path)):
        out[n] = filter_step(model, out[n - 1], float(path.y[n]), float(path.s[n]),
                             bool(path.boundary[n]))
    return out


def filter_step_batch(model: PdmpModel, pis: np.ndarray, ys: np.ndarray,
                      ss: np.ndarray, boundaries: np.ndarray) -> np.ndarray:
    """Vectorized filter_step over paths: pis (M, q), ys/ss/boundaries (M,)."""
    M, q = pis.shape
    log_f = _log_noise_density(model, ys[:, None] - model.obs_map(model.points)[None, :])
    mix = np.zeros((M, q))

    strata = np.searchsorted(model.exit_times, ss, side="left")
    strata = np.minimum(strata, q - 1)
    forced = (model.exit_times[strata] == ss)
    if np.any(ss <= 0) or np.any(ss > model.t_star_max):
        bad = int(np.flatnonzero((ss <= 0) | (ss > model.t_star_max))[0])
        raise FilterDomainError(f"s={ss[bad]} outside (0, {model.t_star_max}]")
    if np.any(boundaries & ~forced):
        bad = int(np.flatnonzero(boundaries & ~forced)[0])
        raise FilterDomainError(f"boundary flag set but s={ss[bad]} matches no exit time")

    if forced.any():
        mix[forced] = model.boundary_kernels[strata[forced]]
    nat = ~forced
    if nat.any():
        s_nat = ss[nat]
        coef_sum = np.zeros((nat.sum(), q))
        for i in range(q):
            live = model.exit_times[i] > s_nat
            if not live.any():
                continue
            t_live = s_nat[live]
            flowed = model.flow(model.points[i], t_live)
            c = (pis[nat][live, i] * np.asarray(model.rate(flowed))
                 * np.exp(-np.asarray(model.cum_hazard(model.points[i], t_live))))
            rows = _kernel_rows_at(model, np.atleast_1d(flowed))
            coef_sum[live] += c[:, None] * rows
        mix[nat] = coef_sum

    with np.errstate(divide="ignore"):
        logw = np.log(mix) + log_f
    top = logw.max(axis=1)
    bad = ~np.isfinite(top)
    if bad.any():
        j = int(np.flatnonzero(bad)[0])
        raise DegenerateLikelihoodError(float(ys[j]), float(ss[j]))
    w = np.exp(logw - top[:, None])
    total = w.sum(axis=1)
    if np.any(total <= 0) or not np.all(np.isfinite(total)):
        j = int(np.flatnonzero((total <= 0) | ~np.isfinite(total))[0])
        raise DegenerateLikelihoodError(float(ys[j]), float(ss[j]))
    return w / total[:, None]


def filter_paths(model: PdmpModel, z=None, s=None, y=None, boundary=None,
                 batch=None, init_override=None) -> np.ndarray:
    """Filter states for a batch of paths, shape (M, N+1, q)."""
    if batch is not None:
        s, y, boundary = batch.s, batch.y, batch.boundary
    M, n_steps = s.shape
    out = np.empty((M, n_steps, np.shape(filter_init(model, init_override))[0]))
    out[:, 0, :] = filter_init(model, init_override)
    for n in range(1, n_steps):
        out[:, n, :] = filter_step_batch(model, out[:, n - 1, :], y[:, n], s[:, n],
                                         boundary[:, n])
    return out
