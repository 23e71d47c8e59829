"""Per-time-step vector quantization of the (filter, inter-jump-time) chain.

Competitive-learning VQ trains one codebook per step on simulated chain
samples; a frozen counting pass over fresh samples then estimates cell
weights and the conditional transition matrices that drive the dynamic
programming step.  Codebooks live in a product metric: Euclidean distance on
the filter coordinates concatenated with the inter-jump time scaled by the
largest exit time, so both blocks have comparable ranges.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import sparse

from .filter import filter_init, filter_paths
from .model import PdmpModel, rng_stream, simulate_paths

# Competitive-learning schedule: step gamma_0 * A / (A + t) at sample t,
# a single training pass; A is tied to the sample count below.
CLVQ_GAMMA0 = 0.5

PROJECTION_CHUNK = 4096


class QuantizerConfigError(ValueError):
    pass


@dataclass
class QuantizedStage:
    """Trained grid for one time step.

    ``points`` rows are (filter vector, inter-jump time) in raw units;
    ``trans`` has one row per filter-class at this step and one column per
    grid point of the next step (None at the final step).
    """

    k: int
    points: np.ndarray              # (P, q+1)
    weights: np.ndarray             # (P,)
    pi_class_of_point: np.ndarray   # (P,) int
    pi_classes: np.ndarray          # (C, q) distinct filter components
    class_weights: np.ndarray       # (C,)
    trans: Optional[sparse.csr_matrix]
    s_scale: float                  # time scaling used by the metric

    @property
    def n_points(self) -> int:
        return len(self.points)

    @property
    def n_classes(self) -> int:
        return len(self.pi_classes)

    def scaled_points(self) -> np.ndarray:
        scaled = self.points.copy()
        scaled[:, -1] /= self.s_scale
        return scaled


def _scaled(theta: np.ndarray, s_scale: float) -> np.ndarray:
    out = np.asarray(theta, dtype=float).copy()
    out[..., -1] /= s_scale
    return out


def nearest_indices(codebook_scaled: np.ndarray, samples_scaled: np.ndarray,
                    chunk: int = PROJECTION_CHUNK) -> np.ndarray:
    """Nearest codeword per sample row; ties go to the lowest index."""
    code_sq = np.einsum("ij,ij->i", codebook_scaled, codebook_scaled)
    out = np.empty(len(samples_scaled), dtype=np.int64)
    for lo in range(0, len(samples_scaled), chunk):
        block = samples_scaled[lo:lo + chunk]
        # squared distance up to a per-sample constant
        d = code_sq[None, :] - 2.0 * (block @ codebook_scaled.T)
        out[lo:lo + chunk] = np.argmin(d, axis=1)
    return out


def project(stage: QuantizedStage, theta) -> int:
    """Grid index of the nearest point to (filter vector, time) in the
    product metric; exact grid points map to themselves."""
    flat = np.concatenate([np.asarray(theta[0], dtype=float).ravel(),
                           [float(theta[1])]])
    scaled = _scaled(flat, stage.s_scale)
    diff = stage.scaled_points() - scaled[None, :]
    return int(np.argmin(np.einsum("ij,ij->i", diff, diff)))


def _clvq_pass_numpy(code: np.ndarray, samples: np.ndarray, gamma0: float, big_a: float):
    for t in range(len(samples)):
        diff = code - samples[t]
        j = int(np.argmin(np.einsum("ij,ij->i", diff, diff)))
        code[j] += (gamma0 * big_a / (big_a + t)) * (samples[t] - code[j])


try:  # compiled inner loop; the pure numpy fallback is semantically identical
    from numba import njit

    @njit(cache=True)
    def _clvq_pass_numba(code, samples, gamma0, big_a):  # pragma: no cover
        n, d = samples.shape
        m = code.shape[0]
        for t in range(n):
            best = 0
            best_d = 0.0
            for jj in range(d):
                delta = code[0, jj] - samples[t, jj]
                best_d += delta * delta
            for i in range(1, m):
                dist = 0.0
                for jj in range(d):
                    delta = code[i, jj] - samples[t, jj]
                    dist += delta * delta
                    if dist >= best_d:
                        break
                if dist < best_d:
                    best_d = dist
                    best = i
            g = gamma0 * big_a / (big_a + t)
            for jj in range(d):
                code[best, jj] += g * (samples[t, jj] - code[best, jj])

    _clvq_pass = _clvq_pass_numba
except Exception:  # pragma: no cover
    _clvq_pass = _clvq_pass_numpy


def _first_distinct_rows(samples: np.ndarray, size: int) -> np.ndarray:
    _, first_idx = np.unique(samples, axis=0, return_index=True)
    keep = np.sort(first_idx)[:size]
    return samples[keep].copy()


def simulate_theta(model: PdmpModel, n_paths: int, rng, noise_rng=None):
    """Simulated (filter, inter-jump-time) chain: (M, N+1, q) and (M, N+1)."""
    batch = simulate_paths(model, n_paths, rng, noise_rng)
    pis = filter_paths(model, batch=batch)
    return pis, batch.s


def clvq_train(model: PdmpModel, grid_sizes: Sequence[int], n_samples: int,
               rng, noise_rng=None, train_theta=None, freeze_theta=None) -> list[QuantizedStage]:
    """Train per-step grids and estimate weights and transition rows.

    One competitive-learning pass over ``n_samples`` simulated chains per
    step, then a frozen counting pass over ``n_samples`` fresh chains.  The
    step-0 grid is pinned to the deterministic start.  Pre-simulated sample
    arrays can be injected (used by tests); fresh ones are drawn otherwise.
    """
    sizes = list(grid_sizes)
    n_stages = model.horizon + 1
    if len(sizes) == 1:
        sizes = [1] + [sizes[0]] * (n_stages - 1)
    if len(sizes) != n_stages:
        raise QuantizerConfigError(
            f"expected {n_stages} grid sizes (or one shared size), got {len(sizes)}")
    if sizes[0] != 1:
        raise QuantizerConfigError("the step-0 grid must have exactly one point")
    if any(sz < 1 for sz in sizes):
        raise QuantizerConfigError("grid sizes must be positive")
    if n_samples < 10 * max(sizes):
        raise QuantizerConfigError(
            f"n_samples={n_samples} too small: need at least 10x the largest grid size")

    if train_theta is None:
        train_theta = simulate_theta(model, n_samples, rng, noise_rng)
    if freeze_theta is None:
        freeze_theta = simulate_theta(model, n_samples, rng, noise_rng)
    pis_tr, s_tr = train_theta
    pis_fr, s_fr = freeze_theta

    s_scale = model.t_star_max
    big_a = n_samples / 10.0

    codebooks = [np.concatenate([filter_init(model), [0.0]])[None, :]]
    for k in range(1, n_stages):
        samples = np.column_stack([pis_tr[:, k, :], s_tr[:, k] / s_scale])
        code = _first_distinct_rows(samples, sizes[k])
        if len(code) < sizes[k]:
            warnings.warn(f"step {k}: only {len(code)} distinct samples for "
                          f"{sizes[k]} requested grid points")
        _clvq_pass(code, samples, CLVQ_GAMMA0, big_a)
        codebooks.append(code)

    # frozen pass: assign fresh samples, count cells and class transitions
    assigns = [np.zeros(len(s_fr), dtype=np.int64)]
    counts = [np.array([len(s_fr)], dtype=np.int64)]
    for k in range(1, n_stages):
        samples = np.column_stack([pis_fr[:, k, :], s_fr[:, k] / s_scale])
        idx = nearest_indices(codebooks[k], samples)
        assigns.append(idx)
        counts.append(np.bincount(idx, minlength=len(codebooks[k])))

    stages: list[QuantizedStage] = []
    for k in range(n_stages):
        visited = counts[k] > 0
        dropped = int((~visited).sum())
        if dropped:
            warnings.warn(f"step {k}: dropping {dropped} grid points with empty cells")
        keep = np.flatnonzero(visited)
        remap = -np.ones(len(codebooks[k]), dtype=np.int64)
        remap[keep] = np.arange(len(keep))
        assigns[k] = remap[assigns[k]]
        code = codebooks[k][keep]
        pts = code.copy()
        pts[:, -1] *= s_scale
        weights = counts[k][keep] / counts[k][keep].sum()
        classes, cls_of_pt = np.unique(pts[:, :-1], axis=0, return_inverse=True)
        cls_of_pt = np.asarray(cls_of_pt).ravel()
        class_weights = np.bincount(cls_of_pt, weights=weights, minlength=len(classes))
        stages.append(QuantizedStage(k=k, points=pts, weights=weights,
                                     pi_class_of_point=cls_of_pt.astype(np.int64),
                                     pi_classes=classes, class_weights=class_weights,
                                     trans=None, s_scale=s_scale))

    for k in range(n_stages - 1):
        rows = stages[k].pi_class_of_point[assigns[k]]
        cols = assigns[k + 1]
        data = np.ones(len(rows))
        mat = sparse.coo_matrix((data, (rows, cols)),
                                shape=(stages[k].n_classes, stages[k + 1].n_points)).tocsr()
        row_sums = np.asarray(mat.sum(axis=1)).ravel()
        # every surviving class was visited, so every row has mass
        inv = sparse.diags(1.0 / row_sums)
        stages[k].trans = (inv @ mat).tocsr()
    return stages


@dataclass
class QuantErrors:
    """Monte Carlo L^p quantization errors of one stage: the joint product
    metric plus the filter part (measure norm, summed absolute components)
    and the raw time part separately."""

    joint: float
    pi: float
    s: float


def quant_error(stage: QuantizedStage, model: PdmpModel, n_eval: int, rng,
                p: int = 2, noise_rng=None, theta=None) -> QuantErrors:
    """Errors between fresh samples of step k and their grid projections."""
    if theta is None:
        pis, ss = simulate_theta(model, n_eval, rng, noise_rng)
    else:
        pis, ss = theta
    k = stage.k
    samples = np.column_stack([pis[:, k, :], ss[:, k] / stage.s_scale])
    idx = nearest_indices(stage.scaled_points(), samples)
    proj = stage.points[idx]
    d_pi = np.abs(pis[:, k, :] - proj[:, :-1]).sum(axis=1)
    d_s = np.abs(ss[:, k] - proj[:, -1])
    d_joint = np.sqrt(((samples - stage.scaled_points()[idx]) ** 2).sum(axis=1))
    lp = lambda x: float(np.mean(x ** p) ** (1.0 / p))
    return QuantErrors(joint=lp(d_joint), pi=lp(d_pi), s=lp(d_s))


def quant_errors(stages: Sequence[QuantizedStage], model: PdmpModel, n_eval: int,
                 rng, p: int = 2, noise_rng=None) -> list[QuantErrors]:
    """quant_error for every stage, sharing one batch of fresh samples."""
    theta = simulate_theta(model, n_eval, rng, noise_rng)
    return [quant_error(st, model, n_eval, rng, p=p, theta=theta) for st in stages]


def stages_to_jsonable(stages: Sequence[QuantizedStage]) -> dict:
    out = []
    for st in stages:
        trans = None
        if st.trans is not None:
            trans = {"shape": list(st.trans.shape),
                     "indptr": st.trans.indptr.tolist(),
                     "indices": st.trans.indices.tolist(),
                     "data": st.trans.data.tolist()}
        out.append({"k": st.k, "points": st.points.tolist(),
                    "weights": st.weights.tolist(),
                    "pi_class_of_point": st.pi_class_of_point.tolist(),
                    "pi_classes": st.pi_classes.tolist(),
                    "class_weights": st.class_weights.tolist(),
                    "trans": trans, "s_scale": st.s_scale})
    return {"stages": out}


def stages_from_jsonable(payload: dict) -> list[QuantizedStage]:
    stages = []
    for rec in payload["stages"]:
        trans = None
        if rec["trans"] is not None:
            tr = rec["trans"]
            trans = sparse.csr_matrix((np.array(tr["data"]), np.array(tr["indices"]),
                                       np.array(tr["indptr"])), shape=tuple(tr["shape"]))
        stages.append(QuantizedStage(
            k=int(rec["k"]), points=np.array(rec["points"], dtype=float),
            weights=np.array(rec["weights"], dtype=float),
            pi_class_of_point=np.array(rec["pi_class_of_point"], dtype=np.int64),
            pi_classes=np.array(rec["pi_classes"], dtype=float),
            class_weights=np.array(rec["class_weights"], dtype=float),
            trans=trans, s_scale=float(rec["s_scale"])))
    return stages


def save_stages(stages: Sequence[QuantizedStage], path) -> None:
    with open(path, "w") as fh:
        json.dump(stages_to_jsonable(stages), fh)


def load_stages(path) -> list[QuantizedStage]:
    with open(path) as fh:
        return stages_from_jsonable(json.load(fh))
