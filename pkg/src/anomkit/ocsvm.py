"""Linear one-class SVM (nu formulation) for healthy-distribution boundaries.

The dual

    minimize    1/2 * sum_ij alpha_i alpha_j <x_i, x_j>
    subject to  0 <= alpha_i <= 1/(nu*n),  sum_i alpha_i = 1

is solved by coordinate-pair descent on the maximal violating pair, keeping
the equality constraint satisfied at every step. The linear kernel lets us
carry the weight vector w = sum_i alpha_i x_i explicitly, so one iteration
costs O(n*d).

Features are standardized by per-dimension scale (1/std) before fitting.
The scale-only choice is deliberate: dividing by the spread removes kernel
scale sensitivity, while subtracting the mean would centre the training
cloud on the origin and collapse the origin-separating boundary to w = 0.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DimensionError, InputError, UsageError

NORMAL = "normal"
ANOMALY = "anomaly"


@dataclass
class DualSolution:
    alpha: np.ndarray  # [n]
    w: np.ndarray  # [d] = X^T alpha
    objective: float  # 1/2 ||w||^2
    kkt_violation: float
    n_iter: int


def solve_nu_dual(X, nu, tol=1e-8, max_iter=200_000) -> DualSolution:
    """Solve the nu one-class dual on raw row vectors X [n, d]."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError(f"X must be [n, d], got shape {X.shape}")
    n = X.shape[0]
    if n < 2:
        raise InputError(f"need at least 2 training vectors, got {n}")
    if not 0.0 < nu <= 1.0:
        raise InputError(f"nu must be in (0, 1], got {nu}")

    cap = 1.0 / (nu * n)
    alpha = np.full(n, 1.0 / n)
    w = X.T @ alpha
    sq = np.einsum("ij,ij->i", X, X)  # diagonal of the kernel matrix

    violation = 0.0
    it = 0
    for it in range(1, max_iter + 1):
        g = X @ w
        up = alpha < cap * (1.0 - 1e-12)  # room to grow
        down = alpha > cap * 1e-12  # room to shrink
        if not up.any() or not down.any():
            violation = 0.0
            break
        gi = np.where(up, g, np.inf)
        gj = np.where(down, g, -np.inf)
        i = int(np.argmin(gi))
        j = int(np.argmax(gj))
        violation = float(g[j] - g[i])
        if violation <= tol:
            break
        denom = sq[i] + sq[j] - 2.0 * float(X[i] @ X[j])
        if denom > 1e-300:
            step = violation / denom
        else:
            step = np.inf  # duplicate points: slide to a bound
        step = min(step, cap - alpha[i], alpha[j])
        alpha[i] += step
        alpha[j] -= step
        w += step * (X[i] - X[j])
        if it % 512 == 0:
            w = X.T @ alpha  # shed incremental drift
    else:
        raise ConvergenceError(
            f"nu-dual did not reach tol={tol} in {max_iter} iterations "
            f"(final KKT violation {violation:.3e})"
        )

    w = X.T @ alpha
    objective = 0.5 * float(w @ w)
    return DualSolution(alpha=alpha, w=w, objective=objective, kkt_violation=violation, n_iter=it)


def _rho_from_solution(X, sol: DualSolution, nu):
    """Offset rho: median decision value over free support vectors."""
    n = X.shape[0]
    cap = 1.0 / (nu * n)
    g = X @ sol.w
    margin = cap * 1e-8
    free = (sol.alpha > margin) & (sol.alpha < cap - margin)
    if free.any():
        return float(np.median(g[free]))
    at_cap = sol.alpha >= cap - margin
    at_zero = sol.alpha <= margin
    candidates = []
    if at_cap.any():
        candidates.append(float(g[at_cap].max()))
    if at_zero.any():
        candidates.append(float(g[at_zero].min()))
    warnings.warn("no free support vectors; rho taken from bound candidates", stacklevel=2)
    return float(np.mean(candidates))


@dataclass
class OcSvmModel:
    """Linear boundary w.x' - rho on standardized features x' = (x - offset)/scale.

    offset is zero except on zero-variance dimensions, which are shifted to
    exactly 0 (and get scale 1) so constant feature dims contribute nothing.
    """

    w: np.ndarray  # [d]
    rho: float
    nu: float
    offset: np.ndarray  # [d]
    scale: np.ndarray  # [d] per-dimension divisor
    kkt_violation: float = 0.0
    n_iter: int = 0
    support_fraction: float = 0.0

    @property
    def dim(self) -> int:
        return int(self.w.shape[0])

    def standardize(self, x):
        return (np.asarray(x, dtype=np.float64) - self.offset) / self.scale


def as_feature_matrix(features):
    """Accept an [n,d] array or a list of objects with a `.values` vector."""
    if hasattr(features, "ndim"):
        mat = np.asarray(features, dtype=np.float64)
    else:
        rows = [np.asarray(getattr(f, "values", f), dtype=np.float64) for f in features]
        mat = np.stack(rows) if rows else np.zeros((0, 0))
    if mat.ndim != 2:
        raise DimensionError(f"features must form an [n, d] matrix, got {mat.shape}")
    return mat


def fit_ocsvm(features, nu=0.1, tol=1e-8, max_iter=200_000) -> OcSvmModel:
    """Fit the boundary on healthy-training features."""
    X = as_feature_matrix(features)
    n, d = X.shape
    if n < 2:
        raise InputError(f"need at least 2 training features, got {n}")
    if not np.all(np.isfinite(X)):
        raise InputError("training features contain non-finite values")

    scale = X.std(axis=0)
    mean = X.mean(axis=0)
    constant = scale <= 1e-12 * np.maximum(1.0, np.abs(mean))
    scale[constant] = 1.0
    offset = np.where(constant, mean, 0.0)
    Xs = (X - offset) / scale

    sol = solve_nu_dual(Xs, nu, tol=tol, max_iter=max_iter)
    rho = _rho_from_solution(Xs, sol, nu)
    support = float(np.mean(sol.alpha > (1.0 / (nu * n)) * 1e-8))
    return OcSvmModel(
        w=sol.w,
        rho=rho,
        nu=float(nu),
        offset=offset,
        scale=scale,
        kkt_violation=sol.kkt_violation,
        n_iter=sol.n_iter,
        support_fraction=support,
    )


def decision_values(model: OcSvmModel, features):
    """Raw scores w.x' - rho for one or many feature vectors."""
    X = np.asarray(features, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None]
    if X.shape[1] != model.dim:
        raise UsageError(f"feature dim {X.shape[1]} != model dim {model.dim}")
    scores = model.standardize(X) @ model.w - model.rho
    return scores[0] if single else scores


def score(model: OcSvmModel, z):
    """Classify one feature vector; the boundary itself counts as normal."""
    z = np.asarray(getattr(z, "values", z), dtype=np.float64)
    if z.ndim != 1:
        raise UsageError(f"score expects a single vector, got shape {z.shape}")
    val = float(decision_values(model, z))
    return (ANOMALY if val < 0.0 else NORMAL), val


@dataclass
class AnomalyMap:
    """Per-superpixel labels plus the expanded per-pixel mask of one volume."""

    superpixel_ids: list  # (slice index, superpixel id) per entry
    scores: np.ndarray  # [n]
    labels: np.ndarray  # [n] bool, True = anomaly
    pixel_mask: np.ndarray  # [slices, H, W] bool, True = anomaly
    cluster_ids: np.ndarray | None = None  # filled by the clustering stage


def segment_volume(model: OcSvmModel, features, superpixels, volume_shape) -> AnomalyMap:
    """Label in-retina superpixels and expand labels to a voxel mask.

    `superpixels` lists the in-retina superpixels of one volume, aligned
    row-for-row with `features`. Pixels outside those superpixels stay False.
    """
    X = as_feature_matrix(features)
    if X.shape[0] != len(superpixels):
        raise UsageError(f"{X.shape[0]} feature rows for {len(superpixels)} superpixels")
    scores = decision_values(model, X) if X.shape[0] else np.zeros(0)
    labels = scores < 0.0
    mask = np.zeros(volume_shape, dtype=bool)
    ids = []
    for sp, anomalous in zip(superpixels, labels):
        ids.append((sp.slice_index, sp.id))
        if anomalous:
            mask[sp.slice_index][sp.rows, sp.cols] = True
    return AnomalyMap(
        superpixel_ids=ids,
        scores=np.asarray(scores, dtype=np.float64),
        labels=np.asarray(labels, dtype=bool),
        pixel_mask=mask,
    )
