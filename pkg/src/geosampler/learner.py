"""Prediction head and evaluation metrics.

The prediction head is a closed-form ridge regression with an unpenalized
intercept (features and labels are centered per training fold), tuned by
5-fold cross-validation over 10 log-spaced regularization strengths from
1e-5 to 1e5. Also provides k-means grouping and rank-correlation diagnostics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset, SampleState


class LearnerError(ValueError):
    pass


DEFAULT_ALPHAS = tuple(np.logspace(-5, 5, 10))


@dataclass(frozen=True)
class RidgeModel:
    weights: np.ndarray
    intercept: float
    alpha: float
    cv_table: tuple[tuple[float, float], ...]   # (alpha, mean validation MSE)

    def __post_init__(self):
        if not np.all(np.isfinite(self.weights)):
            raise LearnerError("ridge weights must be finite")


def ridge_solve(X: np.ndarray, y: np.ndarray, alpha: float) -> tuple[np.ndarray, float]:
    """Closed-form ridge with unpenalized intercept via centering.

    Returns (weights, intercept) solving the regularized normal equations on
    centered data: (Xc' Xc + alpha I) w = Xc' yc.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = X - x_mean
    yc = y - y_mean
    d = X.shape[1]
    w = np.linalg.solve(Xc.T @ Xc + alpha * np.eye(d), Xc.T @ yc)
    intercept = float(y_mean - x_mean @ w)
    return w, intercept


def ridge_fit_cv(
    X: np.ndarray,
    y: np.ndarray,
    folds: int = 5,
    alphas=None,
    seed: int = 0,
) -> RidgeModel:
    """Fit ridge regression, selecting alpha by k-fold cross-validation.

    Alpha minimizing the mean validation squared error wins; ties go to the
    smaller alpha. The final model is refit on all rows.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = X.shape[0]
    if n < folds:
        raise LearnerError(f"need at least {folds} rows for {folds}-fold CV, got {n}")
    if float(np.var(y)) == 0.0:
        raise LearnerError("labels have zero variance")
    grid = np.sort(np.asarray(alphas if alphas is not None else DEFAULT_ALPHAS, dtype=np.float64))

    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    fold_slices = np.array_split(perm, folds)

    mean_mse = np.zeros(len(grid))
    for fold_rows in fold_slices:
        val = np.zeros(n, dtype=bool)
        val[fold_rows] = True
        X_tr, y_tr = X[~val], y[~val]
        X_va, y_va = X[val], y[val]
        for a_i, alpha in enumerate(grid):
            w, b = ridge_solve(X_tr, y_tr, alpha)
            pred = X_va @ w + b
            mean_mse[a_i] += float(np.mean((pred - y_va) ** 2)) / folds

    best = int(np.argmin(mean_mse))   # grid ascending -> ties resolve to smaller alpha
    alpha = float(grid[best])
    w, b = ridge_solve(X, y, alpha)
    return RidgeModel(
        weights=w,
        intercept=b,
        alpha=alpha,
        cv_table=tuple((float(a), float(m)) for a, m in zip(grid, mean_mse)),
    )


def predict(model: RidgeModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != len(model.weights):
        raise LearnerError(
            f"feature dimension mismatch: model has {len(model.weights)}, "
            f"input has {X.shape[-1] if X.ndim == 2 else 'non-matrix'}"
        )
    return X @ model.weights + model.intercept


def r2_score(y: np.ndarray, y_pred: np.ndarray) -> float:
    """Coefficient of determination 1 - SS_res / SS_tot."""
    y = np.asarray(y, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y.shape != y_pred.shape or y.size < 2:
        raise LearnerError("r2_score needs two equal-length vectors of size >= 2")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise LearnerError("r2_score undefined for zero-variance targets")
    ss_res = float(np.sum((y - y_pred) ** 2))
    return 1.0 - ss_res / ss_tot


def average_ranks(a: np.ndarray) -> np.ndarray:
    """Ranks starting at 1, ties replaced by their average rank."""
    a = np.asarray(a, dtype=np.float64)
    order = np.argsort(a, kind="stable")
    ranks = np.empty(len(a), dtype=np.float64)
    ranks[order] = np.arange(1, len(a) + 1, dtype=np.float64)
    # average ranks within tied runs
    sorted_vals = a[order]
    i = 0
    while i < len(a):
        j = i
        while j + 1 < len(a) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        if j > i:
            ranks[order[i : j + 1]] = 0.5 * (i + 1 + j + 1)
        i = j + 1
    return ranks


def spearman_rho(a: np.ndarray, b: np.ndarray) -> float:
    """Spearman rank correlation: Pearson correlation of average-ranked values."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.size < 2:
        raise LearnerError("spearman_rho needs two equal-length vectors of size >= 2")
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise LearnerError("spearman_rho undefined for constant input")
    ra, rb = average_ranks(a), average_ranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    return float((ra @ rb) / np.sqrt((ra @ ra) * (rb @ rb)))


# -- k-means ---------------------------------------------------------------


@dataclass(frozen=True)
class KMeansResult:
    centroids: np.ndarray
    assignment: np.ndarray
    inertia: float
    inertia_trace: tuple[float, ...]   # per-iteration inertia of the winning restart


def _kmeanspp_init(X: np.ndarray, G: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centroids = np.empty((G, X.shape[1]))
    centroids[0] = X[rng.integers(n)]
    dist_sq = np.sum((X - centroids[0]) ** 2, axis=1)
    for j in range(1, G):
        total = dist_sq.sum()
        if total <= 0:
            centroids[j] = X[rng.integers(n)]
            continue
        probs = dist_sq / total
        centroids[j] = X[rng.choice(n, p=probs)]
        dist_sq = np.minimum(dist_sq, np.sum((X - centroids[j]) ** 2, axis=1))
    return centroids


def _lloyd(
    X: np.ndarray, centroids: np.ndarray, max_iters: int
) -> tuple[np.ndarray, np.ndarray, float, list[float]]:
    n, G = X.shape[0], centroids.shape[0]
    assignment = np.full(n, -1, dtype=np.int64)
    trace: list[float] = []
    for _ in range(max_iters):
        d2 = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assignment = np.argmin(d2, axis=1)
        trace.append(float(d2[np.arange(n), new_assignment].sum()))
        if np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
        for j in range(G):
            mask = assignment == j
            if mask.any():
                centroids[j] = X[mask].mean(axis=0)
            else:
                # empty cluster: take over the point farthest from its centroid
                per_point = d2[np.arange(n), assignment]
                far = int(np.argmax(per_point))
                centroids[j] = X[far]
                assignment[far] = j
    # final assignment pass so every point sits with its nearest centroid
    d2 = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    assignment = np.argmin(d2, axis=1)
    inertia = float(d2[np.arange(n), assignment].sum())
    return centroids, assignment, inertia, trace


def kmeans_groups(
    features: np.ndarray,
    G: int,
    seed: int = 0,
    restarts: int = 10,
    max_iters: int = 100,
) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding, best inertia over restarts."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise LearnerError("features must be a 2-d matrix")
    if G < 1 or G > X.shape[0]:
        raise LearnerError(f"need 1 <= G <= {X.shape[0]}, got {G}")
    rng = np.random.default_rng(seed)
    best: tuple[np.ndarray, np.ndarray, float, list[float]] | None = None
    for _ in range(restarts):
        init = _kmeanspp_init(X, G, rng)
        cand = _lloyd(X, init.copy(), max_iters)
        if best is None or cand[2] < best[2]:
            best = cand
    centroids, assignment, inertia, trace = best
    return KMeansResult(
        centroids=centroids,
        assignment=assignment,
        inertia=inertia,
        inertia_trace=tuple(trace),
    )


# -- the evaluation harness --------------------------------------------------


def fit_on_sample(ds: Dataset, state: SampleState, seed: int = 0) -> tuple[RidgeModel, float]:
    """Train the ridge head on the sample's labeled points; returns the model
    and its R^2 on the held-out test split."""
    labeled = sorted(state.labeled_point_ids())
    if not labeled:
        raise LearnerError("cannot evaluate an empty sample")
    rows = np.array([ds.point_index[pid] for pid in labeled], dtype=np.int64)
    if np.any(np.isnan(ds.labels[rows])):
        bad = labeled[int(np.flatnonzero(np.isnan(ds.labels[rows]))[0])]
        raise LearnerError(f"sample contains point {bad!r} with unknown label")
    model = ridge_fit_cv(ds.features[rows], ds.labels[rows], seed=seed)
    test_rows = np.flatnonzero(ds.test_mask)
    y_true = ds.labels[test_rows]
    y_pred = predict(model, ds.features[test_rows])
    return model, r2_score(y_true, y_pred)


def evaluate_sample(ds: Dataset, state: SampleState, seed: int = 0) -> float:
    """R^2 of the ridge head trained on the sample, scored on the test split."""
    _, r2 = fit_on_sample(ds, state, seed=seed)
    return r2


def save_model(model: RidgeModel, path: str | Path) -> None:
    doc = {
        "alpha": model.alpha,
        "intercept": model.intercept,
        "weights": [float(w) for w in model.weights],
        "cv_table": [[a, m] for a, m in model.cv_table],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> RidgeModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return RidgeModel(
        weights=np.array(doc["weights"], dtype=np.float64),
        intercept=float(doc["intercept"]),
        alpha=float(doc["alpha"]),
        cv_table=tuple((float(a), float(m)) for a, m in doc["cv_table"]),
    )
