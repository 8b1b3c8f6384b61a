"""Item clustering from bootstrap factors, plus the per-user variance vs. dissimilarity check."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import RatingStore
from .mf import Hyperparams, train_basic

log = logging.getLogger(__name__)


@dataclass
class ClusterMap:
    assignment: np.ndarray  # dense item index -> cluster id
    mu_c: np.ndarray
    n_clusters: int

    def copy(self) -> "ClusterMap":
        return ClusterMap(self.assignment.copy(), self.mu_c.copy(), self.n_clusters)


@dataclass(frozen=True)
class DissimilarityReport:
    total_dissim: float
    total_var: float
    bound_holds: bool


def bootstrap_item_factors(store: RatingStore, hp: Hyperparams, n_boot_iters: int = 10) -> np.ndarray:
    """Item factor vectors (n_items x K) after exactly `n_boot_iters` basic-MF epochs."""
    model = train_basic(store, hp, epochs=n_boot_iters)
    return model.Q.T.copy()


def _inertia(points, centroids, labels) -> float:
    return float(((points - centroids[labels]) ** 2).sum())


def kmeans(points, k: int, seed: int = 0, max_rounds: int = 100, n_init: int = 1,
           trace: list | None = None) -> np.ndarray:
    """Lloyd's algorithm from `k` distinct, seeded starting points.

    An empty cluster takes over the point lying farthest from its own
    centroid. With ``n_init > 1`` the run with the lowest inertia wins (the
    first one on ties); `trace` records the per-round inertia of that run.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = len(X)
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must lie in [1, {n}]")
    rng = np.random.default_rng(seed)
    best, best_inertia, best_trace = None, np.inf, []
    for _ in range(max(n_init, 1)):
        run_trace: list = []
        start = np.sort(rng.choice(n, size=k, replace=False))
        labels = _lloyd(X, X[start].copy(), max_rounds, run_trace)
        inertia = run_trace[-1]
        if inertia < best_inertia:
            best, best_inertia, best_trace = labels, inertia, run_trace
    if trace is not None:
        trace.extend(best_trace)
    return best


def _lloyd(X, centroids, max_rounds, trace) -> np.ndarray:
    n, k = len(X), len(centroids)
    labels = None
    for _ in range(max_rounds):
        d2 = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new = d2.argmin(axis=1)
        for c in np.flatnonzero(np.bincount(new, minlength=k) == 0):
            own = d2[np.arange(n), new]
            # only steal from clusters that keep at least one point
            own = np.where(np.bincount(new, minlength=k)[new] > 1, own, -1.0)
            new[int(np.argmax(own))] = c
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for c in range(k):
            centroids[c] = X[labels == c].mean(axis=0)
        trace.append(_inertia(X, centroids, labels))
    return labels


def build_cluster_map(store: RatingStore, assignment, n_clusters: int | None = None) -> ClusterMap:
    assignment = np.asarray(assignment, dtype=np.int64)
    if len(assignment) != store.n_items:
        raise ValueError(f"assignment covers {len(assignment)} items, store has {store.n_items}")
    if n_clusters is None:
        n_clusters = int(assignment.max()) + 1 if len(assignment) else 1
    sizes = np.bincount(assignment, minlength=n_clusters)
    if np.any(sizes == 0):
        raise ValueError(f"empty clusters: {np.flatnonzero(sizes == 0).tolist()}")
    _, items, values, _ = store.arrays()
    mu = store.mean()
    c = assignment[items]
    # np.mean per cluster so that a single cluster reproduces store.mean() bit for bit
    mu_c = np.array([float(np.mean(values[c == k])) if np.any(c == k) else mu
                     for k in range(n_clusters)])
    return ClusterMap(assignment, mu_c, n_clusters)


def cluster_items(store: RatingStore, hp: Hyperparams, n_clusters: int = 3,
                  n_boot_iters: int = 10, max_rounds: int = 100, n_init: int = 10) -> ClusterMap:
    """Bootstrap factorization, k-means on the item vectors, then per-cluster means.

    Stores with fewer items than `n_clusters` get one cluster per item.
    """
    if n_clusters < 1:
        raise ValueError("n_clusters must be >= 1")
    k = min(n_clusters, store.n_items)
    if k < n_clusters:
        log.warning("only %d items; using %d clusters instead of %d", store.n_items, k, n_clusters)
    points = bootstrap_item_factors(store, hp, n_boot_iters)
    labels = kmeans(points, k, seed=hp.seed, max_rounds=max_rounds, n_init=n_init)
    return build_cluster_map(store, labels, k)


def dissimilarity(store: RatingStore, i: int, j: int) -> float:
    """Sum of |r_ui - r_uj| over users who rated both dense items i and j."""
    users, items, values, _ = store.arrays()
    a = {int(u): float(v) for u, v in zip(users[items == i], values[items == i])}
    b = {int(u): float(v) for u, v in zip(users[items == j], values[items == j])}
    return float(sum(abs(a[u] - b[u]) for u in a.keys() & b.keys()))


def variance_bound_report(store: RatingStore) -> DissimilarityReport:
    """Check 0 <= sum_u Var_u <= (sum over item pairs of dissim)^2."""
    _, _, values, _ = store.arrays()
    mu = store.mean()
    total_var = 0.0
    total_abs = 0.0
    for positions in store.user_index:
        if len(positions) < 2:
            continue
        r = values[positions]
        dev = r - mu
        total_var += float(((dev - dev.mean()) ** 2).mean())
        # ordered pairs; the pairwise total is half of this sum
        total_abs += float(np.abs(r[:, None] - r[None, :]).sum())
    total_dissim = total_abs / 2.0
    return DissimilarityReport(total_dissim, total_var, 0.0 <= total_var <= total_dissim ** 2)
