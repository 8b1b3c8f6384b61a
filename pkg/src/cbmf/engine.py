"""Cluster-based matrix factorization: per-user, per-cluster local biases on top of biased MF."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .clustering import ClusterMap, cluster_items
from .data import RatingStore, index_by_cluster
from .mf import BiasTable, FactorModel, Hyperparams, _State, init_factors, run_sgd

log = logging.getLogger(__name__)


@dataclass
class CbmfModel:
    factors: FactorModel
    biases: BiasTable
    clusters: ClusterMap
    delta: np.ndarray   # n_users x N_c weighted local-minus-global bias
    counts: np.ndarray  # n_users x N_c ratings per cluster
    kind: str = "cbmf"

    @property
    def n_u(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def n_users(self) -> int:
        return self.factors.n_users

    @property
    def n_items(self) -> int:
        return self.factors.n_items

    def state(self) -> _State:
        """Kernel view sharing this model's arrays (mutations write through).

        Basic and biased models carry zero biases/deltas, so the full CBMF
        prediction is exact for every kind.
        """
        return _State(self.factors.P, self.factors.Q, self.clusters.mu_c, self.biases.bu,
                      self.biases.bi, self.delta, self.clusters.assignment, True, True)

    def predict(self, us, its) -> np.ndarray:
        return self.state().predict(us, its)

    def copy(self) -> "CbmfModel":
        return CbmfModel(self.factors.copy(), self.biases.copy(), self.clusters.copy(),
                         self.delta.copy(), self.counts.copy(), self.kind)

    @classmethod
    def from_basic(cls, model: FactorModel) -> "CbmfModel":
        """Basic MF as the degenerate case: no offset, no biases, one cluster."""
        clusters = ClusterMap(np.zeros(model.n_items, dtype=np.int64), np.zeros(1), 1)
        return cls(model, BiasTable.zeros(model.n_users, model.n_items), clusters,
                   np.zeros((model.n_users, 1)), np.zeros((model.n_users, 1), dtype=np.int64),
                   "basic")

    @classmethod
    def from_biased(cls, model: FactorModel, biases: BiasTable) -> "CbmfModel":
        clusters = ClusterMap(np.zeros(model.n_items, dtype=np.int64), np.array([model.mu]), 1)
        return cls(model, biases, clusters, np.zeros((model.n_users, 1)),
                   np.zeros((model.n_users, 1), dtype=np.int64), "biased")


def init_cbmf_biases(store: RatingStore, clusters: ClusterMap) -> tuple[BiasTable, np.ndarray, np.ndarray]:
    """Data-driven starting biases, local-bias deltas and per-cluster counts."""
    users, items, values, _ = store.arrays()
    n_u, n_i, n_c = store.n_users, store.n_items, clusters.n_clusters
    mu = store.mean()
    dev = values - mu

    cnt_u = np.bincount(users, minlength=n_u)
    cnt_i = np.bincount(items, minlength=n_i)
    bu = np.bincount(users, weights=dev, minlength=n_u) / np.maximum(cnt_u, 1)
    bi = np.bincount(items, weights=dev, minlength=n_i) / np.maximum(cnt_i, 1)

    c = clusters.assignment[items]
    flat = users * n_c + c
    counts = np.bincount(flat, minlength=n_u * n_c).reshape(n_u, n_c)
    local_dev = values - clusters.mu_c[c]
    # average over the user's rated items in C, not over all of C
    b_uc = np.bincount(flat, weights=local_dev, minlength=n_u * n_c).reshape(n_u, n_c)
    b_uc = b_uc / np.maximum(counts, 1)
    weight = counts / np.maximum(cnt_u, 1)[:, None]
    delta = np.where(counts > 0, weight * (b_uc - bu[:, None]), 0.0)
    return BiasTable(bu, bi), delta, counts.astype(np.int64)


def predict_cbmf(model: CbmfModel, u: int, i: int) -> float:
    if not (0 <= u < model.n_users and 0 <= i < model.n_items):
        raise IndexError(f"(u={u}, i={i}) outside a {model.n_users} x {model.n_items} model")
    c = int(model.clusters.assignment[i])
    dot = float(model.factors.P[u] @ model.factors.Q[:, i])
    return dot + model.clusters.mu_c[c] + model.delta[u, c] + model.biases.bu[u] + model.biases.bi[i]


def cbmf_objective(model: CbmfModel, store: RatingStore, hp: Hyperparams) -> float:
    return float(model.state().objective(store, hp))


def train_cbmf(store: RatingStore, hp: Hyperparams, clusters: ClusterMap,
               trace: list | None = None) -> CbmfModel:
    """Warm-started SGD over factors, global biases and local-bias deltas."""
    if store.n_ratings == 0:
        raise ValueError("cannot train on an empty store")
    if store.clusters is not clusters:
        index_by_cluster(store, clusters)
    biases, delta, counts = init_cbmf_biases(store, clusters)
    factors = init_factors(store.n_users, store.n_items, hp)
    factors.mu = store.mean()
    model = CbmfModel(factors, biases, clusters, delta, counts)
    epochs = run_sgd(model.state(), store, hp, trace=trace)
    log.info("cbmf trained: %d epochs, %d clusters", epochs, clusters.n_clusters)
    return model


def fit_cbmf(store: RatingStore, hp: Hyperparams, n_clusters: int = 3,
             n_boot_iters: int = 10) -> CbmfModel:
    """Full pipeline: bootstrap factors, k-means, cluster means, then CBMF training."""
    clusters = cluster_items(store, hp, n_clusters, n_boot_iters)
    return train_cbmf(store, hp, clusters)
