"""Planted-model rating generator.

Ratings are drawn as

    r_ui = mu_c(i) + b_u + b_i + d_u[c(i)] + p_u . q_i + noise

clipped to the rating scale. Users join at staggered times and rate uniformly
from their arrival to the end of the timeline, so late joiners are thinly
represented in any chronological training prefix. Preferences never drift.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Rating


@dataclass
class PlantedData:
    ratings: list[Rating]
    item_cluster: np.ndarray  # indexed by raw item id
    local_bias: np.ndarray    # n_users x n_clusters
    rating_scale: tuple[float, float]


def make_planted(n_users: int = 5000, n_items: int = 500, n_ratings: int = 100_000,
                 n_clusters: int = 3, rank: int = 3, cluster_spread: float = 0.6,
                 user_bias_sd: float = 0.15, item_bias_sd: float = 0.2,
                 local_bias_sd: float = 0.6, factor_sd: float = 0.3, noise: float = 0.3,
                 activity_sd: float = 0.3, arrival_span: float = 1.0, rating_scale=(1.0, 5.0),
                 seed: int = 0) -> PlantedData:
    rng = np.random.default_rng(seed)
    lo, hi = rating_scale
    centre = (lo + hi) / 2 + 0.3
    cluster_mu = centre + cluster_spread * (np.arange(n_clusters) - (n_clusters - 1) / 2)
    item_cluster = rng.permutation(np.arange(n_items) % n_clusters)
    b_u = rng.normal(0, user_bias_sd, n_users)
    b_i = rng.normal(0, item_bias_sd, n_items)
    d_u = rng.normal(0, local_bias_sd, (n_users, n_clusters))
    d_u -= d_u.mean(axis=1, keepdims=True)
    P = rng.normal(0, np.sqrt(factor_sd / rank), (n_users, rank))
    Q = rng.normal(0, np.sqrt(factor_sd / rank), (rank, n_items))

    # log-normal activity, at least two ratings per user
    activity = rng.lognormal(0.0, activity_sd, n_users)
    extra = n_ratings - 2 * n_users
    per_user = 2 + rng.multinomial(extra, activity / activity.sum())
    per_user = np.minimum(per_user, n_items)
    popularity = 1.0 / np.arange(1, n_items + 1) ** 0.6
    popularity = rng.permutation(popularity / popularity.sum())

    t0, span = 946_684_800, 3 * 365 * 86_400
    arrival = rng.uniform(0.0, arrival_span, n_users)
    ratings: list[Rating] = []
    for u in range(n_users):
        items = rng.choice(n_items, size=per_user[u], replace=False, p=popularity)
        times = arrival[u] + (1.0 - arrival[u]) * rng.random(per_user[u])
        c = item_cluster[items]
        r = (cluster_mu[c] + b_u[u] + b_i[items] + d_u[u, c] + P[u] @ Q[:, items]
             + rng.normal(0, noise, per_user[u]))
        r = np.clip(r, lo, hi)
        for i, v, t in zip(items.tolist(), r.tolist(), times.tolist()):
            ratings.append(Rating(u + 1, i + 1, round(v, 3), t0 + int(t * span)))
    ratings.sort(key=lambda x: x.timestamp)
    cl = np.zeros(n_items + 1, dtype=np.int64)
    cl[1:] = item_cluster
    return PlantedData(ratings, cl, d_u, (float(lo), float(hi)))
