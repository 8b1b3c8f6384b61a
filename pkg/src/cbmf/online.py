"""Folding new ratings into a trained model without refactorizing."""
from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import _kernels
from .data import DuplicateRatingError, Rating, RatingStore, index_by_cluster
from .engine import CbmfModel, fit_cbmf
from .mf import Hyperparams

log = logging.getLogger(__name__)


class IntegrationMode(enum.Enum):
    LOCAL_BIAS = "local-bias-only"
    USER_FACTORS = "user-factors-only"
    BOTH = "both"

    @classmethod
    def parse(cls, text: str) -> "IntegrationMode":
        aliases = {"bias": cls.LOCAL_BIAS, "factors": cls.USER_FACTORS, "both": cls.BOTH}
        if text in aliases:
            return aliases[text]
        return cls(text)


class RejectedRating(ValueError):
    pass


@dataclass
class IntegrationStats:
    ratings_integrated: int = 0
    rejected: int = 0
    passes: int = 0
    residual_evals: int = 0
    total_time: float = 0.0
    per_mode: dict = field(default_factory=dict)

    @property
    def mean_update_time(self) -> float:
        return self.total_time / self.ratings_integrated if self.ratings_integrated else 0.0

    def record(self, mode: IntegrationMode, seconds: float, passes: int, evals: int) -> None:
        self.ratings_integrated += 1
        self.passes += passes
        self.residual_evals += evals
        self.total_time += seconds
        n, t = self.per_mode.get(mode.value, (0, 0.0))
        self.per_mode[mode.value] = (n + 1, t + seconds)

    def csv_rows(self) -> list[str]:
        """``n_integrated,mode,mean_update_us`` rows, one per mode used."""
        rows = ["n_integrated,mode,mean_update_us"]
        for mode, (n, t) in sorted(self.per_mode.items()):
            rows.append(f"{n},{mode},{1e6 * t / n:.3f}")
        return rows


def integrate_rating(model: CbmfModel, store: RatingStore, r: Rating,
                     mode: IntegrationMode = IntegrationMode.LOCAL_BIAS,
                     hp: Hyperparams = Hyperparams(), max_iters: int = 20,
                     stats: IntegrationStats | None = None) -> tuple[int, int]:
    """Add one rating and refit the user's state on V(u, c(i)).

    Only the user's local-bias delta for the item's cluster, the user's factor
    vector (depending on `mode`) and the user's counts change. Returns
    (passes, residual evaluations).
    """
    if not store.knows(r.user, r.item):
        raise RejectedRating(f"unknown user or item in rating ({r.user}, {r.item})")
    u, i = store.user(r.user), store.item(r.item)
    if u >= model.n_users or i >= model.n_items:
        raise RejectedRating(f"rating ({r.user}, {r.item}) outside the model")
    if store.contains(r.user, r.item):
        raise RejectedRating(str(DuplicateRatingError(r.user, r.item)))
    if store.clusters is not model.clusters:
        index_by_cluster(store, model.clusters)

    store.add(r)
    c = int(model.clusters.assignment[i])
    model.counts[u, c] += 1
    s = model.state()
    upd_delta = mode is not IntegrationMode.USER_FACTORS
    upd_factors = mode is not IntegrationMode.LOCAL_BIAS
    if not _kernels.integrate_user_cluster.signatures:
        # zero passes: loads or compiles the kernel outside the timed region
        _kernels.integrate_user_cluster(
            u, c, np.zeros(0, np.int64), np.zeros(0), s.cl, s.P, s.Q, s.offset, s.bu, s.bi,
            s.delta, hp.lam, hp.beta, hp.gamma, upd_delta, upd_factors, 0, hp.min_rel_improve)
    # timed: gathering V(u, c(i)) and the descent loop, not the store append
    start = time.perf_counter()
    positions = store.cluster_positions(u, c)
    _, items, values, _ = store.arrays()
    v_items = items[positions]
    v_values = values[positions]
    passes, evals = _kernels.integrate_user_cluster(
        u, c, v_items, v_values, s.cl, s.P, s.Q, s.offset, s.bu, s.bi, s.delta,
        hp.lam, hp.beta, hp.gamma, upd_delta, upd_factors, max_iters, hp.min_rel_improve)
    elapsed = time.perf_counter() - start
    if stats is not None:
        stats.record(mode, elapsed, passes, evals)
    return passes, evals


def integrate_stream(model: CbmfModel, store: RatingStore, ratings: Iterable[Rating],
                     mode: IntegrationMode = IntegrationMode.LOCAL_BIAS,
                     hp: Hyperparams = Hyperparams(), evaluate_before_integrate: bool = True,
                     max_iters: int = 20) -> tuple[list, IntegrationStats]:
    """Prequential replay: predict each rating, then integrate it.

    Rejected ratings are logged and skipped; they get no prediction.
    """
    from .evaluation import PredictionPair

    stats = IntegrationStats()
    preds: list[PredictionPair] = []
    for r in ratings:
        if not store.knows(r.user, r.item) or store.contains(r.user, r.item):
            log.warning("rejected rating (%s, %s)", r.user, r.item)
            stats.rejected += 1
            continue
        if evaluate_before_integrate:
            u, i = store.user(r.user), store.item(r.item)
            preds.append(PredictionPair(_predict(model, u, i), r.value))
        try:
            integrate_rating(model, store, r, mode, hp, max_iters, stats)
        except RejectedRating as exc:
            log.warning("rejected rating: %s", exc)
            stats.rejected += 1
            if evaluate_before_integrate:
                preds.pop()
    return preds, stats


def _predict(model: CbmfModel, u: int, i: int) -> float:
    s = model.state()
    return _kernels.predict_one(u, i, s.cl[i], s.P, s.Q, s.offset, s.bu, s.bi, s.delta,
                                s.use_bias, s.use_delta)


def refactorize(store: RatingStore, hp: Hyperparams, n_clusters: int = 3, seed: int | None = None,
                n_boot_iters: int = 10) -> CbmfModel:
    """Retrain from scratch on a snapshot of everything in `store`.

    The caller's store and current model are left untouched; reindex the store
    with ``index_by_cluster(store, new.clusters)`` when swapping models in
    (`integrate_rating` does this on demand).
    """
    if seed is not None:
        hp = hp.replace(seed=seed)
    return fit_cbmf(store.copy(), hp, n_clusters, n_boot_iters)
