"""Accuracy metrics and top-k utilities."""
from __future__ import annotations

import math
import warnings
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .clustering import ClusterMap


class PredictionPair(NamedTuple):
    predicted: float
    actual: float


class TopKTruncated(UserWarning):
    pass


def _errors(pairs, clamp: bool, scale) -> np.ndarray:
    arr = np.asarray(pairs, dtype=np.float64).reshape(-1, 2)
    pred = arr[:, 0]
    if clamp:
        if scale is None:
            raise ValueError("clamping needs a rating scale")
        pred = np.clip(pred, scale[0], scale[1])
    return arr[:, 1] - pred


def rmse(pairs: Sequence[PredictionPair], clamp: bool = False, scale=None) -> float:
    if len(pairs) == 0:
        raise ValueError("rmse of an empty prediction list")
    e = _errors(pairs, clamp, scale)
    return math.sqrt(float(np.mean(e * e)))


def sliding_rmse(pairs: Sequence[PredictionPair], window: int, stride: int | None = None,
                 clamp: bool = False, scale=None) -> list[tuple[int, float]]:
    """RMSE over each full window, reported at the window's end position."""
    n = len(pairs)
    if window < 1 or window > n:
        raise ValueError(f"window {window} does not fit {n} predictions")
    stride = stride or max(window // 2, 1)
    sq = _errors(pairs, clamp, scale) ** 2
    csum = np.concatenate([[0.0], np.cumsum(sq)])
    out = []
    for end in range(window, n + 1, stride):
        out.append((end, math.sqrt((csum[end] - csum[end - window]) / window)))
    return out


def topk(model, u: int, k: int, candidates: Iterable[int]) -> list[int]:
    """Highest-scoring candidate items for dense user `u`; ties go to the lower item index."""
    cand = np.array(sorted(set(int(i) for i in candidates)), dtype=np.int64)
    if k > len(cand):
        warnings.warn(f"asked for top-{k} from {len(cand)} candidates", TopKTruncated, stacklevel=2)
        k = len(cand)
    if k == 0:
        return []
    scores = model.predict(np.full(len(cand), u, dtype=np.int64), cand)
    order = np.lexsort((cand, -scores))
    return cand[order[:k]].tolist()


def cluster_coverage(topk_lists: Iterable[Sequence[int]], clusters: ClusterMap) -> float:
    """Fraction of lists spanning at least two clusters."""
    lists = list(topk_lists)
    if not lists:
        return 0.0
    hits = sum(len({int(clusters.assignment[i]) for i in items}) >= 2 for items in lists)
    return hits / len(lists)
