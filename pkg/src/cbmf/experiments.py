"""Scripted evaluation protocols: initial quality, training-set size, decay, online integration."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import (Rating, RatingStore, SplitSpec, build_chunk_ladder, chronological_split,
                   interleave_by_arrival)
from .engine import CbmfModel, fit_cbmf
from .evaluation import PredictionPair, rmse, sliding_rmse
from .mf import Hyperparams, train_basic, train_biased
from .online import IntegrationMode, integrate_stream, refactorize
from .synthetic import make_planted

log = logging.getLogger(__name__)

EXPERIMENTS = ("initial-quality", "size-impact", "offline-decay", "online-robustness",
               "tradeoff", "refactorization")
MODEL_KINDS = ("basic", "biased", "cbmf")

# held-out share when the config leaves it open
_DEFAULT_FRACTION = {"initial-quality": 0.02, "size-impact": 0.02}


@dataclass
class ExperimentConfig:
    dataset: str = "synthetic"
    ratings: list | None = field(default=None, repr=False)
    synthetic: dict = field(default_factory=dict)
    rating_scale: tuple = (1.0, 5.0)
    hp: Hyperparams = field(default_factory=Hyperparams)
    n_clusters: int = 3
    n_boot_iters: int = 10
    test_fraction: float | None = None
    n_chunks: int = 10
    window: int | None = None
    stride: int | None = None
    models: tuple = MODEL_KINDS
    mode: str = "local-bias-only"
    modes: tuple = ("user-factors-only", "local-bias-only", "both")
    integration_max_iters: int = 20
    refactor_points: tuple = (0.2, 0.4, 0.6, 0.8)
    clamp: bool = True
    seed: int = 0
    # optional memo of trained models shared between runs; never echoed
    cache: dict | None = field(default=None, repr=False, compare=False)

    def validate(self) -> None:
        if self.test_fraction is not None:
            SplitSpec(self.test_fraction)
        for kind in self.models:
            if kind not in MODEL_KINDS:
                raise ValueError(f"unknown model kind {kind!r}")
        for m in (self.mode, *self.modes):
            IntegrationMode.parse(m)
        if self.n_clusters < 1 or self.n_chunks < 1 or self.n_boot_iters < 0:
            raise ValueError("n_clusters and n_chunks must be >= 1, n_boot_iters >= 0")
        pts = list(self.refactor_points)
        if any(not 0 < p < 1 for p in pts) or pts != sorted(set(pts)):
            raise ValueError("refactor_points must be increasing fractions in (0, 1)")
        if self.window is not None and self.window < 1:
            raise ValueError("window must be positive")

    def echo(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)
             if f.name not in ("ratings", "cache")}
        d["hp"] = dataclasses.asdict(self.hp)
        d["rating_scale"] = list(self.rating_scale)
        for k in ("models", "modes", "refactor_points"):
            d[k] = list(d[k])
        return d


@dataclass
class ExperimentReport:
    experiment: str
    columns: list
    rows: list
    config: dict
    summary: dict = field(default_factory=dict)
    timing_columns: list = field(default_factory=list)
    timing_rows: list = field(default_factory=list)
    models: list = field(default_factory=list, repr=False)  # (name, model, store) to persist

    def column(self, name: str) -> list:
        k = self.columns.index(name)
        return [row[k] for row in self.rows]

    def where(self, **match) -> list:
        idx = {self.columns.index(k): v for k, v in match.items()}
        return [row for row in self.rows if all(row[k] == v for k, v in idx.items())]

    def basename(self) -> str:
        return f"{self.experiment}_{self.config['dataset']}_{self.config['seed']}"

    def write(self, out_dir: str) -> list[str]:
        """CSV metrics, JSON config echo and, when timed, a separate timing CSV."""
        os.makedirs(out_dir, exist_ok=True)
        base = os.path.join(out_dir, self.basename())
        paths = [base + ".csv", base + ".json"]
        _write_csv(paths[0], self.columns, self.rows)
        with open(paths[1], "w") as fh:
            json.dump({"experiment": self.experiment, "config": self.config,
                       "summary": self.summary}, fh, indent=2, sort_keys=True)
            fh.write("\n")
        if self.timing_rows:
            paths.append(base + "_timing.csv")
            _write_csv(paths[-1], self.timing_columns, self.timing_rows)
        return paths


def _write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in row])


def train_model(kind: str, store: RatingStore, cfg: ExperimentConfig) -> CbmfModel:
    if cfg.cache is None:
        return _train(kind, store, cfg)
    users, items, values, times = store.arrays()
    digest = hashlib.sha256(b"".join(a.tobytes() for a in (users, items, values, times))).hexdigest()
    key = (kind, digest, cfg.hp, cfg.n_clusters, cfg.n_boot_iters)
    if key not in cfg.cache:
        cfg.cache[key] = _train(kind, store, cfg)
    return cfg.cache[key].copy()


def _train(kind: str, store: RatingStore, cfg: ExperimentConfig) -> CbmfModel:
    hp = cfg.hp
    if kind == "basic":
        return CbmfModel.from_basic(train_basic(store, hp))
    if kind == "biased":
        return CbmfModel.from_biased(*train_biased(store, hp))
    return fit_cbmf(store, hp, cfg.n_clusters, cfg.n_boot_iters)


def _dataset(cfg: ExperimentConfig) -> tuple[list[Rating], tuple]:
    if cfg.ratings is not None:
        return list(cfg.ratings), tuple(cfg.rating_scale)
    data = make_planted(seed=cfg.seed, **cfg.synthetic)
    return data.ratings, data.rating_scale


def _split(cfg: ExperimentConfig, name: str) -> tuple[RatingStore, list[Rating]]:
    ratings, scale = _dataset(cfg)
    frac = cfg.test_fraction if cfg.test_fraction is not None else _DEFAULT_FRACTION.get(name, 0.1)
    train, test = chronological_split(ratings, SplitSpec(frac), scale)
    known = [r for r in test if train.knows(r.user, r.item)]
    if len(known) < len(test):
        log.info("dropped %d test ratings of users/items absent from training", len(test) - len(known))
    return train, known


def frozen_predictions(model: CbmfModel, store: RatingStore, ratings: Sequence[Rating]) -> list:
    us = np.array([store.user(r.user) for r in ratings], dtype=np.int64)
    its = np.array([store.item(r.item) for r in ratings], dtype=np.int64)
    pred = model.predict(us, its)
    return [PredictionPair(float(p), r.value) for p, r in zip(pred, ratings)]


def _window(cfg: ExperimentConfig, n: int) -> tuple[int, int]:
    window = cfg.window or max(200, n // 20)
    window = min(window, n)
    return window, cfg.stride or max(window // 2, 1)


def _initial_quality(cfg):
    train, test = _split(cfg, "initial-quality")
    scale = train.rating_scale
    rows = []
    for kind in cfg.models:
        model = train_model(kind, train, cfg)
        score = rmse(frozen_predictions(model, train, test), cfg.clamp, scale)
        rows.append((kind, train.n_ratings, len(test), score))
    return ["model", "n_train", "n_test", "rmse"], rows, {}


def _size_impact(cfg):
    train, test = _split(cfg, "size-impact")
    scale = train.rating_scale
    rows = []
    for k, store in enumerate(build_chunk_ladder(train, cfg.n_chunks), 1):
        for kind in cfg.models:
            model = train_model(kind, store, cfg)
            score = rmse(frozen_predictions(model, store, test), cfg.clamp, scale)
            rows.append((kind, k, store.n_ratings, score))
    summary = {}
    for kind in cfg.models:
        first = next(r[3] for r in rows if r[0] == kind and r[1] == 1)
        last = next(r[3] for r in rows if r[0] == kind and r[1] == cfg.n_chunks)
        summary[f"improvement_pct_{kind}"] = 100.0 * (first - last) / first
    return ["model", "chunks", "n_train", "rmse"], rows, summary


def _offline_decay(cfg):
    train, test = _split(cfg, "offline-decay")
    stream = interleave_by_arrival(test)
    window, stride = _window(cfg, len(stream))
    rows = []
    for kind in cfg.models:
        model = train_model(kind, train, cfg)
        pairs = frozen_predictions(model, train, stream)
        for pos, score in sliding_rmse(pairs, window, stride, cfg.clamp, train.rating_scale):
            rows.append((kind, pos, score))
    return ["model", "position", "rmse"], rows, {"window": window, "stride": stride}


def _mean_improvement(frozen, online) -> float:
    return float(np.mean([100.0 * (a[1] - b[1]) / a[1] for a, b in zip(frozen, online)]))


def _online_robustness(cfg):
    train, test = _split(cfg, "online-robustness")
    stream = interleave_by_arrival(test)
    window, stride = _window(cfg, len(stream))
    model = train_model("cbmf", train, cfg)
    scale = train.rating_scale
    frozen = sliding_rmse(frozen_predictions(model, train, stream), window, stride, cfg.clamp, scale)
    pairs, stats = integrate_stream(model.copy(), train.copy(), stream,
                                    IntegrationMode.parse(cfg.mode), cfg.hp,
                                    max_iters=cfg.integration_max_iters)
    online = sliding_rmse(pairs, window, stride, cfg.clamp, scale)
    rows = [("frozen", p, s) for p, s in frozen] + [("online", p, s) for p, s in online]
    summary = {"window": window, "stride": stride,
               "final_improvement_pct": 100.0 * (frozen[-1][1] - online[-1][1]) / frozen[-1][1],
               "mean_improvement_pct": _mean_improvement(frozen, online),
               "rejected": stats.rejected}
    return ["variant", "position", "rmse"], rows, summary


def _tradeoff(cfg):
    train, test = _split(cfg, "tradeoff")
    stream = interleave_by_arrival(test)
    window, stride = _window(cfg, len(stream))
    model = train_model("cbmf", train, cfg)
    scale = train.rating_scale
    frozen_pairs = frozen_predictions(model, train, stream)
    frozen = sliding_rmse(frozen_pairs, window, stride, cfg.clamp, scale)
    rows, timing = [], []
    for name in cfg.modes:
        mode = IntegrationMode.parse(name)
        pairs, stats = integrate_stream(model.copy(), train.copy(), stream, mode, cfg.hp,
                                        max_iters=cfg.integration_max_iters)
        online = sliding_rmse(pairs, window, stride, cfg.clamp, scale)
        preq, base = rmse(pairs, cfg.clamp, scale), rmse(frozen_pairs, cfg.clamp, scale)
        rows.append((mode.value, preq, base, 100.0 * (base - preq) / base,
                     _mean_improvement(frozen, online), stats.passes / max(stats.ratings_integrated, 1)))
        timing.append((mode.value, stats.ratings_integrated, 1e3 * stats.mean_update_time))
    return (["mode", "prequential_rmse", "frozen_rmse", "improvement_pct",
             "window_improvement_pct", "mean_passes"], rows,
            {"window": window, "stride": stride}, ["mode", "n_integrated", "mean_update_ms"], timing)


def _refactorization(cfg):
    train, test = _split(cfg, "refactorization")
    stream = interleave_by_arrival(test)
    scale = train.rating_scale
    mode = IntegrationMode.parse(cfg.mode)
    cuts = [0] + [int(round(p * len(stream))) for p in cfg.refactor_points] + [len(stream)]
    store = train.copy()
    model = train_model("cbmf", store, cfg)
    snapshots = [("M0", model.copy(), store.copy())]
    rows = []
    for k in range(len(cuts) - 1):
        segment = stream[cuts[k]:cuts[k + 1]]
        previous = None
        if k > 0:
            # paired run: the predecessor keeps going online over this segment
            old_pairs, _ = integrate_stream(model.copy(), store.copy(), segment, mode, cfg.hp,
                                            max_iters=cfg.integration_max_iters)
            previous = rmse(old_pairs, cfg.clamp, scale)
            model = refactorize(store, cfg.hp, cfg.n_clusters, cfg.hp.seed, cfg.n_boot_iters)
            snapshots.append((f"M{k}", model.copy(), store.copy()))
        pairs, _ = integrate_stream(model, store, segment, mode, cfg.hp,
                                    max_iters=cfg.integration_max_iters)
        current = rmse(pairs, cfg.clamp, scale)
        rows.append((k, f"M{k}", cuts[k], cuts[k + 1], current, "" if previous is None else previous))
    return ["segment", "model", "start", "end", "rmse", "predecessor_online_rmse"], rows, {}, snapshots


_RUNNERS = {
    "initial-quality": _initial_quality,
    "size-impact": _size_impact,
    "offline-decay": _offline_decay,
    "online-robustness": _online_robustness,
    "tradeoff": _tradeoff,
    "refactorization": _refactorization,
}


def run_experiment(name: str, config: ExperimentConfig | None = None) -> ExperimentReport:
    """Run one named protocol; config problems raise before any work starts."""
    if name not in _RUNNERS:
        raise ValueError(f"unknown experiment {name!r}; valid: {', '.join(EXPERIMENTS)}")
    cfg = config or ExperimentConfig()
    cfg.validate()
    cfg = dataclasses.replace(cfg, hp=cfg.hp.replace(seed=cfg.seed))
    out = _RUNNERS[name](cfg)
    report = ExperimentReport(name, out[0], out[1], cfg.echo(), out[2])
    if name == "tradeoff":
        report.timing_columns, report.timing_rows = out[3], out[4]
    if name == "refactorization":
        report.models = out[3]
    return report
