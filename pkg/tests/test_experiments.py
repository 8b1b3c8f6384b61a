import csv
import json

import numpy as np
import pytest

from cbmf.data import interleave_by_arrival
from cbmf.experiments import EXPERIMENTS, ExperimentConfig, run_experiment, train_model
from cbmf.mf import Hyperparams

SMALL = {"n_users": 150, "n_items": 40, "n_ratings": 4000}


def small(**kw):
    base = dict(synthetic=SMALL, hp=Hyperparams(K=4, lam=0.005, max_iters=10), n_boot_iters=3)
    base.update(kw)
    return ExperimentConfig(**base)


def test_initial_quality_rows():
    rep = run_experiment("initial-quality", small())
    assert rep.columns == ["model", "n_train", "n_test", "rmse"]
    assert rep.column("model") == ["basic", "biased", "cbmf"]
    assert all(np.isfinite(rep.column("rmse")))
    assert len(set(rep.column("n_train"))) == 1


def test_size_impact_grid():
    rep = run_experiment("size-impact", small(n_chunks=4, models=("biased", "cbmf")))
    assert len(rep.rows) == 4 * 2
    for kind in ("biased", "cbmf"):
        sizes = [row[2] for row in rep.where(model=kind)]
        assert sizes == sorted(sizes) and len(set(sizes)) == 4
    assert set(rep.summary) == {"improvement_pct_biased", "improvement_pct_cbmf"}


def test_offline_decay_windows():
    rep = run_experiment("offline-decay", small(window=100, stride=50, models=("cbmf",)))
    positions = rep.column("position")
    assert positions[0] == 100 and all(b - a == 50 for a, b in zip(positions, positions[1:]))


def test_offline_decay_leaves_model_untouched():
    cfg = small(models=("cbmf",), cache={})
    run_experiment("offline-decay", cfg)
    (key, model), = cfg.cache.items()
    before = model.copy()
    run_experiment("offline-decay", cfg)
    for a, b in [(before.delta, model.delta), (before.factors.P, model.factors.P),
                 (before.counts, model.counts)]:
        assert a.tobytes() == b.tobytes()


def test_online_robustness_summary():
    rep = run_experiment("online-robustness", small(window=100))
    frozen, online = rep.where(variant="frozen"), rep.where(variant="online")
    assert len(frozen) == len(online) > 0
    assert {"final_improvement_pct", "mean_improvement_pct", "window"} <= set(rep.summary)


def test_tradeoff_rows_and_timing():
    rep = run_experiment("tradeoff", small())
    assert rep.column("mode") == ["user-factors-only", "local-bias-only", "both"]
    assert [row[0] for row in rep.timing_rows] == rep.column("mode")
    assert all(row[2] > 0 for row in rep.timing_rows)
    assert len(set(row[1] for row in rep.timing_rows)) == 1


def test_refactorization_segments_and_snapshots():
    rep = run_experiment("refactorization", small())
    assert rep.column("model") == ["M0", "M1", "M2", "M3", "M4"]
    assert rep.rows[0][5] == "" and all(isinstance(row[5], float) for row in rep.rows[1:])
    assert [name for name, _, _ in rep.models] == rep.column("model")
    starts, ends = rep.column("start"), rep.column("end")
    assert starts[1:] == ends[:-1] and starts[0] == 0
    # every snapshot carries the ratings seen up to its segment start
    base = rep.models[0][2].n_ratings
    for (_, _, store), start in zip(rep.models, starts):
        assert store.n_ratings == base + start


@pytest.mark.parametrize("name", EXPERIMENTS)
def test_deterministic(name):
    a = run_experiment(name, small(window=100))
    b = run_experiment(name, small(window=100))
    assert a.rows == b.rows and a.summary == b.summary


def test_seed_changes_data():
    a = run_experiment("initial-quality", small(seed=1))
    b = run_experiment("initial-quality", small(seed=2))
    assert a.rows != b.rows


def test_cache_reuses_models():
    cfg = small(cache={}, models=("cbmf",))
    a = run_experiment("initial-quality", cfg)
    b = run_experiment("initial-quality", cfg)
    assert a.rows == b.rows and len(cfg.cache) == 1


@pytest.mark.parametrize("bad", [dict(models=("deep",)), dict(n_clusters=0), dict(n_chunks=0),
                                 dict(window=-5), dict(refactor_points=(0.5, 0.2)),
                                 dict(n_boot_iters=-1)])
def test_invalid_config(bad):
    with pytest.raises(ValueError):
        run_experiment("initial-quality", small(**bad))


def test_unknown_experiment_lists_names():
    with pytest.raises(ValueError) as exc:
        run_experiment("everything")
    assert all(name in str(exc.value) for name in EXPERIMENTS)


def test_report_files(tmp_path):
    rep = run_experiment("tradeoff", small())
    paths = rep.write(str(tmp_path))
    assert [p.rsplit("/", 1)[1] for p in paths] == [
        "tradeoff_synthetic_0.csv", "tradeoff_synthetic_0.json", "tradeoff_synthetic_0_timing.csv"]
    with open(paths[0]) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == rep.columns and len(rows) == 4
    with open(paths[1]) as fh:
        echo = json.load(fh)
    assert echo["experiment"] == "tradeoff" and echo["config"]["hp"]["K"] == 4


def test_explicit_ratings_dataset():
    from cbmf.synthetic import make_planted
    data = make_planted(n_users=100, n_items=30, n_ratings=2500, seed=4)
    rep = run_experiment("initial-quality", small(ratings=data.ratings, dataset="mine"))
    assert rep.basename() == "initial-quality_mine_0"


def test_train_model_kinds_share_interface():
    from cbmf.data import RatingStore
    from cbmf.synthetic import make_planted
    store = RatingStore(make_planted(n_users=50, n_items=20, n_ratings=600, seed=1).ratings)
    cfg = small()
    for kind in ("basic", "biased", "cbmf"):
        model = train_model(kind, store, cfg)
        assert model.kind == kind
        assert model.predict(np.array([0]), np.array([0])).shape == (1,)


def test_interleave_keeps_everything():
    from cbmf.synthetic import make_planted
    ratings = make_planted(n_users=40, n_items=10, n_ratings=300, seed=2).ratings
    out = interleave_by_arrival(ratings)
    assert sorted(out) == sorted(ratings)
