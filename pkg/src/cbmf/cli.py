"""Command-line entry points: ``cbmf train | stream | experiment | generate``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

from . import snapshot
from .data import (FORMATS, DuplicateRatingError, ParseError, RatingStore, SplitSpec,
                   chronological_split, read_dataset, write_ratings)
from .engine import CbmfModel, cbmf_objective, fit_cbmf
from .evaluation import rmse
from .experiments import EXPERIMENTS, ExperimentConfig, frozen_predictions, run_experiment
from .mf import Hyperparams, TrainingError, train_basic, train_biased
from .online import IntegrationMode, IntegrationStats, RejectedRating, _predict, integrate_rating
from .synthetic import make_planted

log = logging.getLogger("cbmf")

MODES = {"bias": "local-bias-only", "factors": "user-factors-only", "both": "both"}


class CliError(Exception):
    pass


def _scale(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO,HI, got {text!r}") from None
    if not 0 < lo < hi:
        raise argparse.ArgumentTypeError(f"bad rating scale {text!r}")
    return lo, hi


def _json_object(text: str) -> dict:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise argparse.ArgumentTypeError(f"bad JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise argparse.ArgumentTypeError("expected a JSON object")
    return obj


def _add_data_flags(p, required=True):
    p.add_argument("--dataset", required=required,
                   help="ratings file, or 'synthetic' for the bundled planted generator")
    p.add_argument("--format", choices=FORMATS, default="movielens-tab")
    p.add_argument("--scale", type=_scale, default=None, metavar="LO,HI",
                   help="rating scale (default depends on the format)")
    p.add_argument("--synthetic", type=_json_object, default={}, metavar="JSON",
                   help="keyword overrides for the planted generator")


def _add_hp_flags(p):
    d = Hyperparams()
    p.add_argument("--factors", type=int, default=d.K, metavar="K")
    p.add_argument("--lambda", dest="lam", type=float, default=d.lam, help="learning rate")
    p.add_argument("--beta", type=float, default=d.beta, help="factor regularization")
    p.add_argument("--gamma", type=float, default=d.gamma, help="bias regularization")
    p.add_argument("--max-iters", type=int, default=d.max_iters)
    p.add_argument("--min-rel-improve", type=float, default=d.min_rel_improve)
    p.add_argument("--clusters", type=int, default=3, metavar="N_C")
    p.add_argument("--boot-iters", type=int, default=10,
                   help="basic-MF epochs before clustering the item factors")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cbmf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write a snapshot")
    _add_data_flags(p)
    _add_hp_flags(p)
    p.add_argument("--model", choices=("basic", "biased", "cbmf"), default="cbmf")
    p.add_argument("--test-fraction", type=float, default=None,
                   help="hold out the most recent ratings and report their RMSE")
    p.add_argument("--out", required=True, help="snapshot path")

    p = sub.add_parser("stream", help="replay new ratings through a snapshot prequentially")
    p.add_argument("snapshot")
    p.add_argument("stream", help="ratings file to integrate, in arrival order")
    p.add_argument("--format", choices=FORMATS, default="movielens-tab")
    p.add_argument("--mode", choices=tuple(MODES), default="bias")
    p.add_argument("--max-iters", type=int, default=20, help="descent passes per integration")
    p.add_argument("--out", required=True, help="predictions CSV")
    p.add_argument("--stats", default=None, help="stats CSV (default: <out>_stats.csv)")
    p.add_argument("--save-snapshot", default=None, help="write the updated model here")

    p = sub.add_parser("experiment", help="run one of the evaluation protocols")
    p.add_argument("name", choices=EXPERIMENTS)
    _add_data_flags(p, required=False)
    _add_hp_flags(p)
    p.add_argument("--test-fraction", type=float, default=None)
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--chunks", type=int, default=10)
    p.add_argument("--mode", choices=tuple(MODES), default="bias")
    p.add_argument("--models", default="basic,biased,cbmf")
    p.add_argument("--no-clamp", action="store_true", help="score raw predictions")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("generate", help="write a planted synthetic dataset")
    p.add_argument("--format", choices=("movielens-tab", "movielens-double-colon", "generic-csv"),
                   default="movielens-tab")
    p.add_argument("--synthetic", type=_json_object, default={}, metavar="JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    return parser


def _hp(args) -> Hyperparams:
    try:
        return Hyperparams(K=args.factors, lam=args.lam, beta=args.beta, gamma=args.gamma,
                           max_iters=args.max_iters, min_rel_improve=args.min_rel_improve,
                           seed=args.seed)
    except ValueError as exc:
        raise CliError(str(exc)) from None


def _load_ratings(args):
    if args.dataset == "synthetic":
        data = make_planted(seed=args.seed, **args.synthetic)
        return data.ratings, args.scale or data.rating_scale
    return read_dataset(args.dataset, args.format, args.scale)


def cmd_train(args) -> int:
    hp = _hp(args)
    ratings, scale = _load_ratings(args)
    if not ratings:
        raise CliError("dataset is empty")
    test = []
    if args.test_fraction is not None:
        store, test = chronological_split(ratings, SplitSpec(args.test_fraction), scale)
        test = [r for r in test if store.knows(r.user, r.item)]
    else:
        store = RatingStore(ratings, scale)
    if args.model == "basic":
        model = CbmfModel.from_basic(train_basic(store, hp))
    elif args.model == "biased":
        model = CbmfModel.from_biased(*train_biased(store, hp))
    else:
        model = fit_cbmf(store, hp, args.clusters, args.boot_iters)
    snapshot.save(args.out, model, store, hp)

    users, items, values, _ = store.arrays()
    train_pairs = list(zip(model.predict(users, items).tolist(), values.tolist()))
    print(f"objective {cbmf_objective(model, store, hp):.6f}")
    print(f"train_rmse {rmse(train_pairs):.6f}")
    if test:
        print(f"test_rmse {rmse(frozen_predictions(model, store, test), True, scale):.6f}")
    return 0


def _fmt(x: float) -> str:
    return repr(float(x))


def cmd_stream(args) -> int:
    snap = snapshot.load(args.snapshot)
    model, store, hp = snap.model, snap.store, snap.hp
    ratings, _ = read_dataset(args.stream, args.format, snap.header.rating_scale)
    mode = IntegrationMode.parse(args.mode)
    stats = IntegrationStats()
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user", "item", "timestamp", "actual", "predicted", "status"])
        for r in ratings:
            row = [r.user, r.item, r.timestamp, _fmt(r.value)]
            if not store.knows(r.user, r.item) or store.contains(r.user, r.item):
                stats.rejected += 1
                log.info("rejected rating (%s, %s)", r.user, r.item)
                w.writerow(row + ["", "rejected"])
                continue
            pred = _predict(model, store.user(r.user), store.item(r.item))
            try:
                integrate_rating(model, store, r, mode, hp, args.max_iters, stats)
            except RejectedRating as exc:
                stats.rejected += 1
                log.info("%s", exc)
                w.writerow(row + ["", "rejected"])
                continue
            w.writerow(row + [_fmt(pred), "integrated"])
    stats_path = args.stats or os.path.splitext(args.out)[0] + "_stats.csv"
    with open(stats_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "n_integrated", "n_rejected", "passes", "residual_evals", "mean_update_us"])
        w.writerow([mode.value, stats.ratings_integrated, stats.rejected, stats.passes,
                    stats.residual_evals, f"{1e6 * stats.mean_update_time:.3f}"])
    if args.save_snapshot:
        snapshot.save(args.save_snapshot, model, store, hp)
    print(f"integrated {stats.ratings_integrated} rejected {stats.rejected}")
    return 0


def cmd_experiment(args) -> int:
    hp = _hp(args)
    cfg = ExperimentConfig(
        dataset="synthetic", synthetic=dict(args.synthetic), hp=hp, n_clusters=args.clusters,
        n_boot_iters=args.boot_iters, test_fraction=args.test_fraction, n_chunks=args.chunks,
        window=args.window, stride=args.stride, models=tuple(args.models.split(",")),
        mode=MODES[args.mode], clamp=not args.no_clamp, seed=args.seed)
    if args.dataset not in (None, "synthetic"):
        ratings, scale = read_dataset(args.dataset, args.format, args.scale)
        name = os.path.splitext(os.path.basename(args.dataset))[0]
        cfg = ExperimentConfig(**{**cfg.__dict__, "dataset": name, "ratings": ratings,
                                  "rating_scale": scale})
    elif args.scale is not None:
        cfg.rating_scale = args.scale
    try:
        cfg.validate()
    except ValueError as exc:
        raise CliError(str(exc)) from None
    report = run_experiment(args.name, cfg)
    paths = report.write(args.out)
    for name, model, store in report.models:
        path = os.path.join(args.out, f"{report.basename()}_{name}.snap")
        snapshot.save(path, model, store, cfg.hp.replace(seed=cfg.seed))
        paths.append(path)
    for p in paths:
        print(p)
    return 0


def cmd_generate(args) -> int:
    data = make_planted(seed=args.seed, **args.synthetic)
    with open(args.out, "w") as fh:
        write_ratings(data.ratings, fh, args.format)
    print(f"wrote {len(data.ratings)} ratings to {args.out}")
    return 0


COMMANDS = {"train": cmd_train, "stream": cmd_stream, "experiment": cmd_experiment,
            "generate": cmd_generate}


def _setup_logging() -> None:
    name = os.environ.get("CBMF_LOG", "WARNING").strip().upper()
    level = int(name) if name.isdigit() else getattr(logging, name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "test_fraction", None) is not None and not 0 < args.test_fraction < 1:
        parser.error("--test-fraction must lie strictly between 0 and 1")
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        parser.error(str(exc))
    except snapshot.SnapshotVersionError as exc:
        print(f"cbmf: error: {exc}", file=sys.stderr)
        return 3
    except (OSError, ParseError, DuplicateRatingError, TrainingError, snapshot.SnapshotError,
            ValueError, KeyError) as exc:
        print(f"cbmf: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
