"""Cluster-based matrix factorization with online integration of new ratings."""
from .clustering import ClusterMap, cluster_items, kmeans, variance_bound_report
from .data import (Rating, RatingStore, SplitSpec, build_chunk_ladder, chronological_split,
                   interleave_by_arrival, parse_ratings, write_ratings)
from .engine import CbmfModel, fit_cbmf, predict_cbmf, train_cbmf
from .evaluation import PredictionPair, cluster_coverage, rmse, sliding_rmse, topk
from .experiments import EXPERIMENTS, ExperimentConfig, run_experiment
from .mf import BiasTable, FactorModel, Hyperparams, train_basic, train_biased
from .online import IntegrationMode, integrate_rating, integrate_stream, refactorize
from .synthetic import make_planted

__version__ = "0.1.0"
