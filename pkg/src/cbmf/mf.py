"""Basic and biased matrix factorization trained by per-rating SGD."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .data import RatingStore

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    def __init__(self, epoch: int, value: float):
        self.epoch = epoch
        super().__init__(f"training diverged at epoch {epoch}: objective = {value}")


@dataclass(frozen=True)
class Hyperparams:
    """SGD settings. Defaults are the calibration used for the large datasets."""

    K: int = 40
    lam: float = 0.001
    beta: float = 0.02
    gamma: float = 0.05
    max_iters: int = 120
    min_rel_improve: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.lam < 0 or self.beta < 0 or self.gamma < 0:
            raise ValueError("lam, beta and gamma must be non-negative")

    def replace(self, **kw) -> "Hyperparams":
        from dataclasses import replace
        return replace(self, **kw)


@dataclass
class FactorModel:
    P: np.ndarray  # n_users x K
    Q: np.ndarray  # K x n_items
    mu: float = 0.0

    @property
    def n_users(self) -> int:
        return self.P.shape[0]

    @property
    def n_items(self) -> int:
        return self.Q.shape[1]

    @property
    def K(self) -> int:
        return self.P.shape[1]

    def copy(self) -> "FactorModel":
        return FactorModel(self.P.copy(), self.Q.copy(), self.mu)


@dataclass
class BiasTable:
    bu: np.ndarray
    bi: np.ndarray

    @classmethod
    def zeros(cls, n_users: int, n_items: int) -> "BiasTable":
        return cls(np.zeros(n_users), np.zeros(n_items))

    def copy(self) -> "BiasTable":
        return BiasTable(self.bu.copy(), self.bi.copy())


def init_factors(n_users: int, n_items: int, hp: Hyperparams) -> FactorModel:
    """Uniform draws in [0, 0.1/sqrt(K)], P first then Q, from ``hp.seed``."""
    rng = np.random.default_rng(hp.seed)
    hi = 0.1 / math.sqrt(hp.K)
    P = rng.uniform(0.0, hi, size=(n_users, hp.K))
    Q = rng.uniform(0.0, hi, size=(hp.K, n_items))
    return FactorModel(P, Q)


def _check(model: FactorModel, u: int, i: int) -> None:
    if not (0 <= u < model.n_users and 0 <= i < model.n_items):
        raise IndexError(f"(u={u}, i={i}) outside a {model.n_users} x {model.n_items} model")


def predict_basic(model: FactorModel, u: int, i: int) -> float:
    _check(model, u, i)
    return float(model.P[u] @ model.Q[:, i])


def predict_biased(model: FactorModel, biases: BiasTable, u: int, i: int) -> float:
    _check(model, u, i)
    return float(model.P[u] @ model.Q[:, i]) + model.mu + biases.bu[u] + biases.bi[i]


@dataclass
class _State:
    """Flattened parameters handed to the compiled kernels."""

    P: np.ndarray
    Q: np.ndarray
    offset: np.ndarray
    bu: np.ndarray
    bi: np.ndarray
    delta: np.ndarray
    cl: np.ndarray
    use_bias: bool
    use_delta: bool

    @classmethod
    def basic(cls, model: FactorModel) -> "_State":
        n_u, n_i = model.n_users, model.n_items
        return cls(model.P, model.Q, np.zeros(1), np.zeros(n_u), np.zeros(n_i),
                   np.zeros((n_u, 1)), np.zeros(n_i, dtype=np.int64), False, False)

    @classmethod
    def biased(cls, model: FactorModel, biases: BiasTable) -> "_State":
        n_u, n_i = model.n_users, model.n_items
        return cls(model.P, model.Q, np.array([model.mu]), biases.bu, biases.bi,
                   np.zeros((n_u, 1)), np.zeros(n_i, dtype=np.int64), True, False)

    def objective(self, store: RatingStore, hp: Hyperparams) -> float:
        users, items, values, _ = store.arrays()
        return _kernels.objective(users, items, values, self.cl, self.P, self.Q, self.offset,
                                  self.bu, self.bi, self.delta, hp.beta, hp.gamma,
                                  self.use_bias, self.use_delta)

    def predict(self, us: np.ndarray, its: np.ndarray) -> np.ndarray:
        return _kernels.predict_many(np.asarray(us, dtype=np.int64), np.asarray(its, dtype=np.int64),
                                     self.cl, self.P, self.Q, self.offset, self.bu, self.bi,
                                     self.delta, self.use_bias, self.use_delta)


def run_sgd(state: _State, store: RatingStore, hp: Hyperparams, epochs: int | None = None,
            trace: list | None = None) -> int:
    """Train `state` in place; returns the number of epochs run.

    With `epochs` given, exactly that many epochs run and the plateau rule is
    ignored. Otherwise training stops once the objective's relative decrease
    falls below ``hp.min_rel_improve`` or after ``hp.max_iters`` epochs.
    """
    users, items, values, _ = store.arrays()
    prev = state.objective(store, hp)
    if trace is not None:
        trace.append(prev)
    n_epochs = hp.max_iters if epochs is None else epochs
    for epoch in range(1, n_epochs + 1):
        _kernels.sgd_epoch(users, items, values, state.cl, state.P, state.Q, state.offset,
                           state.bu, state.bi, state.delta, hp.lam, hp.beta, hp.gamma,
                           state.use_bias, state.use_delta)
        obj = state.objective(store, hp)
        if trace is not None:
            trace.append(obj)
        if not math.isfinite(obj):
            raise TrainingError(epoch, obj)
        log.debug("epoch %d objective %.6f", epoch, obj)
        if epochs is None and (prev <= 0 or (prev - obj) / prev < hp.min_rel_improve):
            return epoch
        prev = obj
    return n_epochs


def train_basic(store: RatingStore, hp: Hyperparams, trace: list | None = None,
                epochs: int | None = None) -> FactorModel:
    if store.n_ratings == 0:
        raise ValueError("cannot train on an empty store")
    model = init_factors(store.n_users, store.n_items, hp)
    run_sgd(_State.basic(model), store, hp, epochs=epochs, trace=trace)
    return model


def train_biased(store: RatingStore, hp: Hyperparams,
                 trace: list | None = None) -> tuple[FactorModel, BiasTable]:
    if store.n_ratings == 0:
        raise ValueError("cannot train on an empty store")
    model = init_factors(store.n_users, store.n_items, hp)
    model.mu = store.mean()
    biases = BiasTable.zeros(store.n_users, store.n_items)
    run_sgd(_State.biased(model, biases), store, hp, trace=trace)
    return model, biases


def regularized_sse(model: FactorModel, biases: BiasTable | None, store: RatingStore,
                    hp: Hyperparams) -> float:
    """Squared error plus per-rating L2 terms, over the ratings in `store`."""
    state = _State.basic(model) if biases is None else _State.biased(model, biases)
    return float(state.objective(store, hp))


def predict_all(model: FactorModel, biases: BiasTable | None, us, its) -> np.ndarray:
    state = _State.basic(model) if biases is None else _State.biased(model, biases)
    return state.predict(us, its)
