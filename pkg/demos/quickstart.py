"""Train basic MF, biased MF and CBMF on planted data and compare held-out RMSE.

    python3 demos/quickstart.py
"""
import numpy as np

from cbmf import (CbmfModel, Hyperparams, SplitSpec, chronological_split, fit_cbmf, make_planted,
                  rmse, train_basic, train_biased)
from cbmf.experiments import frozen_predictions

data = make_planted(n_users=2000, n_items=300, n_ratings=40_000, seed=7)
train, test = chronological_split(data.ratings, SplitSpec(0.05), data.rating_scale)
test = [r for r in test if train.knows(r.user, r.item)]
print(f"{train.n_users} users, {train.n_items} items, {train.n_ratings} training ratings, "
      f"{len(test)} test ratings")

hp = Hyperparams(K=20, seed=7)
models = {
    "basic": CbmfModel.from_basic(train_basic(train, hp)),
    "biased": CbmfModel.from_biased(*train_biased(train, hp)),
    "cbmf": fit_cbmf(train, hp, n_clusters=3, n_boot_iters=hp.max_iters),
}
for name, model in models.items():
    score = rmse(frozen_predictions(model, train, test), clamp=True, scale=data.rating_scale)
    print(f"{name:>7}  test RMSE {score:.4f}")

# how the learned item clusters line up with the planted ones
cbmf = models["cbmf"]
planted = np.array([data.item_cluster[iid] for iid in train.item_ids])
table = np.zeros((3, cbmf.clusters.n_clusters), dtype=int)
np.add.at(table, (planted, cbmf.clusters.assignment), 1)
print("items per (planted cluster, learned cluster):")
print(table)
print("learned cluster means:", np.round(cbmf.clusters.mu_c, 3).tolist())
