"""Alternate online integration with periodic refactorization.

Each segment of the stream is scored twice: by the model that kept running
online, and by a model retrained on everything seen so far.

    python3 demos/refactorization.py
"""
from cbmf import (Hyperparams, IntegrationMode, SplitSpec, chronological_split, fit_cbmf,
                  integrate_stream, interleave_by_arrival, make_planted, refactorize, rmse)

data = make_planted(n_users=3000, n_items=300, n_ratings=60_000, seed=5)
train, test = chronological_split(data.ratings, SplitSpec(0.2), data.rating_scale)
stream = interleave_by_arrival([r for r in test if train.knows(r.user, r.item)])
hp = Hyperparams(K=20, seed=5)
scale = data.rating_scale
mode = IntegrationMode.LOCAL_BIAS

store = train.copy()
model = fit_cbmf(store, hp, 3, hp.max_iters)
cuts = [round(k * len(stream) / 4) for k in range(5)]
for k in range(4):
    segment = stream[cuts[k]:cuts[k + 1]]
    kept, _ = integrate_stream(model.copy(), store.copy(), segment, mode, hp)
    if k > 0:
        model = refactorize(store, hp, 3, n_boot_iters=hp.max_iters)
    fresh, _ = integrate_stream(model, store, segment, mode, hp)
    print(f"segment {k}: {len(segment)} ratings, store {store.n_ratings}  "
          f"online-only {rmse(kept, True, scale):.4f}  "
          f"{'refactorized' if k else 'initial'} {rmse(fresh, True, scale):.4f}")
