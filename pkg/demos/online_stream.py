"""Replay recent ratings through a frozen model and through online integration.

    python3 demos/online_stream.py
"""
from cbmf import (Hyperparams, IntegrationMode, SplitSpec, chronological_split, fit_cbmf,
                  integrate_stream, interleave_by_arrival, make_planted, rmse, sliding_rmse)
from cbmf.experiments import frozen_predictions

data = make_planted(n_users=3000, n_items=300, n_ratings=60_000, seed=3)
train, test = chronological_split(data.ratings, SplitSpec(0.1), data.rating_scale)
stream = interleave_by_arrival([r for r in test if train.knows(r.user, r.item)])
hp = Hyperparams(K=20, seed=3)
model = fit_cbmf(train, hp, 3, hp.max_iters)
scale = data.rating_scale
window = max(200, len(stream) // 10)

frozen = frozen_predictions(model, train, stream)
print(f"stream of {len(stream)} ratings, window {window}")
print(f"{'frozen':>18}  RMSE {rmse(frozen, True, scale):.4f}  "
      f"windows {[round(s, 3) for _, s in sliding_rmse(frozen, window, window, True, scale)]}")

for mode in IntegrationMode:
    pairs, stats = integrate_stream(model.copy(), train.copy(), stream, mode, hp)
    windows = [round(s, 3) for _, s in sliding_rmse(pairs, window, window, True, scale)]
    print(f"{mode.value:>18}  RMSE {rmse(pairs, True, scale):.4f}  windows {windows}  "
          f"{1e6 * stats.mean_update_time:.1f} us/rating, {stats.passes / stats.ratings_integrated:.1f} passes")
