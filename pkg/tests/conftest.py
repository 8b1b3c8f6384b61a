import sys

import numpy as np
import pytest

from cbmf.data import Rating, RatingStore


def random_ratings(n_users, n_items, density=0.5, seed=0, scale=(1, 5), integer=False):
    """Random unique (user, item) ratings with increasing timestamps."""
    rng = np.random.default_rng(seed)
    out = []
    t = 1_000_000
    for u in range(1, n_users + 1):
        for i in range(1, n_items + 1):
            if rng.random() < density:
                v = rng.integers(scale[0], scale[1] + 1) if integer else rng.uniform(*scale)
                t += int(rng.integers(1, 100))
                out.append(Rating(u, i, float(v), t))
    rng.shuffle(out)
    return out


def random_store(n_users=8, n_items=6, density=0.6, seed=0, **kw):
    ratings = random_ratings(n_users, n_items, density, seed, **kw)
    return RatingStore(ratings)


@pytest.fixture
def toy_ratings():
    # 4 users x 4 items, timestamps increasing down the list
    rows = [(1, 1, 5, 10), (1, 2, 3, 11), (2, 1, 4, 12), (2, 3, 1, 13), (3, 2, 2, 14),
            (3, 4, 5, 15), (4, 3, 2, 16), (4, 4, 4, 17), (1, 4, 4, 18), (2, 2, 3, 19)]
    return [Rating(u, i, float(v), t) for u, i, v, t in rows]


@pytest.fixture
def toy_store(toy_ratings):
    return RatingStore(toy_ratings)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
