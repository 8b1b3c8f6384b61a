"""Rating parsing, sparse storage and the chronological splits used by the experiments."""
from __future__ import annotations

import bisect
import calendar
import csv
import io
import math
from dataclasses import dataclass
from typing import IO, Iterable, NamedTuple, Sequence

import numpy as np

FORMATS = ("movielens-tab", "movielens-double-colon", "netflix-per-movie", "generic-csv")

# rating scale per format when no descriptor is given
DEFAULT_SCALES = {
    "movielens-tab": (1.0, 5.0),
    "movielens-double-colon": (0.5, 5.0),
    "netflix-per-movie": (1.0, 5.0),
    "generic-csv": (1.0, 5.0),
}


class Rating(NamedTuple):
    user: int
    item: int
    value: float
    timestamp: int


class ParseError(ValueError):
    def __init__(self, lineno: int, text: str, reason: str = "malformed line"):
        self.lineno = lineno
        self.text = text
        super().__init__(f"line {lineno}: {reason}: {text!r}")


class DuplicateRatingError(ValueError):
    def __init__(self, user, item):
        self.user = user
        self.item = item
        super().__init__(f"duplicate rating for (user={user}, item={item})")


class UnassignedItemError(KeyError):
    pass


def _to_rating(user: str, item: str, value: str, ts: str) -> Rating:
    v = float(value)
    if not v > 0 or not math.isfinite(v):
        raise ValueError(f"rating must be positive, got {value}")
    return Rating(int(user), int(item), v, int(float(ts)))


def _date_to_epoch(text: str) -> int:
    y, m, d = (int(x) for x in text.split("-"))
    return calendar.timegm((y, m, d, 0, 0, 0))


def parse_ratings(source: IO | str | bytes, format: str) -> list[Rating]:
    """Parse a rating file in one of the supported `FORMATS`.

    `source` may be a path, raw bytes, or an open (text or binary) stream.
    Input order is preserved. Raises `ParseError` for a bad line and
    `DuplicateRatingError` when a (user, item) pair occurs twice.
    """
    if format not in FORMATS:
        raise ValueError(f"unknown format {format!r}; expected one of {', '.join(FORMATS)}")
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        with open(source, "rb") as fh:
            text = fh.read().decode("utf-8")
    else:
        data = source.read()
        text = data.decode("utf-8") if isinstance(data, bytes) else data

    out: list[Rating] = []
    seen: set[tuple[int, int]] = set()
    movie = None
    lines = text.splitlines()
    start = 0
    if format == "generic-csv":
        if not lines:
            return out
        header = [h.strip() for h in lines[0].split(",")]
        if header != ["user", "item", "rating", "timestamp"]:
            raise ParseError(1, lines[0], "bad header")
        start = 1

    for lineno, line in enumerate(lines[start:], start + 1):
        if not line.strip():
            continue
        try:
            if format == "movielens-tab":
                r = _to_rating(*line.split("\t"))
            elif format == "movielens-double-colon":
                r = _to_rating(*line.split("::"))
            elif format == "generic-csv":
                r = _to_rating(*next(csv.reader([line])))
            else:
                s = line.strip()
                if s.endswith(":"):
                    movie = int(s[:-1])
                    continue
                if movie is None:
                    raise ValueError("rating before any movie header")
                user, value, date = s.split(",")
                r = _to_rating(user, str(movie), value, str(_date_to_epoch(date)))
        except (TypeError, ValueError) as exc:
            raise ParseError(lineno, line, str(exc) or "malformed line") from None
        key = (r.user, r.item)
        if key in seen:
            raise DuplicateRatingError(r.user, r.item)
        seen.add(key)
        out.append(r)
    return out


def write_ratings(ratings: Iterable[Rating], fh: IO[str], format: str = "movielens-tab") -> None:
    """Inverse of `parse_ratings` for the line-oriented formats."""
    fmt = {"movielens-tab": "{}\t{}\t{!r}\t{}\n", "movielens-double-colon": "{}::{}::{!r}::{}\n",
           "generic-csv": "{},{},{!r},{}\n"}
    if format not in fmt:
        raise ValueError(f"cannot write format {format!r}")
    if format == "generic-csv":
        fh.write("user,item,rating,timestamp\n")
    for r in ratings:
        fh.write(fmt[format].format(r.user, r.item, float(r.value), r.timestamp))


class RatingStore:
    """Sparse rating collection over a fixed universe of users and items.

    Raw ids are mapped to dense indices in ascending id order, so models can
    address users and items as ``0..n_users-1`` and ``0..n_items-1``. Ratings
    keep their insertion order, which is the order training epochs visit them.
    """

    def __init__(self, ratings: Iterable[Rating] = (), rating_scale=(1.0, 5.0),
                 user_ids: Iterable[int] | None = None, item_ids: Iterable[int] | None = None):
        ratings = list(ratings)
        if user_ids is None:
            user_ids = {r.user for r in ratings}
        if item_ids is None:
            item_ids = {r.item for r in ratings}
        self.user_ids = np.array(sorted(set(int(u) for u in user_ids)), dtype=np.int64)
        self.item_ids = np.array(sorted(set(int(i) for i in item_ids)), dtype=np.int64)
        self._upos = {int(u): k for k, u in enumerate(self.user_ids)}
        self._ipos = {int(i): k for k, i in enumerate(self.item_ids)}
        self.rating_scale = (float(rating_scale[0]), float(rating_scale[1]))

        # growable buffers; the first `_n` entries are live
        cap = max(len(ratings), 16)
        self._u = np.empty(cap, dtype=np.int64)
        self._i = np.empty(cap, dtype=np.int64)
        self._v = np.empty(cap, dtype=np.float64)
        self._t = np.empty(cap, dtype=np.int64)
        self._n = 0
        self._pairs: set[tuple[int, int]] = set()
        self.user_index: list[list[int]] = [[] for _ in range(len(self.user_ids))]
        self.item_counts = np.zeros(len(self.item_ids), dtype=np.int64)
        self.user_cluster_index: dict[tuple[int, int], list[int]] | None = None
        self.clusters = None
        for r in ratings:
            self.add(r)

    # sizes
    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def n_ratings(self) -> int:
        return self._n

    def __len__(self) -> int:
        return self.n_ratings

    def has_user(self, user: int) -> bool:
        return int(user) in self._upos

    def has_item(self, item: int) -> bool:
        return int(item) in self._ipos

    def user(self, raw: int) -> int:
        return self._upos[int(raw)]

    def item(self, raw: int) -> int:
        return self._ipos[int(raw)]

    def knows(self, user: int, item: int) -> bool:
        """True when both raw ids already have at least one rating here."""
        u, i = self._upos.get(int(user)), self._ipos.get(int(item))
        return u is not None and i is not None and bool(self.user_index[u]) and self.item_counts[i] > 0

    def contains(self, user: int, item: int) -> bool:
        """True when the raw (user, item) pair is already rated."""
        try:
            return (self.user(user), self.item(item)) in self._pairs
        except KeyError:
            return False

    def add(self, r: Rating) -> int:
        """Append a rating, keep every index current, return its position."""
        try:
            u, i = self._upos[int(r.user)], self._ipos[int(r.item)]
        except KeyError:
            raise KeyError(f"rating ({r.user}, {r.item}) outside the store's user/item universe") from None
        if not r.value > 0:
            raise ValueError(f"rating must be positive, got {r.value}")
        if (u, i) in self._pairs:
            raise DuplicateRatingError(r.user, r.item)
        pos = self._n
        if pos == len(self._v):
            for name in ("_u", "_i", "_v", "_t"):
                buf = getattr(self, name)
                setattr(self, name, np.concatenate([buf, np.empty_like(buf)]))
        self._pairs.add((u, i))
        self._u[pos], self._i[pos], self._v[pos], self._t[pos] = u, i, r.value, r.timestamp
        self._n += 1
        self.item_counts[i] += 1
        # keep the per-user list time-ordered; ties stay in insertion order
        lst = self.user_index[u]
        if not lst or self._t[lst[-1]] <= r.timestamp:
            lst.append(pos)
        else:
            keys = self._t[lst].tolist()
            lst.insert(bisect.bisect_right(keys, int(r.timestamp)), pos)
        if self.user_cluster_index is not None:
            c = int(self.clusters.assignment[i])
            self.user_cluster_index.setdefault((u, c), []).append(pos)
        return pos

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(users, items, values, timestamps) as dense-index views; refetch after `add`."""
        n = self._n
        return self._u[:n], self._i[:n], self._v[:n], self._t[:n]

    def rating(self, pos: int) -> Rating:
        return Rating(int(self.user_ids[self._u[pos]]), int(self.item_ids[self._i[pos]]),
                      float(self._v[pos]), int(self._t[pos]))

    def ratings(self) -> list[Rating]:
        return [self.rating(p) for p in range(self.n_ratings)]

    def mean(self) -> float:
        return float(np.mean(self.arrays()[2])) if self.n_ratings else 0.0

    def subset(self, positions: Sequence[int]) -> "RatingStore":
        """A new store over the same universe holding the given positions, in that order."""
        return RatingStore((self.rating(p) for p in positions), self.rating_scale,
                           self.user_ids, self.item_ids)

    def copy(self) -> "RatingStore":
        return self.subset(range(self.n_ratings))

    def cluster_positions(self, u: int, c: int) -> list[int]:
        if self.user_cluster_index is None:
            raise RuntimeError("store is not indexed by cluster")
        return self.user_cluster_index.get((u, c), [])


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float
    mode: str = "global-chronological"

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError(f"test_fraction must lie in (0, 1), got {self.test_fraction}")
        if self.mode not in ("global-chronological", "per-user-chronological"):
            raise ValueError(f"unknown split mode {self.mode!r}")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def chronological_split(ratings: Sequence[Rating], spec: SplitSpec,
                        rating_scale=(1.0, 5.0)) -> tuple[RatingStore, list[Rating]]:
    """Hold out the most recent ratings.

    The training store spans every user and item seen in `ratings`, so test
    ratings always refer to known ids. Timestamp ties keep input order.
    """
    if not ratings:
        raise ValueError("cannot split an empty rating list")
    order = sorted(range(len(ratings)), key=lambda k: (ratings[k].timestamp, k))
    users = {r.user for r in ratings}
    items = {r.item for r in ratings}
    if spec.mode == "global-chronological":
        n_test = _round_half_up(spec.test_fraction * len(ratings))
        train_pos, test_pos = order[:len(order) - n_test], order[len(order) - n_test:]
    else:
        by_user: dict[int, list[int]] = {}
        for k in order:
            by_user.setdefault(ratings[k].user, []).append(k)
        train_set: set[int] = set()
        for ks in by_user.values():
            n_test = _round_half_up(spec.test_fraction * len(ks))
            train_set.update(ks[:len(ks) - n_test])
        train_pos = [k for k in order if k in train_set]
        test_pos = [k for k in order if k not in train_set]
    train = RatingStore((ratings[k] for k in train_pos), rating_scale, users, items)
    return train, [ratings[k] for k in test_pos]


def chunk_quotas(n: int, n_chunks: int) -> list[int]:
    """Per-chunk sizes for `n` time-ordered ratings; the remainder goes to the latest chunks."""
    base, rem = divmod(n, n_chunks)
    return [base + (1 if k >= n_chunks - rem else 0) for k in range(n_chunks)]


def build_chunk_ladder(train: RatingStore, n_chunks: int = 10) -> list[RatingStore]:
    """Nested training sets T_1 ⊂ ... ⊂ T_n built from each user's most recent chunks."""
    if n_chunks < 1:
        raise ValueError("n_chunks must be at least 1")
    chunk_of = np.empty(train.n_ratings, dtype=np.int64)
    for positions in train.user_index:
        k = 0
        for chunk, size in enumerate(chunk_quotas(len(positions), n_chunks)):
            for p in positions[k:k + size]:
                chunk_of[p] = chunk
            k += size
    ladder = []
    for k in range(1, n_chunks + 1):
        keep = np.flatnonzero(chunk_of >= n_chunks - k)
        ladder.append(train.subset(keep.tolist()))
    return ladder


def interleave_by_arrival(test: Sequence[Rating]) -> list[Rating]:
    """Order so that every user's i-th rating precedes anyone's (i+1)-th one."""
    first_seen: dict[int, int] = {}
    per_user: dict[int, list[int]] = {}
    for k, r in enumerate(test):
        first_seen.setdefault(r.user, k)
        per_user.setdefault(r.user, []).append(k)
    keyed = []
    for user, ks in per_user.items():
        ks.sort(key=lambda k: (test[k].timestamp, k))
        for rank, k in enumerate(ks):
            keyed.append((rank, first_seen[user], k))
    keyed.sort()
    return [test[k] for _, _, k in keyed]


def index_by_cluster(store: RatingStore, clusters) -> None:
    """Build the per-(user, cluster) rating lists V(u, c) for `clusters`."""
    assignment = np.asarray(clusters.assignment)
    if len(assignment) < store.n_items:
        missing = store.item_ids[len(assignment)]
        raise UnassignedItemError(f"item {int(missing)} has no cluster")
    users, items, _, _ = store.arrays()
    if np.any(assignment[:store.n_items] < 0):
        bad = int(np.flatnonzero(assignment[:store.n_items] < 0)[0])
        raise UnassignedItemError(f"item {int(store.item_ids[bad])} has no cluster")
    index: dict[tuple[int, int], list[int]] = {}
    for u, positions in enumerate(store.user_index):
        for p in positions:
            index.setdefault((u, int(assignment[items[p]])), []).append(p)
    store.user_cluster_index = index
    store.clusters = clusters


def read_dataset(path: str, format: str, rating_scale=None) -> tuple[list[Rating], tuple[float, float]]:
    scale = tuple(rating_scale) if rating_scale is not None else DEFAULT_SCALES[format]
    return parse_ratings(path, format), scale


def dumps(ratings: Iterable[Rating], format: str = "movielens-tab") -> str:
    buf = io.StringIO()
    write_ratings(ratings, buf, format)
    return buf.getvalue()
