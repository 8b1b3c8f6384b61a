"""Binary model snapshots.

Layout: a text header of ``key=value`` lines closed by ``end``, then the
arrays below as little-endian float64 in this order, then a 32-byte SHA-256
of everything before it. Integer arrays (counts, assignment, ids, rating
positions) are stored as float64 too; they are exact below 2**53.

The training ratings travel with the model so that a loaded snapshot can
keep integrating new ratings without the original dataset.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from .clustering import ClusterMap
from .data import Rating, RatingStore
from .engine import CbmfModel
from .mf import BiasTable, FactorModel, Hyperparams

MAGIC = "cbmf-snapshot"
FORMAT_VERSION = 1
SECTIONS = ("P", "Q", "mu", "bu", "bi", "mu_c", "delta", "counts", "assignment",
            "user_ids", "item_ids", "r_user", "r_item", "r_value", "r_time")


class SnapshotError(ValueError):
    pass


class SnapshotIntegrityError(SnapshotError):
    pass


class SnapshotVersionError(SnapshotError):
    def __init__(self, found, expected=FORMAT_VERSION):
        self.found = found
        self.expected = expected
        super().__init__(f"snapshot format version {found} is not supported (this build reads version {expected})")


@dataclass
class SnapshotHeader:
    format_version: int
    kind: str
    n_users: int
    n_items: int
    K: int
    N_c: int
    n_ratings: int
    rating_scale: tuple
    hyperparams: dict
    created: int
    seed: int
    sections: dict

    def lines(self) -> list[str]:
        return [
            MAGIC,
            f"format_version={self.format_version}",
            f"kind={self.kind}",
            f"n_users={self.n_users}",
            f"n_items={self.n_items}",
            f"K={self.K}",
            f"N_c={self.N_c}",
            f"n_ratings={self.n_ratings}",
            f"rating_scale={self.rating_scale[0]!r},{self.rating_scale[1]!r}",
            f"hyperparams={json.dumps(self.hyperparams, sort_keys=True)}",
            f"created={self.created}",
            f"seed={self.seed}",
            "sections=" + ",".join(f"{k}:{v}" for k, v in self.sections.items()),
            "end",
        ]


@dataclass
class Snapshot:
    model: CbmfModel
    store: RatingStore
    header: SnapshotHeader

    @property
    def hp(self) -> Hyperparams:
        return Hyperparams(**self.header.hyperparams)


def _arrays(model: CbmfModel, store: RatingStore) -> dict[str, np.ndarray]:
    users, items, values, times = store.arrays()
    return {
        "P": model.factors.P, "Q": model.factors.Q, "mu": np.array([model.factors.mu]),
        "bu": model.biases.bu, "bi": model.biases.bi, "mu_c": model.clusters.mu_c,
        "delta": model.delta, "counts": model.counts, "assignment": model.clusters.assignment,
        "user_ids": store.user_ids, "item_ids": store.item_ids,
        "r_user": users, "r_item": items, "r_value": values, "r_time": times,
    }


def dumps(model: CbmfModel, store: RatingStore, hp: Hyperparams) -> bytes:
    """Serialize `model` with the ratings it was trained on (or has integrated)."""
    if (store.n_users, store.n_items) != (model.n_users, model.n_items):
        raise ValueError("store and model disagree on the user/item universe")
    arrays = _arrays(model, store)
    times = store.arrays()[3]
    header = SnapshotHeader(
        FORMAT_VERSION, model.kind, model.n_users, model.n_items, model.factors.K,
        model.clusters.n_clusters, store.n_ratings, store.rating_scale, asdict(hp),
        # latest rating time rather than wall clock, so saves are reproducible
        int(times.max()) if len(times) else 0, hp.seed,
        {k: int(np.size(arrays[k])) for k in SECTIONS})
    body = bytearray(("\n".join(header.lines()) + "\n").encode("ascii"))
    for k in SECTIONS:
        body += np.ascontiguousarray(arrays[k], dtype="<f8").tobytes()
    return bytes(body) + hashlib.sha256(body).digest()


def save(path: str, model: CbmfModel, store: RatingStore, hp: Hyperparams) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(model, store, hp))


def _parse_header(text: str) -> SnapshotHeader:
    lines = text.split("\n")
    if lines[0] != MAGIC:
        raise SnapshotIntegrityError("not a cbmf snapshot")
    kv = dict(line.split("=", 1) for line in lines[1:] if "=" in line)
    try:
        version = int(kv["format_version"])
    except (KeyError, ValueError):
        raise SnapshotIntegrityError("missing format_version") from None
    if version != FORMAT_VERSION:
        raise SnapshotVersionError(version)
    try:
        lo, hi = (float(x) for x in kv["rating_scale"].split(","))
        sections = {}
        for part in kv["sections"].split(","):
            name, n = part.split(":")
            sections[name] = int(n)
        return SnapshotHeader(
            version, kv["kind"], int(kv["n_users"]), int(kv["n_items"]), int(kv["K"]),
            int(kv["N_c"]), int(kv["n_ratings"]), (lo, hi), json.loads(kv["hyperparams"]),
            int(kv["created"]), int(kv["seed"]), sections)
    except (KeyError, ValueError) as exc:
        raise SnapshotIntegrityError(f"bad header: {exc}") from None


def _check_dims(h: SnapshotHeader) -> None:
    nu, ni, K, nc, nr = h.n_users, h.n_items, h.K, h.N_c, h.n_ratings
    expected = {"P": nu * K, "Q": K * ni, "mu": 1, "bu": nu, "bi": ni, "mu_c": nc,
                "delta": nu * nc, "counts": nu * nc, "assignment": ni, "user_ids": nu,
                "item_ids": ni, "r_user": nr, "r_item": nr, "r_value": nr, "r_time": nr}
    if list(h.sections) != list(SECTIONS) or h.sections != expected:
        raise SnapshotIntegrityError("section lengths do not match the declared dimensions")


def loads(data: bytes) -> Snapshot:
    """Inverse of `dumps`; verifies checksum and lengths before decoding anything."""
    if len(data) < 32 or hashlib.sha256(data[:-32]).digest() != data[-32:]:
        raise SnapshotIntegrityError("checksum mismatch or truncated file")
    end = data.find(b"\nend\n")
    if end < 0:
        raise SnapshotIntegrityError("missing header terminator")
    try:
        header_text = data[:end].decode("ascii")
    except UnicodeDecodeError:
        raise SnapshotIntegrityError("corrupt header") from None
    header = _parse_header(header_text)
    _check_dims(header)
    start = end + len(b"\nend\n")
    payload = 8 * sum(header.sections.values())
    if len(data) != start + payload + 32:
        raise SnapshotIntegrityError(f"expected {start + payload + 32} bytes, found {len(data)}")

    flat = np.frombuffer(data, dtype="<f8", count=payload // 8, offset=start).astype(np.float64)
    arr, pos = {}, 0
    for k in SECTIONS:
        n = header.sections[k]
        arr[k] = flat[pos:pos + n]
        pos += n
    nu, ni, K, nc = header.n_users, header.n_items, header.K, header.N_c

    def ints(name):
        return arr[name].astype(np.int64)

    factors = FactorModel(arr["P"].reshape(nu, K).copy(), arr["Q"].reshape(K, ni).copy(),
                          float(arr["mu"][0]))
    clusters = ClusterMap(ints("assignment"), arr["mu_c"].copy(), nc)
    model = CbmfModel(factors, BiasTable(arr["bu"].copy(), arr["bi"].copy()), clusters,
                      arr["delta"].reshape(nu, nc).copy(), ints("counts").reshape(nu, nc),
                      header.kind)
    user_ids, item_ids = ints("user_ids"), ints("item_ids")
    ratings = [Rating(int(user_ids[u]), int(item_ids[i]), float(v), int(t))
               for u, i, v, t in zip(ints("r_user"), ints("r_item"), arr["r_value"], ints("r_time"))]
    store = RatingStore(ratings, header.rating_scale, user_ids, item_ids)
    return Snapshot(model, store, header)


def load(path: str) -> Snapshot:
    with open(path, "rb") as fh:
        return loads(fh.read())
