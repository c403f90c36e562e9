"""Rating storage, validation, persistence, train/test splitting and threshold statistics."""
from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

MIN_RATING = 1
MAX_RATING = 5


class DataError(ValueError):
    """Malformed or invalid rating data."""


class ParseError(DataError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class RatingRecord:
    user_id: str
    item_id: str
    rating: int
    timestamp: int | None = None


@dataclass(frozen=True)
class AttackThresholds:
    """Profile-size and popularity limits used when forging fake users.

    ``o_u`` is the minimum rating count of a template user, ``o_g`` the maximum
    number of fake ratings, ``o_i`` the popularity floor for selected items and
    ``p_s`` the proportion of selected items.
    """

    o_u: int = 6
    o_g: int = 18
    o_i: int = 8
    p_s: float = 0.3

    def __post_init__(self):
        if self.o_u < 1:
            raise ValueError(f"o_u must be >= 1, got {self.o_u}")
        if self.o_g < self.o_u:
            raise ValueError(f"o_g ({self.o_g}) must be >= o_u ({self.o_u})")
        if self.o_i < 1:
            raise ValueError(f"o_i must be >= 1, got {self.o_i}")
        if not 0.0 < self.p_s < 1.0:
            raise ValueError(f"p_s must lie in (0, 1), got {self.p_s}")

    @property
    def filler_floor(self) -> int:
        return max(1, math.ceil(self.o_i / 3))


class RatingsDataset:
    """Immutable sparse user-item rating store.

    Users and items carry dense integer indices; ratings are kept as COO arrays
    sorted by (user, item). Several datasets may share one id index (for example
    the two halves of a split), in which case some users/items have no ratings.
    """

    def __init__(self, users, items, user_idx, item_idx, ratings, *, validate=True):
        self.users: tuple[str, ...] = tuple(users)
        self.items: tuple[str, ...] = tuple(items)
        u = np.asarray(user_idx, dtype=np.int64)
        i = np.asarray(item_idx, dtype=np.int64)
        r = np.asarray(ratings, dtype=np.int64)
        if not (u.shape == i.shape == r.shape) or u.ndim != 1:
            raise DataError("user, item and rating arrays must be 1-D and equally long")
        order = np.lexsort((i, u))
        self.u, self.i, self.r = u[order], i[order], r[order]
        for a in (self.u, self.i, self.r):
            a.setflags(write=False)
        self.user_index = {uid: k for k, uid in enumerate(self.users)}
        self.item_index = {iid: k for k, iid in enumerate(self.items)}
        if validate:
            self._validate()
        n_u, n_i = len(self.users), len(self.items)
        self.per_user_count = np.bincount(self.u, minlength=n_u)
        self.per_item_count = np.bincount(self.i, minlength=n_i)
        sums = np.bincount(self.i, weights=self.r, minlength=n_i)
        sq = np.bincount(self.i, weights=self.r.astype(float) ** 2, minlength=n_i)
        with np.errstate(invalid="ignore", divide="ignore"):
            self.per_item_mean = sums / self.per_item_count
            self.per_item_var = sq / self.per_item_count - self.per_item_mean**2
        self.per_item_var = np.where(self.per_item_count > 0, np.maximum(self.per_item_var, 0.0), np.nan)
        for a in (self.per_user_count, self.per_item_count, self.per_item_mean, self.per_item_var):
            a.setflags(write=False)
        self._csr = None

    def _validate(self):
        if len(set(self.users)) != len(self.users) or len(set(self.items)) != len(self.items):
            raise DataError("duplicate ids in user or item index")
        if self.u.size:
            if self.u.min() < 0 or self.u.max() >= len(self.users):
                raise DataError("user index out of range")
            if self.i.min() < 0 or self.i.max() >= len(self.items):
                raise DataError("item index out of range")
            bad = (self.r < MIN_RATING) | (self.r > MAX_RATING)
            if bad.any():
                k = int(np.flatnonzero(bad)[0])
                raise DataError(
                    f"rating {self.r[k]} outside [{MIN_RATING},{MAX_RATING}] for "
                    f"({self.users[self.u[k]]}, {self.items[self.i[k]]})"
                )
            dup = (np.diff(self.u) == 0) & (np.diff(self.i) == 0)
            if dup.any():
                k = int(np.flatnonzero(dup)[0])
                raise DataError(f"duplicate (user, item) pair ({self.users[self.u[k]]}, {self.items[self.i[k]]})")

    # construction helpers

    @classmethod
    def from_records(cls, records, users=None, items=None) -> "RatingsDataset":
        users = list(users) if users is not None else []
        items = list(items) if items is not None else []
        uix = {x: k for k, x in enumerate(users)}
        iix = {x: k for k, x in enumerate(items)}
        us, its, rs = [], [], []
        for rec in records:
            if isinstance(rec, RatingRecord):
                uid, iid, rating = rec.user_id, rec.item_id, rec.rating
            else:
                uid, iid, rating = rec[0], rec[1], rec[2]
            if uid not in uix:
                uix[uid] = len(users)
                users.append(uid)
            if iid not in iix:
                iix[iid] = len(items)
                items.append(iid)
            us.append(uix[uid])
            its.append(iix[iid])
            rs.append(rating)
        return cls(users, items, us, its, rs)

    def with_ratings(self, user_idx, item_idx, ratings) -> "RatingsDataset":
        """A dataset over the same id index holding a different set of ratings."""
        return RatingsDataset(self.users, self.items, user_idx, item_idx, ratings, validate=False)

    # views

    def __len__(self) -> int:
        return int(self.r.size)

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def n_items(self) -> int:
        return len(self.items)

    def csr(self) -> sp.csr_matrix:
        """User x item rating matrix (read-only by convention)."""
        if self._csr is None:
            self._csr = sp.csr_matrix(
                (self.r.astype(np.float64), (self.u, self.i)), shape=(self.n_users, self.n_items)
            )
        return self._csr

    def user_items(self, u: int) -> np.ndarray:
        m = self.csr()
        return m.indices[m.indptr[u] : m.indptr[u + 1]]

    def user_ratings(self, u: int) -> np.ndarray:
        m = self.csr()
        return m.data[m.indptr[u] : m.indptr[u + 1]]

    def rating(self, user_id: str, item_id: str) -> int | None:
        u, i = self.user_index[user_id], self.item_index[item_id]
        items = self.user_items(u)
        k = np.searchsorted(items, i)
        if k < items.size and items[k] == i:
            return int(self.user_ratings(u)[k])
        return None

    def records(self):
        for u, i, r in zip(self.u.tolist(), self.i.tolist(), self.r.tolist()):
            yield RatingRecord(self.users[u], self.items[i], r)

    def global_mean(self) -> float:
        return float(self.r.mean()) if self.r.size else float("nan")

    def global_var(self) -> float:
        return float(self.r.var()) if self.r.size else float("nan")

    def item_mean_map(self) -> dict[str, float]:
        return {self.items[k]: float(m) for k, m in enumerate(self.per_item_mean) if self.per_item_count[k] > 0}

    def same_ratings(self, other: "RatingsDataset") -> bool:
        return set(self.records()) == set(other.records())


@dataclass(frozen=True)
class SplitDataset:
    train: RatingsDataset
    test: RatingsDataset
    train_fraction: float


def _looks_numeric(field: str) -> bool:
    try:
        float(field)
    except ValueError:
        return False
    return True


def load_ratings(path, format: str = "tsv") -> RatingsDataset:
    """Read ``user, item, rating[, timestamp]`` rows; the header line is optional."""
    if format not in ("tsv", "csv"):
        raise ValueError(f"unknown format {format!r}")
    delim = "\t" if format == "tsv" else ","
    records = []
    seen = set()
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter=delim), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 3:
                raise ParseError(f"expected at least 3 fields, got {len(row)}", lineno)
            uid, iid, raw = row[0].strip(), row[1].strip(), row[2].strip()
            if lineno == 1 and not _looks_numeric(raw):
                continue  # header
            try:
                value = float(raw)
            except ValueError:
                raise ParseError(f"non-numeric rating {raw!r}", lineno) from None
            if value != int(value) or not MIN_RATING <= value <= MAX_RATING:
                raise DataError(f"line {lineno}: rating {raw} outside {{1..5}}")
            ts = None
            if len(row) > 3 and row[3].strip():
                try:
                    ts = int(float(row[3]))
                except ValueError:
                    raise ParseError(f"bad timestamp {row[3]!r}", lineno) from None
            if (uid, iid) in seen:
                raise DataError(f"line {lineno}: duplicate (user, item) pair ({uid}, {iid})")
            seen.add((uid, iid))
            records.append(RatingRecord(uid, iid, int(value), ts))
    return RatingsDataset.from_records(records)


def save_ratings(dataset: RatingsDataset, path, format: str = "tsv") -> None:
    delim = "\t" if format == "tsv" else ","
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delim, lineterminator="\n")
        for rec in dataset.records():
            w.writerow((rec.user_id, rec.item_id, rec.rating))


def split(dataset: RatingsDataset, train_fraction: float, seed: int) -> SplitDataset:
    """Per-user random split; each user keeps ``round(n * fraction)`` ratings (at least one) in train."""
    if not 0.0 < train_fraction <= 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1], got {train_fraction}")
    rng = np.random.default_rng(seed)
    in_train = np.zeros(len(dataset), dtype=bool)
    starts = np.concatenate(([0], np.cumsum(dataset.per_user_count)))
    for u in range(dataset.n_users):
        lo, hi = starts[u], starts[u + 1]
        n = hi - lo
        if n == 0:
            continue
        n_train = n if n == 1 else max(1, int(math.floor(n * train_fraction + 0.5)))
        chosen = rng.permutation(n)[:n_train]
        in_train[lo + chosen] = True
    d = dataset
    train = d.with_ratings(d.u[in_train], d.i[in_train], d.r[in_train])
    test = d.with_ratings(d.u[~in_train], d.i[~in_train], d.r[~in_train])
    return SplitDataset(train, test, train_fraction)


def rating_histograms(dataset: RatingsDataset) -> tuple[dict[int, int], dict[int, int]]:
    """Maps ``rating count -> number of users`` and ``rating count -> number of items``."""
    users = Counter(int(c) for c in dataset.per_user_count if c > 0)
    items = Counter(int(c) for c in dataset.per_item_count if c > 0)
    return dict(sorted(users.items())), dict(sorted(items.items()))


def derive_og(dataset: RatingsDataset) -> int:
    """Smallest per-user rating count covering at least half of all users (cumulatively)."""
    counts = dataset.per_user_count[dataset.per_user_count > 0]
    if counts.size == 0:
        raise DataError("cannot derive o_g from an empty dataset")
    values, freq = np.unique(counts, return_counts=True)
    cum = np.cumsum(freq)
    k = int(np.searchsorted(cum * 2, counts.size, side="left"))
    return int(values[k])
