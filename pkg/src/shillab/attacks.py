"""Fake-profile construction (GOAT and handcrafted baselines), target selection and injection."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import MAX_RATING, MIN_RATING, AttackThresholds, DataError, RatingsDataset
from .itemgraph import ItemItemGraph, SampledProfileItems, SamplingError, sample_profile_items

KINDS = ("GOAT", "Ave", "Ran", "Band", "UM")
HANDCRAFTED = ("Ave", "Ran", "Band")
PARTS = ("selected", "filler", "target")


class AttackError(DataError):
    pass


@dataclass
class FakeProfile:
    profile_id: str
    entries: dict[str, int]
    part_of: dict[str, str]
    scheme: str = ""

    def items_in(self, part: str) -> list[str]:
        return [i for i, p in self.part_of.items() if p == part]

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class AttackConfig:
    kind: str
    injection_fraction: float
    targets: tuple[str, ...]
    target_rating: int = 4
    thresholds: AttackThresholds = field(default_factory=AttackThresholds)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}; expected one of {KINDS}")
        if not 0.0 < self.injection_fraction <= 0.2:
            raise ValueError(f"injection_fraction must lie in (0, 0.2], got {self.injection_fraction}")
        if not self.targets:
            raise ValueError("at least one target item is required")
        if not MIN_RATING <= self.target_rating <= MAX_RATING:
            raise ValueError(f"target_rating must lie in [1, 5], got {self.target_rating}")


def discretize(values) -> np.ndarray:
    """Clip to the rating scale and round to the nearest star, halves rounding up."""
    v = np.clip(np.asarray(values, dtype=np.float64), MIN_RATING, MAX_RATING)
    return np.floor(v + 0.5).astype(np.int64)


def select_targets(dataset: RatingsDataset, n: int, rng: np.random.Generator, max_mean: float = 2.0) -> list[str]:
    """``n`` distinct rated items whose mean rating is below ``max_mean``, drawn uniformly."""
    pool = np.flatnonzero((dataset.per_item_count >= 1) & (dataset.per_item_mean < max_mean))
    if pool.size < n:
        raise AttackError(f"only {pool.size} items have mean rating < {max_mean}; {n} targets requested")
    picked = np.sort(rng.choice(pool, size=n, replace=False))
    return [dataset.items[i] for i in picked]


def n_profiles(fraction: float, n_real_users: int) -> int:
    return math.ceil(fraction * n_real_users - 1e-9)


# ---------------------------------------------------------------- handcrafted baselines


def baseline_items(
    kind: str,
    sampled: SampledProfileItems,
    graph: ItemItemGraph,
    thresholds: AttackThresholds,
    rng: np.random.Generator,
    exclude=(),
) -> SampledProfileItems:
    """Re-draw the item set of a baseline profile, keeping the sampler's budget (k and the split).

    Ave and Ran pick random eligible items; Band takes the most popular
    selected-eligible items (ties by index) and random filler items.
    """
    n_sel, n_fill = len(sampled.selected), len(sampled.filler)
    blocked = np.zeros(graph.n_items, dtype=bool)
    blocked[list(exclude)] = True
    sel_pool = np.flatnonzero((graph.popularity >= thresholds.o_i) & ~blocked)
    if kind == "Band":
        order = np.lexsort((sel_pool, -graph.popularity[sel_pool]))
        selected = sel_pool[order[:n_sel]]
    elif kind in ("Ave", "Ran"):
        if sel_pool.size < n_sel:
            raise SamplingError("not enough items meet the selected-item popularity floor")
        selected = rng.choice(sel_pool, size=n_sel, replace=False)
    else:
        raise ValueError(f"{kind!r} is not a handcrafted baseline")
    if selected.size < n_sel:
        raise SamplingError("not enough items meet the selected-item popularity floor")
    blocked[selected] = True
    fill_pool = np.flatnonzero((graph.popularity >= thresholds.filler_floor) & ~blocked)
    if fill_pool.size < n_fill:
        raise SamplingError("not enough items meet the filler-item popularity floor")
    filler = rng.choice(fill_pool, size=n_fill, replace=False)
    return SampledProfileItems(
        sampled.template_user, sampled.k, tuple(int(x) for x in selected), tuple(int(x) for x in filler)
    )


def baseline_draws(
    kind: str, sampled: SampledProfileItems, dataset: RatingsDataset, rng: np.random.Generator
) -> np.ndarray:
    """Continuous normal draws for ``sampled.items`` before clipping and rounding.

    Ran uses the global rating mean and spread; Ave and Band use each item's own.
    """
    items = np.array(sampled.items, dtype=np.int64)
    if kind == "Ran":
        mu = np.full(items.size, dataset.global_mean())
        sd = np.full(items.size, math.sqrt(dataset.global_var()))
    elif kind in ("Ave", "Band"):
        mu = dataset.per_item_mean[items]
        sd = np.sqrt(np.nan_to_num(dataset.per_item_var[items]))
    else:
        raise ValueError(f"unknown baseline {kind!r}")
    if np.isnan(mu).any():
        raise AttackError("an item without ratings has no mean")
    return mu + sd * rng.standard_normal(items.size)


def baseline_ratings(
    kind: str, sampled: SampledProfileItems, dataset: RatingsDataset, rng: np.random.Generator
) -> np.ndarray:
    """Integer ratings for ``sampled.items`` (selected then filler) under a handcrafted scheme."""
    if kind == "UM":
        kind = HANDCRAFTED[int(rng.integers(3))]
    out = discretize(baseline_draws(kind, sampled, dataset, rng))
    if kind == "Band":
        out[: len(sampled.selected)] = MAX_RATING
    return out


# ---------------------------------------------------------------- assembly


def assemble_profile(
    profile_id: str,
    sampled: SampledProfileItems,
    ratings,
    config: AttackConfig,
    dataset: RatingsDataset,
    scheme: str | None = None,
) -> FakeProfile:
    """Combine sampled items, their (possibly continuous) ratings and the targets into one profile."""
    ratings = np.asarray(ratings, dtype=np.float64)
    if ratings.size != sampled.k:
        raise AttackError(f"{ratings.size} ratings for {sampled.k} sampled items")
    target_set = set(config.targets)
    entries, parts = {}, {}
    stars = discretize(ratings)
    n_sel = len(sampled.selected)
    for pos, (item, r) in enumerate(zip(sampled.items, stars.tolist())):
        iid = dataset.items[item]
        if iid in target_set:
            raise AttackError(f"sampled item {iid} is also a target")
        entries[iid] = r
        parts[iid] = "selected" if pos < n_sel else "filler"
    for iid in config.targets:
        entries[iid] = config.target_rating
        parts[iid] = "target"
    return FakeProfile(profile_id, entries, parts, scheme or config.kind)


def profile_streams(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def build_attack(
    config: AttackConfig,
    dataset: RatingsDataset,
    graph: ItemItemGraph,
    generator=None,
    n: int | None = None,
    id_prefix: str = "fake",
    og_effective: int | None = None,
) -> list[FakeProfile]:
    """Forge the fake profiles of one attack run.

    ``n`` defaults to ``ceil(injection_fraction * #users with ratings)``.
    GOAT requires a trained ``generator`` (``gan.GeneratorParams``).
    """
    from .gan import generate_ratings

    if n is None:
        n = n_profiles(config.injection_fraction, int((dataset.per_user_count > 0).sum()))
    if config.kind == "GOAT" and generator is None:
        raise AttackError("GOAT needs a trained generator")
    missing = [t for t in config.targets if t not in dataset.item_index]
    if missing:
        raise AttackError(f"unknown target items {missing}")
    exclude = [dataset.item_index[t] for t in config.targets]
    th = config.thresholds
    og = th.o_g if og_effective is None else og_effective
    width = max(4, len(str(max(n - 1, 0))))
    profiles = []
    for p, rng in enumerate(profile_streams(config.seed, n)):
        pid = f"{id_prefix}{p:0{width}d}"
        sampled = sample_profile_items(graph, dataset, th, og, rng, exclude=exclude)
        kind = config.kind
        if kind == "UM":
            kind = HANDCRAFTED[int(rng.integers(3))]
        if kind == "GOAT":
            ratings = generate_ratings(generator, sampled, dataset, rng)
        else:
            sampled = baseline_items(kind, sampled, graph, th, rng, exclude)
            ratings = baseline_ratings(kind, sampled, dataset, rng)
        profiles.append(assemble_profile(pid, sampled, ratings, config, dataset, scheme=kind))
    return profiles


def inject(dataset: RatingsDataset, profiles) -> tuple[RatingsDataset, set[str]]:
    """Append fake users; returns the poisoned dataset and the set of fake user ids."""
    fake_ids = [p.profile_id for p in profiles]
    clash = set(fake_ids) & set(dataset.user_index)
    if clash:
        raise AttackError(f"profile ids collide with real users: {sorted(clash)[:5]}")
    if len(set(fake_ids)) != len(fake_ids):
        raise AttackError("duplicate profile ids")
    if not profiles:
        return dataset, set()
    users = list(dataset.users) + fake_ids
    us, its, rs = [dataset.u], [dataset.i], [dataset.r]
    base = dataset.n_users
    for k, p in enumerate(profiles):
        try:
            idx = [dataset.item_index[i] for i in p.entries]
        except KeyError as exc:
            raise AttackError(f"profile {p.profile_id} rates unknown item {exc.args[0]}") from None
        us.append(np.full(len(idx), base + k))
        its.append(np.array(idx, dtype=np.int64))
        rs.append(np.array(list(p.entries.values()), dtype=np.int64))
    poisoned = RatingsDataset(users, dataset.items, np.concatenate(us), np.concatenate(its), np.concatenate(rs))
    return poisoned, set(fake_ids)


# ---------------------------------------------------------------- persistence


def export_profiles(profiles, ratings_path, parts_path, format: str = "tsv") -> None:
    delim = "\t" if format == "tsv" else ","
    with open(ratings_path, "w", newline="") as fr, open(parts_path, "w", newline="") as fp:
        wr = csv.writer(fr, delimiter=delim, lineterminator="\n")
        wp = csv.writer(fp, delimiter="\t", lineterminator="\n")
        for p in profiles:
            for iid, r in p.entries.items():
                wr.writerow((p.profile_id, iid, r))
                wp.writerow((p.profile_id, iid, p.part_of[iid]))


def import_profiles(ratings_path, parts_path, format: str = "tsv") -> list[FakeProfile]:
    delim = "\t" if format == "tsv" else ","
    parts: dict[tuple[str, str], str] = {}
    with open(parts_path, newline="") as fh:
        for row in csv.reader(fh, delimiter="\t"):
            if row:
                if row[2] not in PARTS:
                    raise DataError(f"unknown part label {row[2]!r}")
                parts[(row[0], row[1])] = row[2]
    profiles: dict[str, FakeProfile] = {}
    with open(ratings_path, newline="") as fh:
        for row in csv.reader(fh, delimiter=delim):
            if not row:
                continue
            pid, iid, r = row[0], row[1], int(row[2])
            p = profiles.setdefault(pid, FakeProfile(pid, {}, {}))
            p.entries[iid] = r
            p.part_of[iid] = parts.get((pid, iid), "filler")
    return list(profiles.values())
