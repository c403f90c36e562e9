"""Seeded synthetic rating data at desk scale (MovieLens-100k-like shape)."""
from __future__ import annotations

import numpy as np

from .dataset import RatingsDataset


def synthetic_ratings(
    n_users: int = 600,
    n_items: int = 800,
    mean_count: float = 40.0,
    min_count: int = 8,
    n_low_targets: int = 20,
    dim: int = 8,
    seed: int = 0,
) -> RatingsDataset:
    """Latent-factor ratings with Zipf item popularity and log-normal user activity.

    The last ``n_low_targets`` items are rated by a handful of users with mostly
    one-star ratings so that their mean stays below 2; they serve as promotion
    targets.
    """
    rng = np.random.default_rng(seed)
    n_regular = n_items - n_low_targets
    pop = 1.0 / np.arange(1, n_regular + 1) ** 0.8
    pop = pop[rng.permutation(n_regular)]
    p = rng.normal(0, 1, (n_users, dim)) / np.sqrt(dim)
    q = rng.normal(0, 1, (n_regular, dim))
    item_bias = rng.normal(0, 0.5, n_regular)
    user_bias = rng.normal(0, 0.4, n_users)
    sigma = 0.9
    counts = rng.lognormal(np.log(mean_count) - sigma**2 / 2, sigma, n_users).astype(int)
    counts = np.clip(counts, min_count, n_regular // 2)

    us, its, rs = [], [], []
    for u in range(n_users):
        aff = q @ p[u]
        w = pop * np.exp(0.7 * aff)
        w /= w.sum()
        items = rng.choice(n_regular, size=counts[u], replace=False, p=w)
        raw = 3.3 + item_bias[items] + user_bias[u] + 0.8 * aff[items] + rng.normal(0, 0.7, items.size)
        us.extend([u] * items.size)
        its.extend(items.tolist())
        rs.extend(np.clip(np.rint(raw), 1, 5).astype(int).tolist())

    for t in range(n_low_targets):
        item = n_regular + t
        raters = rng.choice(n_users, size=int(rng.integers(2, 7)), replace=False)
        vals = rng.choice([1, 1, 1, 2], size=raters.size)
        if vals.mean() >= 2:
            vals[:] = 1
        us.extend(raters.tolist())
        its.extend([item] * raters.size)
        rs.extend(vals.tolist())

    users = [f"u{u}" for u in range(n_users)]
    items = [f"i{i}" for i in range(n_items)]
    return RatingsDataset(users, items, us, its, rs)
