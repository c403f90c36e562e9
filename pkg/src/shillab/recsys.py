"""Victim recommenders: BPR matrix factorisation and its adversarially trained variant (APR)."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .dataset import RatingsDataset
from .gan import NumericError


@dataclass(frozen=True)
class AdversarialConfig:
    eps: float = 0.5
    weight: float = 1.0


@dataclass(frozen=True)
class RecTrainConfig:
    d: int = 32
    learning_rate: float = 0.05
    epochs: int = 30
    negatives_per_positive: int = 1
    l2: float = 1e-4
    init_std: float = 0.1
    adversarial: AdversarialConfig | None = None
    seed: int = 0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.negatives_per_positive < 1:
            raise ValueError("negatives_per_positive must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MFModel:
    users: tuple[str, ...]
    items: tuple[str, ...]
    user_vectors: np.ndarray
    item_vectors: np.ndarray

    @property
    def d(self) -> int:
        return self.user_vectors.shape[1]

    def score(self, u: int, i: int) -> float:
        return float(self.user_vectors[u] @ self.item_vectors[i])

    def scores(self, u: int) -> np.ndarray:
        return self.item_vectors @ self.user_vectors[u]


def sample_triples(data: RatingsDataset, n_neg: int, rng: np.random.Generator):
    """Shuffled (user, positive, negative) triples; negatives are items the user has not rated."""
    u = np.repeat(data.u, n_neg)
    i = np.repeat(data.i, n_neg)
    order = rng.permutation(u.size)
    u, i = u[order], i[order]
    n_items = data.n_items
    rated = data.u * n_items + data.i  # sorted because data is (u, i)-sorted
    j = rng.integers(n_items, size=u.size)
    bad = np.isin(u * n_items + j, rated, assume_unique=False)
    while bad.any():
        j[bad] = rng.integers(n_items, size=int(bad.sum()))
        bad[bad] = np.isin(u[bad] * n_items + j[bad], rated)
    return u.astype(np.int64), i.astype(np.int64), j.astype(np.int64)


def _check_trainable(data: RatingsDataset):
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    full = data.per_user_count[data.u] >= data.n_items
    if full.any():
        raise ValueError("a user has rated every item; no negatives can be sampled")


def _train(data, config, adv_eps, adv_weight, backend=None, record_norms=False):
    _check_trainable(data)
    sgd = kernels.BACKENDS[backend] if backend else kernels.sgd_epoch
    rng = np.random.default_rng(config.seed)
    P = rng.normal(0.0, config.init_std, (data.n_users, config.d))
    Q = rng.normal(0.0, config.init_std, (data.n_items, config.d))
    norms_log = []
    losses = []
    for epoch in range(1, config.epochs + 1):
        u, i, j = sample_triples(data, config.negatives_per_positive, rng)
        norms = np.zeros((u.size, 3)) if record_norms else None
        loss = sgd(P, Q, u, i, j, config.learning_rate, config.l2, adv_eps, adv_weight, norms)
        if not math.isfinite(loss) or not (np.isfinite(P).all() and np.isfinite(Q).all()):
            raise NumericError("recommender SGD", epoch)
        losses.append(loss / u.size)
        if record_norms:
            norms_log.append(norms)
    model = MFModel(data.users, data.items, P, Q)
    model.loss_history = losses
    if record_norms:
        model.perturbation_norms = norms_log
    return model


def train_bpr(train: RatingsDataset, config: RecTrainConfig, backend: str | None = None) -> MFModel:
    """Pairwise ranking MF: rated pairs are positives, unrated items negatives."""
    return _train(train, config, 0.0, 0.0, backend)


def train_apr(train: RatingsDataset, config: RecTrainConfig, backend: str | None = None, record_norms=False) -> MFModel:
    """BPR plus, per triple, a loss term under the worst-case embedding perturbation of norm ``eps``."""
    adv = config.adversarial or AdversarialConfig()
    return _train(train, config, adv.eps, adv.weight, backend, record_norms)


def recommend_top_n(model: MFModel, user, n: int, exclude=()) -> list[int]:
    """Indices of the ``n`` best-scoring items outside ``exclude``; ties go to the lower item index."""
    if isinstance(user, str):
        try:
            user = model.users.index(user)
        except ValueError:
            raise KeyError(f"unknown user {user!r}") from None
    if not 0 <= user < len(model.users):
        raise KeyError(f"unknown user {user!r}")
    s = model.scores(user)
    mask = np.ones(s.size, dtype=bool)
    mask[list(exclude)] = False
    cand = np.flatnonzero(mask)
    order = np.lexsort((cand, -s[cand]))
    return cand[order[:n]].tolist()


def recommend_all(model: MFModel, data: RatingsDataset, n: int = 10, users=None) -> dict[int, list[int]]:
    """Top-``n`` lists for ``users`` (default: all), excluding each user's rated items in ``data``."""
    users = range(data.n_users) if users is None else users
    S = model.user_vectors @ model.item_vectors.T
    m = data.csr()
    out = {}
    for u in users:
        s = S[u].copy()
        s[m.indices[m.indptr[u] : m.indptr[u + 1]]] = -np.inf
        k = min(n, int(np.isfinite(s).sum()))
        if k == 0:
            out[u] = []
            continue
        part = np.argpartition(-s, k - 1)[:k] if k < s.size else np.arange(s.size)
        # include ties at the cutoff so ordering by (score, index) is exact
        cut = s[part].min()
        cand = np.flatnonzero(s >= cut)
        order = np.lexsort((cand, -s[cand]))
        out[u] = cand[order[:k]].tolist()
    return out
