"""Item-item co-rating graph and per-fake-user item sampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .dataset import AttackThresholds, DataError, RatingsDataset


class SamplingError(DataError):
    pass


class ItemItemGraph:
    """Symmetric co-rating counts between items plus per-item popularity.

    ``adjacency[a, b]`` is the number of users who rated both ``a`` and ``b``;
    the diagonal is empty.
    """

    def __init__(self, items, adjacency: sp.csr_matrix, popularity: np.ndarray):
        self.items = tuple(items)
        self.adjacency = adjacency.tocsr()
        self.adjacency.sort_indices()
        self.popularity = np.asarray(popularity, dtype=np.int64)

    @property
    def n_items(self) -> int:
        return len(self.items)

    def neighbors(self, item: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[item] : a.indptr[item + 1]]

    def co_count(self, a: int, b: int) -> int:
        return int(self.adjacency[a, b])

    def n_edges(self) -> int:
        return self.adjacency.nnz // 2

    def edges(self):
        """Yield ``(a, b, count)`` with ``a < b``."""
        coo = sp.triu(self.adjacency, k=1).tocoo()
        order = np.lexsort((coo.col, coo.row))
        for a, b, c in zip(coo.row[order], coo.col[order], coo.data[order]):
            yield int(a), int(b), int(c)

    def export_edges(self, path) -> None:
        with open(path, "w") as fh:
            for a, b, c in self.edges():
                fh.write(f"{self.items[a]}\t{self.items[b]}\t{c}\n")


def build_graph(train: RatingsDataset) -> ItemItemGraph:
    b = train.csr().copy()
    b.data[:] = 1.0
    co = (b.T @ b).tocsr()
    co.setdiag(0)
    co.eliminate_zeros()
    co = co.astype(np.int64)
    return ItemItemGraph(train.items, co, train.per_item_count)


def eligible_candidates(graph: ItemItemGraph, role: str, thresholds: AttackThresholds) -> np.ndarray:
    """Sorted item indices meeting the popularity floor of ``role`` (selected or filler)."""
    if role == "selected":
        floor = thresholds.o_i
    elif role == "filler":
        floor = thresholds.filler_floor
    else:
        raise ValueError(f"unknown role {role!r}")
    return np.flatnonzero(graph.popularity >= floor)


@dataclass(frozen=True)
class SampledProfileItems:
    template_user: int
    k: int
    selected: tuple[int, ...]
    filler: tuple[int, ...]

    @property
    def items(self) -> tuple[int, ...]:
        return self.selected + self.filler


def n_selected(k: int, p_s: float) -> int:
    # round-half-up so the count does not depend on banker's rounding
    return min(k, max(1, int(np.floor(k * p_s + 0.5))))


def _supplement(graph, rng, chosen, pool_mask, need, exclude_mask):
    """Draw ``need`` items from ``pool_mask``, neighbours of ``chosen`` first."""
    picked = []
    if need <= 0:
        return picked
    used = exclude_mask.copy()
    used[list(chosen)] = True
    near = np.zeros(graph.n_items, dtype=bool)
    for it in chosen:
        near[graph.neighbors(it)] = True
    first = np.flatnonzero(near & pool_mask & ~used)
    take = min(need, first.size)
    if take:
        picked.extend(int(x) for x in rng.choice(first, size=take, replace=False))
        used[picked] = True
    rest = need - take
    if rest:
        second = np.flatnonzero(pool_mask & ~used)
        if second.size < rest:
            return None
        picked.extend(int(x) for x in rng.choice(second, size=rest, replace=False))
    return picked


def eligible_templates(dataset: RatingsDataset, thresholds: AttackThresholds) -> np.ndarray:
    return np.flatnonzero(dataset.per_user_count >= thresholds.o_u)


def sample_profile_items(
    graph: ItemItemGraph,
    dataset: RatingsDataset,
    thresholds: AttackThresholds,
    og_effective: int,
    rng: np.random.Generator,
    exclude=(),
) -> SampledProfileItems:
    """Pick a template user and draw the selected/filler items of one fake profile.

    Items listed in ``exclude`` (normally the attack targets) are never drawn.
    """
    templates = eligible_templates(dataset, thresholds)
    if templates.size == 0:
        raise SamplingError(f"no user has at least o_u={thresholds.o_u} ratings")
    u = int(templates[rng.integers(templates.size)])
    own = dataset.user_items(u)
    k = int(min(own.size, og_effective))
    n_sel = n_selected(k, thresholds.p_s)
    n_fill = k - n_sel

    excl = np.zeros(graph.n_items, dtype=bool)
    excl[list(exclude)] = True
    sel_mask = graph.popularity >= thresholds.o_i
    fill_mask = graph.popularity >= thresholds.filler_floor

    own = own[~excl[own]]
    cand = own[sel_mask[own]]
    take = min(n_sel, cand.size)
    selected = [int(x) for x in rng.choice(cand, size=take, replace=False)] if take else []
    if take < n_sel:
        sup = _supplement(graph, rng, selected, sel_mask, n_sel - take, excl | _mask(graph, own))
        if sup is None:
            raise SamplingError("not enough items meet the selected-item popularity floor")
        selected += sup

    chosen = set(selected)
    cand = np.array([x for x in own if fill_mask[x] and int(x) not in chosen], dtype=np.int64)
    take = min(n_fill, cand.size)
    filler = [int(x) for x in rng.choice(cand, size=take, replace=False)] if take else []
    if take < n_fill:
        sup = _supplement(graph, rng, selected + filler, fill_mask, n_fill - take, excl | _mask(graph, own))
        if sup is None:
            raise SamplingError("not enough items meet the filler-item popularity floor")
        filler += sup
    return SampledProfileItems(u, k, tuple(selected), tuple(filler))


def _mask(graph, idx):
    m = np.zeros(graph.n_items, dtype=bool)
    m[idx] = True
    return m


def check_sampled(s: SampledProfileItems, graph: ItemItemGraph, thresholds: AttackThresholds, og_effective: int):
    """Raise ``AssertionError`` naming the first violated profile invariant."""
    items = s.selected + s.filler
    assert len(items) == s.k, "size mismatch"
    assert len(set(items)) == len(items), "duplicate item"
    assert s.k <= og_effective, "k above og_effective"
    assert s.k >= min(thresholds.o_u, og_effective), "k below o_u"
    assert all(graph.popularity[i] >= thresholds.o_i for i in s.selected), "selected below floor"
    assert all(graph.popularity[i] >= thresholds.filler_floor for i in s.filler), "filler below floor"
