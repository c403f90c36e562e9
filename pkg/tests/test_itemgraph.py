import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_dataset
from shillab.dataset import AttackThresholds, derive_og
from shillab.itemgraph import (
    SamplingError,
    build_graph,
    check_sampled,
    eligible_candidates,
    n_selected,
    sample_profile_items,
)
from shillab.synthetic import synthetic_ratings


def random_rows(rng, n_users, n_items, density):
    return [(f"u{u:02d}", f"i{i:02d}", 3) for u in range(n_users) for i in range(n_items) if rng.random() < density]


def test_single_pair_edge():
    g = build_graph(make_dataset([("u", "a", 4), ("u", "b", 2)]))
    assert list(g.edges()) == [(0, 1, 1)]
    assert g.co_count(0, 1) == g.co_count(1, 0) == 1


def test_no_shared_rater_no_edge():
    g = build_graph(make_dataset([("u", "a", 4), ("v", "b", 2)]))
    assert g.n_edges() == 0 and g.co_count(0, 1) == 0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_adjacency_matches_pairwise_intersection(seed):
    rng = np.random.default_rng(seed)
    rows = random_rows(rng, 12, int(rng.integers(2, 50)), 0.25)
    if not rows:
        return
    d = make_dataset(rows)
    g = build_graph(d)
    raters = [set(d.u[d.i == i]) for i in range(d.n_items)]
    A = g.adjacency.toarray()
    for a in range(d.n_items):
        for b in range(d.n_items):
            expect = 0 if a == b else len(raters[a] & raters[b])
            assert A[a, b] == expect


def test_export_edges(tmp_path):
    d = make_dataset([("u", "a", 4), ("u", "b", 2), ("v", "a", 1), ("v", "b", 5)])
    build_graph(d).export_edges(tmp_path / "e.tsv")
    assert (tmp_path / "e.tsv").read_text().splitlines()[-1] == "a\tb\t2"


def test_eligibility_floors():
    rows = [(f"u{k}", "i1", 3) for k in range(9)] + [(f"u{k}", "i2", 3) for k in range(3)] + [("u0", "i3", 3), ("u1", "i3", 3)]
    d = make_dataset(rows)
    g = build_graph(d)
    th = AttackThresholds(1, 2, 8, 0.3)
    names = lambda idx: {d.items[i] for i in idx}
    assert names(eligible_candidates(g, "selected", th)) == {"i1"}
    assert names(eligible_candidates(g, "filler", th)) == {"i1", "i2"}
    th1 = AttackThresholds(1, 2, 1, 0.3)
    assert names(eligible_candidates(g, "selected", th1)) == names(eligible_candidates(g, "filler", th1)) == {"i1", "i2", "i3"}
    with pytest.raises(ValueError):
        eligible_candidates(g, "target", th)


@settings(max_examples=30, deadline=None)
@given(pops=st.lists(st.integers(0, 12), min_size=1, max_size=30), oi=st.integers(1, 10))
def test_eligibility_vs_scan(pops, oi):
    rows = [(f"u{k:02d}", f"i{i:02d}", 3) for i, p in enumerate(pops) for k in range(p)]
    if not rows:
        return
    d = make_dataset(rows)
    g = build_graph(d)
    th = AttackThresholds(1, 1, oi, 0.3)
    sel = [i for i in range(d.n_items) if d.per_item_count[i] >= oi]
    fill = [i for i in range(d.n_items) if d.per_item_count[i] >= max(1, -(-oi // 3))]
    assert eligible_candidates(g, "selected", th).tolist() == sel
    assert eligible_candidates(g, "filler", th).tolist() == fill


def test_n_selected_rounding():
    assert n_selected(6, 1 / 3) == 2
    assert n_selected(5, 0.3) == 2  # 1.5 rounds up
    assert n_selected(1, 0.3) == 1
    assert n_selected(18, 0.3) == 5


@pytest.fixture(scope="module")
def desk():
    d = synthetic_ratings(n_users=200, n_items=300, seed=11)
    th = AttackThresholds(6, derive_og(d), 8, 0.3)
    return d, build_graph(d), th


def test_k_capped_by_og_effective(desk):
    d, g, th = desk
    rng = np.random.default_rng(0)
    for _ in range(50):
        s = sample_profile_items(g, d, th, th.o_u, rng)
        assert s.k == th.o_u


def test_sampling_deterministic(desk):
    d, g, th = desk
    a = sample_profile_items(g, d, th, th.o_g, np.random.default_rng(5))
    b = sample_profile_items(g, d, th, th.o_g, np.random.default_rng(5))
    assert a == b


def test_exclusions_respected(desk):
    d, g, th = desk
    rng = np.random.default_rng(1)
    excl = list(range(0, 300, 3))
    for _ in range(100):
        s = sample_profile_items(g, d, th, th.o_g, rng, exclude=excl)
        assert not set(s.items) & set(excl)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31), og=st.integers(6, 40))
def test_sampled_invariants(desk, seed, og):
    d, g, th = desk
    th = AttackThresholds(th.o_u, max(og, th.o_u), th.o_i, th.p_s)
    s = sample_profile_items(g, d, th, og, np.random.default_rng(seed))
    check_sampled(s, g, th, og)
    assert len(s.selected) == n_selected(s.k, th.p_s)


def test_no_template_raises():
    d = make_dataset([("u", "a", 3), ("u", "b", 4)])
    with pytest.raises(SamplingError):
        sample_profile_items(build_graph(d), d, AttackThresholds(6, 8, 1, 0.3), 8, np.random.default_rng(0))


def test_floor_unreachable_raises():
    rows = [("u", f"i{k}", 3) for k in range(8)]
    d = make_dataset(rows)
    with pytest.raises(SamplingError):
        sample_profile_items(build_graph(d), d, AttackThresholds(6, 8, 5, 0.3), 8, np.random.default_rng(0))
