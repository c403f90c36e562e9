import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import SMALL_ARCH, make_dataset
from shillab import attacks as atk
from shillab.dataset import AttackThresholds, derive_og
from shillab.gan import init_generator
from shillab.itemgraph import SampledProfileItems, build_graph
from shillab.synthetic import synthetic_ratings


@pytest.fixture(scope="module")
def world():
    d = synthetic_ratings(n_users=200, n_items=300, seed=21)
    th = AttackThresholds(6, derive_og(d), 8, 0.3)
    g = build_graph(d)
    targets = tuple(atk.select_targets(d, 10, np.random.default_rng(0)))
    return d, g, th, targets


def test_select_targets_small():
    rows = [("a", "i1", 1), ("b", "i1", 2), ("a", "i2", 3), ("a", "i3", 2), ("b", "i3", 1), ("c", "i3", 2)]
    d = make_dataset(rows)  # means i1 1.5, i2 3.0, i3 1.67
    assert atk.select_targets(d, 2, np.random.default_rng(0)) == ["i1", "i3"]
    with pytest.raises(atk.AttackError):
        atk.select_targets(d, 3, np.random.default_rng(0))


def test_select_targets_empty_pool():
    d = make_dataset([("a", "x", 3), ("b", "y", 4)])
    with pytest.raises(atk.AttackError):
        atk.select_targets(d, 1, np.random.default_rng(0))


def test_select_targets_from_pool():
    rows = [(f"u{k}", f"low{i}", 1) for i in range(40) for k in range(2)] + [(f"u{k}", f"hi{i}", 5) for i in range(20) for k in range(2)]
    d = make_dataset(rows)
    for seed in range(20):
        t = atk.select_targets(d, 10, np.random.default_rng(seed))
        assert len(set(t)) == 10 and all(x.startswith("low") for x in t)


def test_discretize():
    assert atk.discretize([4.4, 0.2, 6.3]).tolist() == [4, 1, 5]
    assert atk.discretize([2.5, 3.49]).tolist() == [3, 3]


def test_profile_size_additivity(world):
    d, g, th, targets = world
    s = SampledProfileItems(0, 6, (0, 1), (2, 3, 4, 5))
    cfg = atk.AttackConfig("Ave", 0.01, targets, 4, th)
    p = atk.assemble_profile("f0", s, np.full(6, 3.2), cfg, d)
    assert len(p) == 16
    assert Counter(p.part_of.values()) == {"selected": 2, "filler": 4, "target": 10}
    assert all(p.entries[t] == 4 for t in targets)


def test_config_validation(world):
    _, _, th, targets = world
    for bad in (dict(kind="Nope"), dict(injection_fraction=0.0), dict(injection_fraction=0.3), dict(targets=()), dict(target_rating=6)):
        kw = dict(kind="Ave", injection_fraction=0.01, targets=targets, target_rating=4, thresholds=th)
        kw.update(bad)
        with pytest.raises(ValueError):
            atk.AttackConfig(**kw)


def test_ran_on_constant_data():
    rows = [(f"u{u}", f"i{i}", 3) for u in range(6) for i in range(6)]
    d = make_dataset(rows)
    s = SampledProfileItems(0, 6, (0, 1), (2, 3, 4, 5))
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert atk.baseline_ratings("Ran", s, d, rng).tolist() == [3] * 6


def test_band_selected_are_max(world):
    d, g, th, targets = world
    profiles = atk.build_attack(atk.AttackConfig("Band", 0.05, targets, 4, th, seed=3), d, g)
    for p in profiles:
        assert all(p.entries[i] == 5 for i in p.items_in("selected"))
    top = sorted(np.flatnonzero(g.popularity >= th.o_i), key=lambda i: (-g.popularity[i], i))
    first = profiles[0].items_in("selected")
    assert {d.item_index[i] for i in first} == {int(x) for x in top[: len(first)]}


def test_ave_moments():
    d = make_dataset([("a", "x", 2), ("b", "x", 2), ("c", "x", 4)])
    s = SampledProfileItems(0, 1, (0,), ())
    rng = np.random.default_rng(1)
    draws = np.concatenate([atk.baseline_draws("Ave", s, d, rng) for _ in range(10_000)])
    assert abs(draws.mean() - 8 / 3) < 0.1


def test_um_mix(world):
    d, g, th, targets = world
    profiles = atk.build_attack(atk.AttackConfig("UM", 0.2, targets, 4, th, seed=9), d, g, n=1200)
    freq = Counter(p.scheme for p in profiles)
    assert set(freq) == {"Ave", "Ran", "Band"}
    for k in freq:
        assert abs(freq[k] / 1200 - 1 / 3) < 0.05


@pytest.mark.parametrize("fraction", [0.01, 0.02, 0.03, 0.04, 0.05])
def test_profile_count(world, fraction):
    d, g, th, targets = world
    profiles = atk.build_attack(atk.AttackConfig("Ran", fraction, targets, 4, th, seed=1), d, g)
    assert len(profiles) == math.ceil(fraction * d.n_users)


@pytest.mark.parametrize("kind", atk.KINDS)
def test_profile_invariants(world, kind):
    d, g, th, targets = world
    gen = init_generator(SMALL_ARCH, False, th.o_g, np.random.default_rng(0)) if kind == "GOAT" else None
    profiles = atk.build_attack(atk.AttackConfig(kind, 0.05, targets, 4, th, seed=2), d, g, gen)
    for p in profiles:
        assert all(isinstance(v, int) and 1 <= v <= 5 for v in p.entries.values())
        camo = set(p.items_in("selected")) | set(p.items_in("filler"))
        assert not camo & set(targets)
        assert set(p.items_in("target")) == set(targets)
        assert th.o_u <= len(camo) <= th.o_g
        assert all(g.popularity[d.item_index[i]] >= th.o_i for i in p.items_in("selected"))


def test_goat_needs_generator(world):
    d, g, th, targets = world
    with pytest.raises(atk.AttackError):
        atk.build_attack(atk.AttackConfig("GOAT", 0.05, targets, 4, th), d, g)


def test_goat_ratings_follow_generator(world):
    from shillab.gan import generate_ratings
    from shillab.itemgraph import sample_profile_items

    d, g, th, targets = world
    gen = init_generator(SMALL_ARCH, False, th.o_g, np.random.default_rng(0))
    cfg = atk.AttackConfig("GOAT", 0.01, targets, 4, th, seed=4)
    profiles = atk.build_attack(cfg, d, g, gen, n=3)
    excl = [d.item_index[t] for t in targets]
    for p, rng in zip(profiles, atk.profile_streams(4, 3)):
        s = sample_profile_items(g, d, th, th.o_g, rng, exclude=excl)
        want = atk.discretize(generate_ratings(gen, s, d, rng))
        assert [p.entries[d.items[i]] for i in s.items] == want.tolist()


def test_build_attack_deterministic(world):
    d, g, th, targets = world
    cfg = atk.AttackConfig("Ave", 0.05, targets, 4, th, seed=7)
    a = atk.build_attack(cfg, d, g)
    b = atk.build_attack(cfg, d, g)
    assert [(p.entries, p.part_of) for p in a] == [(p.entries, p.part_of) for p in b]


def test_inject(world):
    d, g, th, targets = world
    same, fake = atk.inject(d, [])
    assert same is d and fake == set()
    profiles = atk.build_attack(atk.AttackConfig("Ave", 0.05, targets, 4, th, seed=1), d, g, n=5)
    total = sum(len(p) for p in profiles)
    poisoned, fake = atk.inject(d, profiles)
    assert len(poisoned) == len(d) + total
    assert fake == {p.profile_id for p in profiles}
    recount = make_dataset([(r.user_id, r.item_id, r.rating) for r in poisoned.records()])
    for item in poisoned.items[:50]:
        a, b = poisoned.item_index[item], recount.item_index.get(item)
        if b is None:
            assert poisoned.per_item_count[a] == 0
            continue
        assert poisoned.per_item_count[a] == recount.per_item_count[b]
        assert poisoned.per_item_mean[a] == pytest.approx(recount.per_item_mean[b], abs=1e-12)


def test_inject_with_five_sixteen_entry_profiles(world):
    d, g, th, targets = world
    s = SampledProfileItems(0, 6, (0, 1), (2, 3, 4, 5))
    cfg = atk.AttackConfig("Ave", 0.01, targets, 4, th)
    profiles = [atk.assemble_profile(f"f{k}", s, np.full(6, 3.0), cfg, d) for k in range(5)]
    poisoned, _ = atk.inject(d, profiles)
    assert len(poisoned) == len(d) + 80


def test_inject_id_clash(world):
    d, g, th, targets = world
    s = SampledProfileItems(0, 6, (0, 1), (2, 3, 4, 5))
    p = atk.assemble_profile(d.users[0], s, np.full(6, 3.0), atk.AttackConfig("Ave", 0.01, targets, 4, th), d)
    with pytest.raises(atk.AttackError):
        atk.inject(d, [p])


def test_export_import_round_trip(tmp_path, world):
    d, g, th, targets = world
    profiles = atk.build_attack(atk.AttackConfig("UM", 0.05, targets, 4, th, seed=1), d, g)
    atk.export_profiles(profiles, tmp_path / "p.tsv", tmp_path / "parts.tsv")
    back = atk.import_profiles(tmp_path / "p.tsv", tmp_path / "parts.tsv")
    assert [(p.profile_id, p.entries, p.part_of) for p in back] == [(p.profile_id, p.entries, p.part_of) for p in profiles]


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), kind=st.sampled_from(atk.HANDCRAFTED))
def test_targets_never_camouflage(world, seed, kind):
    d, g, th, targets = world
    for p in atk.build_attack(atk.AttackConfig(kind, 0.02, targets, 4, th, seed=seed), d, g):
        assert not (set(p.items_in("selected")) | set(p.items_in("filler"))) & set(targets)
