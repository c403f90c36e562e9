import json
import os
import statistics

import numpy as np
import pytest

from conftest import SMALL_ARCH
from shillab import attacks as atk
from shillab.dataset import AttackThresholds, derive_og
from shillab.gan import TrainingConfig, init_generator
from shillab.harness import (
    ExperimentResult,
    ExperimentSpec,
    bench_cost,
    derive_seed,
    emit_outputs,
    read_cells_csv,
    run_experiment,
    true_lists,
)
from shillab.itemgraph import build_graph
from shillab.recsys import RecTrainConfig
from shillab.synthetic import synthetic_ratings


@pytest.fixture(scope="module")
def tiny():
    return synthetic_ratings(n_users=90, n_items=140, mean_count=15, n_low_targets=12, seed=41)


def tiny_spec(**kw):
    base = dict(
        attacks=("GOAT", "Ran"),
        fractions=(0.03, 0.06),
        recommenders=("BPR",),
        runs=3,
        gan=TrainingConfig(epochs=3, arch=SMALL_ARCH),
        rec=RecTrainConfig(epochs=3, d=8),
        detectors=("pca", "degreesad"),
        seed=7,
    )
    base.update(kw)
    return ExperimentSpec(**base)


@pytest.fixture(scope="module")
def result(tiny):
    return run_experiment(tiny_spec(), tiny)


def test_derive_seed_stable():
    assert derive_seed(1, "a", 0.05) == derive_seed(1, "a", 0.05)
    assert derive_seed(1, "a", 0.05) != derive_seed(1, "a", 0.04)
    assert derive_seed(1, "a") != derive_seed(2, "a")


def test_spec_validation():
    for bad in (dict(runs=0), dict(fractions=(0.0,)), dict(target_mode="few"), dict(attacks=("X",)), dict(recommenders=("NCF",)), dict(detectors=("svm",))):
        with pytest.raises(ValueError):
            ExperimentSpec(**bad)


def test_grid_complete(result):
    assert len(result.cells) == 4
    for c in result.cells:
        assert c["run_count"] == 3 and not c["errors"]
        for r in c["runs"]:
            assert 0 <= r["hr"] <= 1 and set(r["detection"]) == {"pca", "degreesad"}


def test_odd_median_attained(result):
    for c in result.cells:
        for m in ("hr", "precision", "ndcg", "hr_prime_post"):
            assert c["median"][m] in [r[m] for r in c["runs"]]


def test_medians_recomputed_from_runs(result):
    for c in result.cells:
        for m in ("hr", "hr_pre", "precision", "ndcg"):
            assert c["median"][m] == statistics.median(r[m] for r in c["runs"])


def test_pre_attack_hr_shared(result):
    for f in (0.03, 0.06):
        a = [r["hr_pre"] for r in result.cell("GOAT", "BPR", f)["runs"]]
        b = [r["hr_pre"] for r in result.cell("Ran", "BPR", f)["runs"]]
        assert a == b


def test_single_run_cell_equals_run(tiny):
    res = run_experiment(tiny_spec(attacks=("Ave",), fractions=(0.05,), runs=1, detectors=()), tiny)
    (cell,) = res.cells
    (run,) = cell["runs"]
    for m in ("hr", "precision", "ndcg"):
        assert cell["median"][m] == run[m]


def test_same_spec_same_document(tiny):
    spec = tiny_spec(runs=1, fractions=(0.05,))
    assert run_experiment(spec, tiny).to_json() == run_experiment(spec, tiny).to_json()


def test_failed_cell_recorded(tiny):
    # no item reaches a popularity floor of 1000, so no profile can be sampled
    res = run_experiment(tiny_spec(attacks=("Ran",), fractions=(0.05,), runs=1, o_i=1000, detectors=()), tiny)
    (cell,) = res.cells
    assert cell["errors"] and not cell["runs"]
    assert cell["median"]["hr"] is None


def test_true_lists_rank_by_rating():
    from conftest import make_dataset

    d = make_dataset([("u", f"i{k:02d}", 1 + k % 5) for k in range(15)])
    tl = true_lists(d, 10)
    assert len(tl["u"]) == 10
    ratings = [d.rating("u", i) for i in tl["u"]]
    assert ratings == sorted(ratings, reverse=True)


# ---------------------------------------------------------------- bench


@pytest.fixture(scope="module")
def bench_world(tiny):
    th = AttackThresholds(6, max(derive_og(tiny), 6), 8, 0.3)
    return tiny, build_graph(tiny), th


def test_bench_empty(bench_world):
    d, g, th = bench_world
    assert bench_cost("Ave", 0, d, g, th) == (0.0, 0)


def test_bench_ave_fixed_k():
    d = synthetic_ratings(seed=0)
    th = AttackThresholds(6, max(derive_og(d), 6), 8, 0.3)
    _, nonzero = bench_cost("Ave", 100, d, build_graph(d), th, k=28)
    assert nonzero == 2800


@pytest.mark.parametrize("kind", atk.KINDS)
def test_bench_count_matches_tally(bench_world, kind):
    d, g, th = bench_world
    gen = init_generator(SMALL_ARCH, False, th.o_g, np.random.default_rng(0)) if kind == "GOAT" else None
    _, nonzero = bench_cost(kind, 30, d, g, th, gen, seed=3)
    # rebuild the same profiles and tally generated entries directly
    pool = np.flatnonzero((d.per_item_count >= 1) & (d.per_item_mean < 2.0))
    cfg = atk.AttackConfig(kind, 0.01, (d.items[int(pool[0])],), 4, th, 3)
    profiles = atk.build_attack(cfg, d, g, gen, n=30)
    tally = sum(1 for p in profiles for i, v in p.entries.items() if p.part_of[i] != "target" and v > 0.5)
    assert nonzero == tally


# ---------------------------------------------------------------- outputs


def test_emit_empty(tmp_path):
    written = emit_outputs(ExperimentResult({"seed": 0}), tmp_path)
    doc = json.loads((tmp_path / "result.json").read_text())
    assert doc["cells"] == []
    assert not [p for p in written if p.suffix == ".png"]


def test_emit_one_cell(tmp_path, tiny):
    res = run_experiment(tiny_spec(attacks=("GOAT",), fractions=(0.05,), runs=1, detectors=()), tiny)
    written = emit_outputs(res, tmp_path)
    rows = (tmp_path / "cells.csv").read_text().splitlines()
    assert len(rows) == 2
    assert any(p.name == "BPR_hr.png" for p in written)
    assert (tmp_path / "gan_history_run0.csv").exists()


def test_csv_round_trip(tmp_path, result):
    emit_outputs(result, tmp_path, plots=False)
    back = read_cells_csv(tmp_path / "cells.csv")
    for c in result.cells:
        row = back[(c["attack"], c["recommender"], c["fraction"])]
        for k, v in c["median"].items():
            assert row[k] == v


def test_result_json_round_trip(result):
    again = ExperimentResult.from_json(result.to_json())
    assert again.to_json() == result.to_json()


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
def test_unwritable_directory(tmp_path):
    locked = tmp_path / "locked"
    locked.mkdir()
    locked.chmod(0o500)
    with pytest.raises(OSError):
        emit_outputs(ExperimentResult({}), locked / "out")


def test_output_path_is_a_file(tmp_path):
    f = tmp_path / "file"
    f.write_text("x")
    with pytest.raises(OSError):
        emit_outputs(ExperimentResult({}), f)
