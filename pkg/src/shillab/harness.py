"""Experiment grid over attack x recommender x injection fraction, attack-cost benchmark, outputs."""
from __future__ import annotations

import csv
import json
import logging
import time
import traceback
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import attacks as atk
from .dataset import AttackThresholds, RatingsDataset, derive_og, load_ratings, split
from .detect import detect_degreesad, detect_pca
from .gan import TrainingConfig, train
from .itemgraph import ItemItemGraph, build_graph
from .metrics import hit_ratio_at_10, hr_prime_at_10, ndcg_at_10, precision_at_10
from .recsys import AdversarialConfig, RecTrainConfig, recommend_all, train_apr, train_bpr

log = logging.getLogger(__name__)

METRICS = ("hr", "hr_pre", "hr_prime_pre", "hr_prime_post", "precision", "ndcg")
RECOMMENDERS = ("BPR", "APR")
DETECTORS = ("pca", "degreesad")


def derive_seed(master: int, *coords) -> int:
    """Stable 32-bit seed from the master seed and arbitrary cell coordinates."""
    keys = [int(master) & 0xFFFFFFFF]
    for c in coords:
        keys.append(zlib.crc32(repr(c).encode()))
    return int(np.random.SeedSequence(keys).generate_state(1)[0])


@dataclass
class ExperimentSpec:
    data_path: str | None = None
    data_format: str = "tsv"
    train_fraction: float = 0.7
    attacks: tuple[str, ...] = atk.KINDS
    fractions: tuple[float, ...] = (0.01, 0.02, 0.03, 0.04, 0.05)
    target_mode: str = "multiple"
    target_rating: int = 4
    recommenders: tuple[str, ...] = RECOMMENDERS
    runs: int = 10
    o_u: int = 6
    o_g: int | None = None
    o_i: int = 8
    p_s: float = 0.3
    gan: TrainingConfig = field(default_factory=TrainingConfig)
    rec: RecTrainConfig = field(default_factory=RecTrainConfig)
    detectors: tuple[str, ...] = ()
    detect_folds: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if any(f <= 0 for f in self.fractions):
            raise ValueError("injection fractions must be positive")
        if self.target_mode not in ("single", "multiple"):
            raise ValueError(f"target_mode must be single or multiple, got {self.target_mode!r}")
        for a in self.attacks:
            if a not in atk.KINDS:
                raise ValueError(f"unknown attack {a!r}")
        for r in self.recommenders:
            if r not in RECOMMENDERS:
                raise ValueError(f"unknown recommender {r!r}")
        for d in self.detectors:
            if d not in DETECTORS:
                raise ValueError(f"unknown detector {d!r}")

    @property
    def n_targets(self) -> int:
        return 1 if self.target_mode == "single" else 10

    def thresholds_for(self, train_data: RatingsDataset) -> AttackThresholds:
        og = self.o_g if self.o_g is not None else max(derive_og(train_data), self.o_u)
        return AttackThresholds(self.o_u, og, self.o_i, self.p_s)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d


@dataclass
class ExperimentResult:
    spec: dict
    cells: list[dict] = field(default_factory=list)
    baselines: list[dict] = field(default_factory=list)
    runs: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"spec": self.spec, "runs": self.runs, "baselines": self.baselines, "cells": self.cells}

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentResult":
        d = json.loads(text)
        return cls(d["spec"], d["cells"], d["baselines"], d["runs"])

    def cell(self, attack, recommender, fraction) -> dict:
        for c in self.cells:
            if c["attack"] == attack and c["recommender"] == recommender and abs(c["fraction"] - fraction) < 1e-12:
                return c
        raise KeyError((attack, recommender, fraction))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, set):
        return sorted(_jsonable(v) for v in x)
    return x


def median_of(values):
    vals = [v for v in values if v is not None]
    return float(np.median(vals)) if vals else None


def _medians(run_records, keys):
    return {k: median_of(r.get(k) for r in run_records) for k in keys}


def true_lists(test: RatingsDataset, n: int = 10) -> dict[str, list[str]]:
    """Each user's held-out items, highest rating first (ties by item index), cut to ``n``."""
    out = {}
    m = test.csr()
    for u in range(test.n_users):
        items = m.indices[m.indptr[u] : m.indptr[u + 1]]
        if items.size == 0:
            continue
        r = m.data[m.indptr[u] : m.indptr[u + 1]]
        order = np.lexsort((items, -r))[:n]
        out[test.users[u]] = [test.items[i] for i in items[order]]
    return out


def _train_rec(kind, data, config: RecTrainConfig, seed):
    cfg = replace(config, seed=seed)
    if kind == "APR":
        if cfg.adversarial is None:
            cfg = replace(cfg, adversarial=AdversarialConfig())
        return train_apr(data, cfg)
    return train_bpr(data, cfg)


def _rec_lists(model, data: RatingsDataset, n_real: int) -> dict[str, list[str]]:
    idx = recommend_all(model, data, 10, users=range(n_real))
    return {data.users[u]: [data.items[i] for i in lst] for u, lst in idx.items()}


def _rating_pattern(profiles):
    pat = {"selected": [0] * 5, "filler": [0] * 5}
    for p in profiles:
        for iid, part in p.part_of.items():
            if part in pat:
                pat[part][p.entries[iid] - 1] += 1
    return pat


def run_experiment(spec: ExperimentSpec, dataset: RatingsDataset | None = None, progress=None) -> ExperimentResult:
    """Run every grid cell for every seeded run; cell values are medians over runs."""
    if dataset is None:
        if spec.data_path is None:
            raise ValueError("no dataset given")
        dataset = load_ratings(spec.data_path, spec.data_format)
    result = ExperimentResult(spec.to_dict())
    cells = {}
    for a in spec.attacks:
        for r in spec.recommenders:
            for f in spec.fractions:
                cells[(a, r, f)] = {"attack": a, "recommender": r, "fraction": f, "runs": [], "errors": []}
    base = {r: {"recommender": r, "runs": []} for r in spec.recommenders}

    for run in range(spec.runs):
        run_seed = derive_seed(spec.seed, "run", run)
        parts = split(dataset, spec.train_fraction, run_seed)
        train_data, test_data = parts.train, parts.test
        n_real = train_data.n_users
        truth_lists = true_lists(test_data)
        th = spec.thresholds_for(train_data)
        graph = build_graph(train_data)
        targets = atk.select_targets(train_data, spec.n_targets, np.random.default_rng(derive_seed(spec.seed, "targets", run)))
        run_info = {"run": run, "seed": run_seed, "thresholds": asdict(th), "targets": targets}

        generator = None
        if "GOAT" in spec.attacks:
            gan_cfg = replace(spec.gan, thresholds=th, seed=derive_seed(spec.seed, "gan", run))
            try:
                generator, _, hist = train(train_data, graph, gan_cfg)
                run_info["gan_history"] = {"loss_d": hist.loss_d, "loss_g": hist.loss_g, "og_effective": hist.og_effective}
            except Exception as exc:  # recorded per GOAT cell below
                run_info["gan_error"] = f"{type(exc).__name__}: {exc}"
                log.error("GAN training failed in run %d: %s", run, exc)
        result.runs.append(run_info)

        pre_lists = {}
        for rk in spec.recommenders:
            rec_seed = derive_seed(spec.seed, "rec", rk, run)
            model = _train_rec(rk, train_data, spec.rec, rec_seed)
            lists = _rec_lists(model, train_data, n_real)
            pre_lists[rk] = lists
            base[rk]["runs"].append(
                {
                    "run": run,
                    "seed": rec_seed,
                    "hr": hit_ratio_at_10(lists, targets),
                    "precision": precision_at_10(lists, truth_lists),
                    "ndcg": ndcg_at_10(lists, truth_lists),
                }
            )

        for a in spec.attacks:
            for f in spec.fractions:
                attack_seed = derive_seed(spec.seed, "attack", a, f, run)
                try:
                    if a == "GOAT" and generator is None:
                        raise RuntimeError(run_info.get("gan_error", "generator unavailable"))
                    cfg = atk.AttackConfig(a, f, tuple(targets), spec.target_rating, th, attack_seed)
                    profiles = atk.build_attack(cfg, train_data, graph, generator)
                    poisoned, fake = atk.inject(train_data, profiles)
                except Exception as exc:
                    for rk in spec.recommenders:
                        cells[(a, rk, f)]["errors"].append({"run": run, "error": f"{type(exc).__name__}: {exc}"})
                        log.error("cell %s/%s/%s run %d failed: %s", a, rk, f, run, exc)
                    continue
                detection = {}
                for det in spec.detectors:
                    try:
                        if det == "pca":
                            rep = detect_pca(poisoned, len(fake), truth=fake)
                        else:
                            rep = detect_degreesad(poisoned, fake, spec.detect_folds, seed=attack_seed)
                        detection[det] = {"precision": rep.precision, "recall": rep.recall}
                    except Exception as exc:
                        detection[det] = {"error": f"{type(exc).__name__}: {exc}"}
                for rk in spec.recommenders:
                    cell = cells[(a, rk, f)]
                    try:
                        rec_seed = derive_seed(spec.seed, "rec", rk, run)
                        model = _train_rec(rk, poisoned, spec.rec, rec_seed)
                        lists = _rec_lists(model, poisoned, n_real)
                        rec = {
                            "run": run,
                            "seed": attack_seed,
                            "rec_seed": rec_seed,
                            "n_profiles": len(profiles),
                            "hr": hit_ratio_at_10(lists, targets),
                            "hr_pre": hit_ratio_at_10(pre_lists[rk], targets),
                            "hr_prime_pre": hr_prime_at_10(pre_lists[rk], profiles),
                            "hr_prime_post": hr_prime_at_10(lists, profiles),
                            "precision": precision_at_10(lists, truth_lists),
                            "ndcg": ndcg_at_10(lists, truth_lists),
                            "detection": detection,
                            "pattern": _rating_pattern(profiles),
                        }
                        cell["runs"].append(rec)
                    except Exception as exc:
                        cell["errors"].append({"run": run, "error": f"{type(exc).__name__}: {exc}"})
                        log.error("cell %s/%s/%s run %d failed:\n%s", a, rk, f, run, traceback.format_exc())
                if progress is not None:
                    progress(run, a, f)

    for c in cells.values():
        c["median"] = _medians(c["runs"], METRICS)
        for det in spec.detectors:
            for m in ("precision", "recall"):
                c["median"][f"{det}_{m}"] = median_of(
                    r["detection"].get(det, {}).get(m) for r in c["runs"]
                )
        c["run_count"] = len(c["runs"])
        result.cells.append(c)
    for b in base.values():
        b["median"] = _medians(b["runs"], ("hr", "precision", "ndcg"))
        b["run_count"] = len(b["runs"])
        result.baselines.append(b)
    return result


# ---------------------------------------------------------------- attack cost


def bench_cost(
    kind: str,
    n_profiles: int,
    dataset: RatingsDataset,
    graph: ItemItemGraph,
    thresholds: AttackThresholds,
    generator=None,
    k: int | None = None,
    seed: int = 0,
) -> tuple[float, int]:
    """Wall-clock seconds and nonzero-rating count for forging ``n_profiles`` profiles.

    Only the generated part (selected and filler items) is counted; every
    profile additionally carries the fixed target ratings. With ``k`` set, every
    profile rates exactly ``k`` items (templates are restricted accordingly).
    """
    if n_profiles == 0:
        return 0.0, 0
    th = thresholds
    og_eff = th.o_g
    if k is not None:
        th = AttackThresholds(max(th.o_u, k), max(th.o_g, k), th.o_i, th.p_s)
        og_eff = k
    pool = np.flatnonzero((dataset.per_item_count >= 1) & (dataset.per_item_mean < 2.0))
    if pool.size:
        target = dataset.items[int(pool[0])]
    else:
        target = dataset.items[int(np.argmin(np.where(dataset.per_item_count > 0, dataset.per_item_count, np.iinfo(np.int64).max)))]
    cfg = atk.AttackConfig(kind, 0.01, (target,), 4, th, seed)
    start = time.perf_counter()
    profiles = atk.build_attack(cfg, dataset, graph, generator, n=n_profiles, og_effective=og_eff)
    elapsed = time.perf_counter() - start
    nonzero = sum(1 for p in profiles for iid, v in p.entries.items() if p.part_of[iid] != "target" and v > 0.5)
    return elapsed, nonzero


# ---------------------------------------------------------------- outputs

CELL_COLUMNS = ("attack", "recommender", "fraction", "run_count") + METRICS


def write_cells_csv(result: ExperimentResult, path) -> None:
    extra = sorted({k for c in result.cells for k in c.get("median", {}) if k not in METRICS})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(CELL_COLUMNS) + extra)
        for c in result.cells:
            med = c.get("median", {})
            row = [c["attack"], c["recommender"], repr(c["fraction"]), c.get("run_count", len(c["runs"]))]
            row += ["" if med.get(m) is None else repr(med[m]) for m in METRICS + tuple(extra)]
            w.writerow(row)


def read_cells_csv(path) -> dict:
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["attack"], row["recommender"], float(row["fraction"]))
            out[key] = {
                k: (float(v) if v != "" else None)
                for k, v in row.items()
                if k not in ("attack", "recommender", "fraction", "run_count")
            }
    return out


def write_runs_csv(result: ExperimentResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["attack", "recommender", "fraction", "run", "seed"] + list(METRICS))
        for c in result.cells:
            for r in c["runs"]:
                w.writerow(
                    [c["attack"], c["recommender"], repr(c["fraction"]), r["run"], r["seed"]]
                    + [repr(r[m]) for m in METRICS]
                )


def plot_result(result: ExperimentResult, out_dir) -> list[Path]:
    """Metric-vs-fraction curves per recommender and star histograms of GOAT camouflage ratings."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    written = []
    cells = [c for c in result.cells if c["runs"]]
    if not cells:
        return written
    meta = {"Software": None}
    for rk in sorted({c["recommender"] for c in cells}):
        for metric in ("hr", "hr_prime_post", "precision", "ndcg"):
            fig, ax = plt.subplots(figsize=(5, 3.5))
            for a in sorted({c["attack"] for c in cells if c["recommender"] == rk}):
                series = sorted((c["fraction"], c["median"][metric]) for c in cells if c["recommender"] == rk and c["attack"] == a)
                xs = [s[0] for s in series if s[1] is not None]
                ys = [s[1] for s in series if s[1] is not None]
                ax.plot(xs, ys, marker="o", label=a)
            ax.set_xlabel("injection fraction")
            ax.set_ylabel(f"{metric}@10 (median)")
            ax.set_title(rk)
            ax.legend(fontsize=7)
            fig.tight_layout()
            p = out_dir / f"{rk}_{metric}.png"
            fig.savefig(p, metadata=meta)
            plt.close(fig)
            written.append(p)
    goat = [c for c in cells if c["attack"] == "GOAT"]
    if goat:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        totals = {"selected": np.zeros(5), "filler": np.zeros(5)}
        for c in goat:
            for r in c["runs"]:
                for part in totals:
                    totals[part] += np.array(r["pattern"][part])
        stars = np.arange(1, 6)
        for off, part in ((-0.2, "selected"), (0.2, "filler")):
            t = totals[part]
            ax.bar(stars + off, t / max(t.sum(), 1), width=0.4, label=part)
        ax.set_xlabel("stars")
        ax.set_ylabel("share of generated ratings")
        ax.legend()
        fig.tight_layout()
        p = out_dir / "GOAT_rating_pattern.png"
        fig.savefig(p, metadata=meta)
        plt.close(fig)
        written.append(p)
    return written


def emit_outputs(result: ExperimentResult, out_dir, plots: bool = True) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    p = out_dir / "result.json"
    p.write_text(result.to_json() + "\n")
    written.append(p)
    p = out_dir / "cells.csv"
    write_cells_csv(result, p)
    written.append(p)
    p = out_dir / "runs.csv"
    write_runs_csv(result, p)
    written.append(p)
    for r in result.runs:
        h = r.get("gan_history")
        if h:
            p = out_dir / f"gan_history_run{r['run']}.csv"
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["epoch", "loss_D", "loss_G", "og_effective"])
                for e, row in enumerate(zip(h["loss_d"], h["loss_g"], h["og_effective"]), start=1):
                    w.writerow([e, repr(row[0]), repr(row[1]), row[2]])
            written.append(p)
    if plots:
        written += plot_result(result, out_dir)
    return written
