"""Command-line entry point: ``shillab <command> [--config FILE] [--seed N] [--out DIR] ...``.

Exit codes: 0 success, 1 usage error, 2 data or validation error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import attacks as atk
from . import config as cf
from .checkpoint import load_generator, save_generator, save_mf
from .dataset import DataError, derive_og, load_ratings, rating_histograms, save_ratings, split
from .gan import NumericError, init_generator, train
from .harness import ExperimentResult, bench_cost, derive_seed, emit_outputs, plot_result, run_experiment
from .itemgraph import build_graph, eligible_candidates
from .recsys import recommend_all, train_apr, train_bpr

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("shillab")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _dump(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _settings(args) -> dict:
    cfg = cf.load_config(args.config) if args.config else {}
    cfg = cf.apply_overrides(cfg, args.set)
    if args.seed is not None:
        cfg["seed"] = str(args.seed)
    if getattr(args, "data", None):
        cfg["data.path"] = args.data
    return cfg


def _load_data(cfg):
    path = cf.get(cfg, "data.path")
    if not path:
        raise UsageError("no dataset: pass --data or set data.path")
    return load_ratings(path, cf.get(cfg, "data.format", str, "tsv"))


def _thresholds(cfg, data):
    th = cf.thresholds(cfg)
    if th is None:
        og = max(derive_og(data), cf.get(cfg, "thresholds.o_u", int, 6))
        th = cf.thresholds(cfg, og_default=og)
    return th


def _stats(data) -> dict:
    users, items = rating_histograms(data)
    n_cells = data.n_users * data.n_items
    return {
        "n_users": data.n_users,
        "n_items": data.n_items,
        "n_ratings": len(data),
        "density": len(data) / n_cells if n_cells else 0.0,
        "global_mean": data.global_mean(),
        "rating_values": {str(v): int((data.r == v).sum()) for v in range(1, 6)},
        "user_count_histogram": {str(k): v for k, v in sorted(users.items())},
        "item_count_histogram": {str(k): v for k, v in sorted(items.items())},
    }


# ---------------------------------------------------------------- commands


def cmd_ingest(args, cfg, out: Path):
    data = _load_data(cfg)
    _dump(out / "stats.json", _stats(data))
    frac = cf.get(cfg, "data.train_fraction", float, 1.0)
    if frac < 1.0:
        parts = split(data, frac, cf.get(cfg, "seed", int, 0))
        save_ratings(parts.train, out / "train.tsv")
        save_ratings(parts.test, out / "test.tsv")
    print(f"{data.n_users} users, {data.n_items} items, {len(data)} ratings")


def cmd_thresholds(args, cfg, out: Path):
    data = _load_data(cfg)
    th = _thresholds(cfg, data)
    graph = build_graph(data)
    users, items = rating_histograms(data)
    doc = {
        "derived_o_g": derive_og(data),
        "o_u": th.o_u,
        "o_g": th.o_g,
        "o_i": th.o_i,
        "p_s": th.p_s,
        "eligible_selected_items": int(eligible_candidates(graph, "selected", th).size),
        "eligible_filler_items": int(eligible_candidates(graph, "filler", th).size),
        "user_count_histogram": {str(k): v for k, v in sorted(users.items())},
        "item_count_histogram": {str(k): v for k, v in sorted(items.items())},
    }
    _dump(out / "thresholds.json", doc)
    print(f"o_g={th.o_g} (derived {doc['derived_o_g']})")


def cmd_train_gan(args, cfg, out: Path):
    data = _load_data(cfg)
    th = _thresholds(cfg, data)
    gan_cfg = cf.gan_config(cfg, th, cf.get(cfg, "seed", int, 0))
    graph = build_graph(data)
    progress = None
    if args.verbose:
        def progress(epoch, hist):
            if epoch % 100 == 0:
                log.info("epoch %d loss_D %.4f loss_G %.4f", epoch, hist.loss_d[-1], hist.loss_g[-1])
    gp, _, hist = train(data, graph, gan_cfg, progress)
    save_generator(out / "generator.ckpt", gp, gan_cfg)
    hist.to_csv(out / "gan_history.csv")
    _dump(out / "train_gan.json", {"config": gan_cfg.to_dict(), "final_loss_d": hist.loss_d[-1], "final_loss_g": hist.loss_g[-1]})
    print(f"trained {gan_cfg.epochs} epochs; final loss_D {hist.loss_d[-1]:.4f} loss_G {hist.loss_g[-1]:.4f}")


def _generator(args, cfg, data, th, graph, seed):
    if args.generator:
        gp, _ = load_generator(args.generator)
        return gp
    log.info("no --generator given; training one with the configured GAN settings")
    gp, _, _ = train(data, graph, cf.gan_config(cfg, th, seed))
    return gp


def cmd_attack(args, cfg, out: Path):
    data = _load_data(cfg)
    th = _thresholds(cfg, data)
    seed = cf.get(cfg, "seed", int, 0)
    kind = args.kind or cf.get(cfg, "attack.kind", str, "GOAT")
    fraction = cf.get(cfg, "attack.fraction", float, 0.05)
    targets = cf.get(cfg, "attack.targets", cf.as_list, ())
    if not targets:
        mode = cf.get(cfg, "attack.target_mode", str, "multiple")
        n = cf.get(cfg, "attack.n_targets", int, 1 if mode == "single" else 10)
        targets = tuple(atk.select_targets(data, n, np.random.default_rng(derive_seed(seed, "targets"))))
    graph = build_graph(data)
    generator = _generator(args, cfg, data, th, graph, seed) if kind == "GOAT" else None
    acfg = atk.AttackConfig(kind, fraction, tuple(targets), cf.get(cfg, "attack.target_rating", int, 4), th, derive_seed(seed, "attack", kind, fraction))
    profiles = atk.build_attack(acfg, data, graph, generator)
    atk.export_profiles(profiles, out / "profiles.tsv", out / "parts.tsv")
    _dump(out / "attack.json", {"kind": kind, "fraction": fraction, "targets": list(targets), "n_profiles": len(profiles), "o_g": th.o_g, "seed": seed})
    print(f"{len(profiles)} {kind} profiles targeting {len(targets)} items")


def cmd_inject(args, cfg, out: Path):
    data = _load_data(cfg)
    if not args.profiles:
        raise UsageError("inject needs --profiles")
    parts = args.parts or str(Path(args.profiles).with_name("parts.tsv"))
    profiles = atk.import_profiles(args.profiles, parts)
    poisoned, fake = atk.inject(data, profiles)
    save_ratings(poisoned, out / "poisoned.tsv")
    (out / "fake_users.txt").write_text("".join(f"{u}\n" for u in sorted(fake)))
    print(f"injected {len(fake)} profiles; {poisoned.n_users} users total")


def cmd_recommend(args, cfg, out: Path):
    data = _load_data(cfg)
    kind = args.model or cf.get(cfg, "rec.kind", str, "BPR")
    if kind not in ("BPR", "APR"):
        raise UsageError(f"unknown recommender {kind!r}")
    rcfg = cf.rec_config(cfg, cf.get(cfg, "seed", int, 0), adversarial=kind == "APR")
    model = train_apr(data, rcfg) if kind == "APR" else train_bpr(data, rcfg)
    n = cf.get(cfg, "rec.n", int, 10)
    lists = recommend_all(model, data, n)
    save_mf(out / "model.ckpt", model, rcfg)
    with open(out / "recommendations.tsv", "w") as fh:
        for u, items in lists.items():
            for rank, i in enumerate(items, start=1):
                fh.write(f"{data.users[u]}\t{rank}\t{data.items[i]}\n")
    print(f"{kind}: top-{n} lists for {len(lists)} users")


def cmd_evaluate(args, cfg, out: Path):
    spec = cf.experiment_spec(cfg)
    if spec.data_path is None:
        raise UsageError("no dataset: pass --data or set data.path")
    result = run_experiment(spec, progress=(lambda r, a, f: log.info("run %d %s %.3f done", r, a, f)) if args.verbose else None)
    emit_outputs(result, out, plots=not args.no_plots)
    failed = sum(len(c["errors"]) for c in result.cells)
    print(f"{len(result.cells)} cells, {failed} failed cell runs")


def cmd_detect(args, cfg, out: Path):
    from .detect import detect_degreesad, detect_pca

    data = _load_data(cfg)
    if not args.fake_users:
        raise UsageError("detect needs --fake-users")
    fake = {line.strip() for line in Path(args.fake_users).read_text().splitlines() if line.strip()}
    kind = args.detector or cf.get(cfg, "detect.kind", str, "degreesad")
    seed = cf.get(cfg, "seed", int, 0)
    if kind == "pca":
        rep = detect_pca(data, cf.get(cfg, "detect.m", int, len(fake)), truth=fake)
    elif kind == "degreesad":
        rep = detect_degreesad(data, fake, cf.get(cfg, "detect.folds", int, 5), seed=seed)
    else:
        raise UsageError(f"unknown detector {kind!r}")
    (out / "detection.json").write_text(rep.to_json() + "\n")
    print(f"{kind}: precision {rep.precision:.3f} recall {rep.recall:.3f}")


def cmd_bench(args, cfg, out: Path):
    data = _load_data(cfg)
    th = _thresholds(cfg, data)
    seed = cf.get(cfg, "seed", int, 0)
    kind = args.kind or cf.get(cfg, "bench.kind", str, "GOAT")
    n = cf.get(cfg, "bench.n_profiles", int, 100)
    k = cf.get(cfg, "bench.k", int, None)
    graph = build_graph(data)
    gen = None
    if kind == "GOAT":
        if args.generator:
            gen, _ = load_generator(args.generator)
        else:
            # forging cost does not depend on the trained weights
            gen = init_generator(cf.gan_config(cfg, th, seed).arch, False, max(th.o_g, k or 0), np.random.default_rng(seed))
    elapsed, nonzero = bench_cost(kind, n, data, graph, th, gen, k=k, seed=seed)
    # timings vary between runs, so they go to stdout only
    _dump(out / "bench.json", {"kind": kind, "n_profiles": n, "k": k, "nonzero": nonzero})
    print(f"{kind}: {n} profiles in {elapsed:.4f} s, {nonzero} nonzero ratings")


def cmd_plot(args, cfg, out: Path):
    if not args.result:
        raise UsageError("plot needs --result")
    result = ExperimentResult.from_json(Path(args.result).read_text())
    written = plot_result(result, out)
    print(f"wrote {len(written)} plots")


COMMANDS = {
    "ingest": cmd_ingest,
    "thresholds": cmd_thresholds,
    "train-gan": cmd_train_gan,
    "attack": cmd_attack,
    "inject": cmd_inject,
    "recommend": cmd_recommend,
    "evaluate": cmd_evaluate,
    "detect": cmd_detect,
    "bench": cmd_bench,
    "plot": cmd_plot,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value settings file")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--data", help="ratings file (overrides data.path)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="shillab", description="Shilling attack simulation and evaluation")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name in ("attack", "bench"):
            sp.add_argument("--kind", choices=atk.KINDS)
            sp.add_argument("--generator", help="generator checkpoint (GOAT)")
        if name == "inject":
            sp.add_argument("--profiles")
            sp.add_argument("--parts")
        if name == "recommend":
            sp.add_argument("--model", choices=("BPR", "APR"))
        if name == "evaluate":
            sp.add_argument("--no-plots", action="store_true")
        if name == "detect":
            sp.add_argument("--fake-users")
            sp.add_argument("--detector", choices=("pca", "degreesad"))
        if name == "plot":
            sp.add_argument("--result")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"shillab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _settings(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, cfg, out)
    except (UsageError, cf.ConfigError) as exc:
        print(f"shillab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"shillab: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ValueError, KeyError, OSError) as exc:
        print(f"shillab: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
