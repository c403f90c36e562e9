"""Flat ``key = value`` configuration files with module-namespaced keys (``gan.epochs``, ``attack.fraction``)."""
from __future__ import annotations

from dataclasses import replace

from .dataset import AttackThresholds
from .gan import Architecture, TrainingConfig
from .harness import ExperimentSpec
from .recsys import AdversarialConfig, RecTrainConfig


class ConfigError(ValueError):
    pass


KNOWN_KEYS = {
    "seed",
    "data.path", "data.format", "data.train_fraction",
    "thresholds.o_u", "thresholds.o_g", "thresholds.o_i", "thresholds.p_s",
    "gan.epochs", "gan.learning_rate", "gan.lambda", "gan.psi", "gan.d_steps", "gan.batch_size",
    "gan.conditional", "gan.embed", "gan.link", "gan.readout", "gan.critic",
    "attack.kind", "attack.kinds", "attack.fraction", "attack.fractions", "attack.target_mode",
    "attack.targets", "attack.n_targets", "attack.target_rating",
    "rec.kind", "rec.kinds", "rec.d", "rec.learning_rate", "rec.epochs", "rec.negatives", "rec.l2",
    "rec.adv_eps", "rec.adv_weight", "rec.n",
    "exp.runs",
    "detect.kind", "detect.kinds", "detect.folds", "detect.m",
    "bench.kind", "bench.n_profiles", "bench.k",
}


def parse_config(text: str) -> dict[str, str]:
    cfg = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        cfg[key] = value
    return cfg


def load_config(path) -> dict[str, str]:
    with open(path) as fh:
        return parse_config(fh.read())


def apply_overrides(cfg: dict, pairs) -> dict:
    cfg = dict(cfg)
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        key, value = (s.strip() for s in pair.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown key {key!r}")
        cfg[key] = value
    return cfg


def _conv(cfg, key, fn, default):
    if key not in cfg:
        return default
    try:
        return fn(cfg[key])
    except ValueError:
        raise ConfigError(f"bad value for {key}: {cfg[key]!r}") from None


def as_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(s)


def as_list(s: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in s.split(",") if x.strip())


def as_ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in as_list(s))


def get(cfg, key, fn=str, default=None):
    return _conv(cfg, key, fn, default)


def thresholds(cfg, og_default: int | None = None) -> AttackThresholds | None:
    og = get(cfg, "thresholds.o_g", int, og_default)
    if og is None:
        return None
    try:
        return AttackThresholds(
            get(cfg, "thresholds.o_u", int, 6), og, get(cfg, "thresholds.o_i", int, 8), get(cfg, "thresholds.p_s", float, 0.3)
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def gan_config(cfg, th: AttackThresholds, seed: int) -> TrainingConfig:
    a = Architecture()
    arch = Architecture(
        embed=get(cfg, "gan.embed", as_ints, a.embed),
        link=get(cfg, "gan.link", as_ints, a.link),
        readout=get(cfg, "gan.readout", int, a.readout),
        critic=get(cfg, "gan.critic", as_ints, a.critic),
    )
    try:
        return TrainingConfig(
            epochs=get(cfg, "gan.epochs", int, 2000),
            learning_rate=get(cfg, "gan.learning_rate", float, 0.001),
            gp_weight=get(cfg, "gan.lambda", float, 10.0),
            rating_weight=get(cfg, "gan.psi", float, 10.0),
            d_steps_per_g_step=get(cfg, "gan.d_steps", int, 5),
            batch_size=get(cfg, "gan.batch_size", int, 1),
            conditional=get(cfg, "gan.conditional", as_bool, False),
            seed=seed,
            thresholds=th,
            arch=arch,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def rec_config(cfg, seed: int, adversarial: bool = False) -> RecTrainConfig:
    adv = None
    if adversarial or "rec.adv_eps" in cfg or "rec.adv_weight" in cfg:
        adv = AdversarialConfig(get(cfg, "rec.adv_eps", float, 0.5), get(cfg, "rec.adv_weight", float, 1.0))
    try:
        return RecTrainConfig(
            d=get(cfg, "rec.d", int, 32),
            learning_rate=get(cfg, "rec.learning_rate", float, 0.05),
            epochs=get(cfg, "rec.epochs", int, 30),
            negatives_per_positive=get(cfg, "rec.negatives", int, 1),
            l2=get(cfg, "rec.l2", float, 1e-4),
            adversarial=adv,
            seed=seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def experiment_spec(cfg) -> ExperimentSpec:
    seed = get(cfg, "seed", int, 0)
    th = thresholds(cfg, og_default=max(get(cfg, "thresholds.o_u", int, 6), 1))
    gan = gan_config(cfg, AttackThresholds(), seed)
    rec = rec_config(cfg, seed)
    fractions = get(cfg, "attack.fractions", lambda s: tuple(float(x) for x in as_list(s)), None)
    if fractions is None:
        fractions = get(cfg, "attack.fraction", lambda s: (float(s),), (0.01, 0.02, 0.03, 0.04, 0.05))
    try:
        return ExperimentSpec(
            data_path=get(cfg, "data.path"),
            data_format=get(cfg, "data.format", str, "tsv"),
            train_fraction=get(cfg, "data.train_fraction", float, 0.7),
            attacks=get(cfg, "attack.kinds", as_list, ("GOAT", "Ave", "Ran", "Band", "UM")),
            fractions=fractions,
            target_mode=get(cfg, "attack.target_mode", str, "multiple"),
            target_rating=get(cfg, "attack.target_rating", int, 4),
            recommenders=get(cfg, "rec.kinds", as_list, ("BPR", "APR")),
            runs=get(cfg, "exp.runs", int, 10),
            o_u=th.o_u,
            o_g=get(cfg, "thresholds.o_g", int, None),
            o_i=th.o_i,
            p_s=th.p_s,
            gan=gan,
            rec=replace(rec, adversarial=None),
            detectors=get(cfg, "detect.kinds", as_list, ()),
            detect_folds=get(cfg, "detect.folds", int, 5),
            seed=seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
