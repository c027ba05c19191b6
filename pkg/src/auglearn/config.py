"""Run configuration: one JSON file describes a whole experiment.

Schema (all sections optional unless noted):

    {
      "seed": 0,
      "train": { ... TrainConfig fields ..., "hypergrad": { ... } },
      "data": {
        "path": "where to load/save the dataset directory",
        "generate": {"classes", "samples_per_class", "image_hw", "domains": [...]},
        "holdout": "domain id left out of training"
      },
      "attack": {"epsilons": [0.0, ...]}
    }

The single top-level seed drives everything: dataset generation, parameter
initialization, splits, and batch order. Unknown keys anywhere are errors;
a config that loads is a config that runs. Dotted-path overrides
("train.inner_lr=0.01") come from the command line; values parse as JSON
with a fallback to plain strings.

When train.hypergrad.alpha is not given it defaults to the inner learning
rate.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional

from .data import DomainTransform, SyntheticSpec
from .errors import ConfigError, ContractViolation
from .evalattack import AttackConfig
from .hypergrad import HypergradConfig
from .trainer import TrainConfig


@dataclass(frozen=True)
class DataConfig:
    path: Optional[str] = None
    generate: Optional[SyntheticSpec] = None
    holdout: Optional[str] = None


@dataclass(frozen=True)
class RunConfig:
    seed: int
    train: TrainConfig
    data: DataConfig
    attack: AttackConfig


def _expect_dict(v, where: str) -> dict:
    if not isinstance(v, dict):
        raise ConfigError(f"{where} must be a JSON object, got {type(v).__name__}")
    return v


def _reject_unknown(d: dict, known, where: str) -> None:
    unknown = set(d) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where}; known: {sorted(known)}")


def _tuple_of(v, n, where: str, cast=float) -> tuple:
    if not isinstance(v, (list, tuple)) or (n is not None and len(v) != n):
        raise ConfigError(f"{where} must be a list of {n} values, got {v!r}")
    return tuple(cast(x) for x in v)


def hypergrad_from_dict(d: dict, default_alpha: float) -> HypergradConfig:
    d = _expect_dict(d, "train.hypergrad")
    known = ("estimator", "k", "alpha", "unroll_steps", "unroll_lr", "residual")
    _reject_unknown(d, known, "train.hypergrad")
    try:
        return HypergradConfig(
            estimator=str(d.get("estimator", "neumann")),
            k=int(d.get("k", 5)),
            alpha=float(d.get("alpha", default_alpha)),
            unroll_steps=int(d.get("unroll_steps", 100)),
            unroll_lr=float(d.get("unroll_lr", 0.1)),
            residual=bool(d.get("residual", False)),
        )
    except ContractViolation as e:
        raise ConfigError(f"train.hypergrad: {e}") from e


def train_from_dict(d: dict, seed: int) -> TrainConfig:
    d = _expect_dict(d, "train")
    known = (
        "mode", "inner_lr", "outer_lr", "inner_iters", "batch_size", "epochs",
        "weight_decay", "inner_decay", "outer_decay", "hypergrad", "clf_channels",
        "aug_channels", "aug_residual", "aug_identity", "augmented_outer",
        "dtype", "verbose",
    )
    _reject_unknown(d, known, "train")
    inner_lr = float(d.get("inner_lr", 1e-3))
    hg = hypergrad_from_dict(d.get("hypergrad", {}), default_alpha=inner_lr)

    def decay(key, default):
        v = d.get(key, default)
        t = _tuple_of(v, 2, f"train.{key}", cast=float)
        return (float(t[0]), int(t[1]))

    try:
        return TrainConfig(
            mode=str(d.get("mode", "auglearn")),
            inner_lr=inner_lr,
            outer_lr=float(d.get("outer_lr", 1e-3)),
            inner_iters=int(d.get("inner_iters", 1)),
            batch_size=int(d.get("batch_size", 16)),
            epochs=int(d.get("epochs", 1)),
            weight_decay=float(d.get("weight_decay", 5e-4)),
            inner_decay=decay("inner_decay", (0.1, 30)),
            outer_decay=decay("outer_decay", (0.1, 20)),
            seed=seed,
            hypergrad=hg,
            clf_channels=tuple(int(c) for c in _tuple_of(d.get("clf_channels", (20, 40, 80)), 3, "train.clf_channels", int)),
            aug_channels=tuple(int(c) for c in _tuple_of(d.get("aug_channels", (9, 9, 9)), 3, "train.aug_channels", int)),
            aug_residual=bool(d.get("aug_residual", False)),
            aug_identity=bool(d.get("aug_identity", False)),
            augmented_outer=bool(d.get("augmented_outer", False)),
            dtype=str(d.get("dtype", "float64")),
            verbose=bool(d.get("verbose", False)),
        )
    except ContractViolation as e:
        raise ConfigError(f"train: {e}") from e


def spec_from_dict(d: dict) -> SyntheticSpec:
    d = _expect_dict(d, "data.generate")
    known = ("classes", "samples_per_class", "image_hw", "domains")
    _reject_unknown(d, known, "data.generate")
    if "domains" not in d:
        raise ConfigError("data.generate needs a 'domains' list")
    doms = []
    for i, dd in enumerate(d["domains"]):
        dd = _expect_dict(dd, f"data.generate.domains[{i}]")
        dknown = ("id", "rotation_deg", "gains", "background", "texture")
        _reject_unknown(dd, dknown, f"data.generate.domains[{i}]")
        if "id" not in dd:
            raise ConfigError(f"data.generate.domains[{i}] needs an 'id'")
        try:
            doms.append(
                DomainTransform(
                    domain_id=str(dd["id"]),
                    rotation_deg=float(dd.get("rotation_deg", 0.0)),
                    gains=_tuple_of(dd.get("gains", (1.0, 1.0, 1.0)), 3, f"domains[{i}].gains"),
                    background=float(dd.get("background", 0.1)),
                    texture=float(dd.get("texture", 0.0)),
                )
            )
        except ContractViolation as e:
            raise ConfigError(f"data.generate.domains[{i}]: {e}") from e
    hw = _tuple_of(d.get("image_hw", (32, 32)), 2, "data.generate.image_hw", int)
    try:
        return SyntheticSpec(
            domains=tuple(doms),
            classes=int(d.get("classes", 10)),
            samples_per_class=int(d.get("samples_per_class", 64)),
            image_hw=(int(hw[0]), int(hw[1])),
        )
    except ContractViolation as e:
        raise ConfigError(f"data.generate: {e}") from e


def data_from_dict(d: dict) -> DataConfig:
    d = _expect_dict(d, "data")
    _reject_unknown(d, ("path", "generate", "holdout"), "data")
    gen = spec_from_dict(d["generate"]) if d.get("generate") is not None else None
    path = d.get("path")
    if path is None and gen is None:
        raise ConfigError("data needs at least one of 'path' or 'generate'")
    holdout = d.get("holdout")
    return DataConfig(
        path=str(path) if path is not None else None,
        generate=gen,
        holdout=str(holdout) if holdout is not None else None,
    )


def attack_from_dict(d: dict) -> AttackConfig:
    d = _expect_dict(d, "attack")
    _reject_unknown(d, ("epsilons",), "attack")
    try:
        if "epsilons" in d:
            return AttackConfig(epsilons=_tuple_of(d["epsilons"], None, "attack.epsilons"))
        return AttackConfig()
    except ContractViolation as e:
        raise ConfigError(f"attack: {e}") from e


def run_config_from_dict(raw: dict) -> RunConfig:
    raw = _expect_dict(raw, "config")
    _reject_unknown(raw, ("seed", "train", "data", "attack"), "config")
    if "data" not in raw:
        raise ConfigError("config needs a 'data' section")
    seed = int(raw.get("seed", 0))
    if seed < 0:
        raise ConfigError(f"seed must be >= 0, got {seed}")
    return RunConfig(
        seed=seed,
        train=train_from_dict(raw.get("train", {}), seed),
        data=data_from_dict(raw["data"]),
        attack=attack_from_dict(raw.get("attack", {})),
    )


def parse_override(text: str) -> tuple[list[str], object]:
    """Parse a ``dotted.path=value`` override; value is JSON when it parses."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like dotted.path=value")
    key, _, val = text.partition("=")
    key = key.strip()
    if not key:
        raise ConfigError(f"override {text!r} has an empty path")
    try:
        parsed = json.loads(val)
    except json.JSONDecodeError:
        parsed = val
    return key.split("."), parsed


def apply_override(raw: dict, path: list[str], value) -> None:
    """Set a dotted path in the raw config dict, creating objects on the way."""
    cur = raw
    for part in path[:-1]:
        nxt = cur.get(part)
        if nxt is None:
            nxt = {}
            cur[part] = nxt
        if not isinstance(nxt, dict):
            raise ConfigError(f"cannot descend into {part!r}: not an object")
        cur = nxt
    cur[path[-1]] = value


def load_run_config(path, overrides: list[str] = ()) -> RunConfig:
    """Load and validate a run config file, applying CLI overrides first."""
    try:
        with open(path) as f:
            raw = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    for text in overrides:
        keypath, value = parse_override(text)
        apply_override(raw, keypath, value)
    return run_config_from_dict(raw)


def run_config_to_dict(rc: RunConfig) -> dict:
    """The fully resolved config; reloadable by run_config_from_dict."""
    train = asdict(rc.train)
    del train["seed"]  # lives at the top level
    train["hypergrad"] = asdict(rc.train.hypergrad)
    gen = None
    if rc.data.generate is not None:
        sp = rc.data.generate
        gen = {
            "classes": sp.classes,
            "samples_per_class": sp.samples_per_class,
            "image_hw": list(sp.image_hw),
            "domains": [
                {
                    "id": d.domain_id,
                    "rotation_deg": d.rotation_deg,
                    "gains": list(d.gains),
                    "background": d.background,
                    "texture": d.texture,
                }
                for d in sp.domains
            ],
        }
    return {
        "seed": rc.seed,
        "train": train,
        "data": {"path": rc.data.path, "generate": gen, "holdout": rc.data.holdout},
        "attack": {"epsilons": list(rc.attack.epsilons)},
    }
