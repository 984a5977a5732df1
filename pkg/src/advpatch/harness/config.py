"""One JSON config file drives every command.

A config file holds overrides over `DEFAULTS`; missing keys fall back,
unknown keys are rejected. The experiment `seed` (or the --seed override)
feeds every stochastic stage, so a section-level attack seed in the file
is replaced by it.
"""

import copy
import dataclasses
import hashlib
import json
from pathlib import Path

from ..attack import AttackConfig, AttackError, attack_config_from_dict
from ..metrics import MetricsConfig, MetricsError
from ..scenegen import SceneConfig, SceneConfigError


class ConfigError(Exception):
    pass


class GateFailure(Exception):
    """A quality gate failed; the CLI maps this to exit code 3."""


ABLATION_VARIANTS = ("full", "fixed_t_o", "no_dpm", "no_at", "no_af",
                     "no_ltv", "no_lc")

DEFAULTS = {
    "seed": 0,
    "out_dir": "runs/exp",
    # null paths resolve to subdirectories of out_dir
    "paths": {"dataset": None, "victims": None, "patch": None},
    "dataset": {
        "count": 80,
        "width": 256,
        "height": 192,
        "base_seed": 100,
        "split_ratios": [0.6, 0.2, 0.2],
        "split_seed": 0,
        "max_obstacles": 3,
        "decals": True,
    },
    "victims": {
        # [epochs, lr] stages at the dataset resolution
        "mde_train": [[16, 2e-3], [8, 5e-4]],
        "ss_train": [[8, 2e-3], [2, 5e-4]],
        "batch_size": 4,
        "width_mult": 1.0,
        "flip": True,
        "gate_mde_rel_err": 0.10,
        "gate_ss_road_iou": 0.90,
    },
    "attack": {},   # AttackConfig field overrides (see attack.py)
    "metrics": {
        "rel_ed_threshold": 0.25,
        "road_class": 0,
        "target_classes": [3, 4, 5],
    },
    "evaluation": {
        # "artifact" loads paths.patch; or a baseline: naive/artistic/random
        "patch": "artifact",
        "overlay_count": 4,
        "distort": False,
        "max_resample": 10,
    },
    "sweep": {
        "forward": [1.2, 1.8, 2.4, 3.0, 3.6],
        "lateral": [-1.6, -0.8, 0.0, 0.8, 1.6],
    },
    "approach": {
        "far": 4.0,
        "near": 1.2,
        "step": 0.2,
        "lateral": 0.0,
        "scene_seed": 7,
        "max_obstacles": 0,   # nothing may drive over the patch mid-sequence
    },
    "ablation": {
        "variants": list(ABLATION_VARIANTS),
        "distort": True,
    },
}


def _merge(defaults, override, where):
    """Recursive dict merge; unknown keys are config errors."""
    out = copy.deepcopy(defaults)
    for key, value in override.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {where}{key}")
        if isinstance(defaults[key], dict) and key != "attack":
            if not isinstance(value, dict):
                raise ConfigError(f"{where}{key} must be an object")
            out[key] = _merge(defaults[key], value, f"{where}{key}.")
        else:
            out[key] = copy.deepcopy(value)
    return out


def _require(cond, message):
    if not cond:
        raise ConfigError(message)


def _check_stages(stages, where):
    _require(isinstance(stages, list), f"{where} must be a list of stages")
    for st in stages:
        _require(isinstance(st, list) and len(st) == 2,
                 f"{where} stages are [epochs, lr] pairs")
        epochs, lr = st
        _require(isinstance(epochs, int) and epochs >= 1,
                 f"{where}: epochs must be a positive integer")
        _require(isinstance(lr, (int, float)) and lr > 0,
                 f"{where}: lr must be positive")


class ExperimentConfig:
    """Validated config with typed accessors for the library layers."""

    def __init__(self, raw: dict, source: str | None = None):
        self.raw = raw
        self.source = source
        self._validate()

    # -- plumbing

    def config_hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    @property
    def out_dir(self) -> Path:
        return Path(self.raw["out_dir"])

    def path(self, name: str) -> Path:
        """paths.<name>, defaulting to out_dir/<name>."""
        value = self.raw["paths"][name]
        return Path(value) if value else self.out_dir / name

    def section(self, name: str) -> dict:
        return self.raw[name]

    # -- typed views

    def scene_config(self, **overrides) -> SceneConfig:
        ds = self.raw["dataset"]
        kw = dict(width=ds["width"], height=ds["height"],
                  max_obstacles=ds["max_obstacles"], decals=ds["decals"])
        kw.update(overrides)
        return SceneConfig(**kw)

    def attack_config(self, seed: int) -> AttackConfig:
        merged = dict(self.raw["attack"])
        merged["seed"] = seed
        try:
            return attack_config_from_dict(merged)
        except AttackError as exc:
            raise ConfigError(f"attack section: {exc}") from exc

    def metrics_config(self) -> MetricsConfig:
        m = self.raw["metrics"]
        try:
            return MetricsConfig(
                rel_ed_threshold=m["rel_ed_threshold"],
                road_class=m["road_class"],
                target_classes=tuple(m["target_classes"]))
        except MetricsError as exc:
            raise ConfigError(f"metrics section: {exc}") from exc

    # -- validation

    def _validate(self) -> None:
        r = self.raw
        _require(isinstance(r["seed"], int), "seed must be an integer")
        _require(isinstance(r["out_dir"], str) and r["out_dir"],
                 "out_dir must be a non-empty string")
        for key, value in r["paths"].items():
            _require(value is None or (isinstance(value, str) and value),
                     f"paths.{key} must be null or a non-empty string")

        ds = r["dataset"]
        _require(isinstance(ds["count"], int) and ds["count"] >= 5,
                 "dataset.count must be an integer >= 5")
        _require(isinstance(ds["base_seed"], int), "dataset.base_seed must be an integer")
        _require(isinstance(ds["split_seed"], int), "dataset.split_seed must be an integer")
        ratios = ds["split_ratios"]
        _require(isinstance(ratios, list) and len(ratios) == 3,
                 "dataset.split_ratios must have three entries")
        _require(all(isinstance(x, (int, float)) and x >= 0 for x in ratios)
                 and ratios[0] > 0, "dataset.split_ratios must be non-negative, train > 0")
        _require(abs(sum(ratios) - 1.0) < 1e-9, "dataset.split_ratios must sum to 1")
        _require(ds["width"] % 8 == 0 and ds["height"] % 8 == 0,
                 "dataset.width and height must be multiples of 8 "
                 "(the victims downsample three times)")

        vs = r["victims"]
        for key in ("mde_train", "ss_train"):
            _check_stages(vs[key], f"victims.{key}")
        _require(vs["mde_train"] and vs["ss_train"],
                 "victims need at least one training stage")
        _require(isinstance(vs["batch_size"], int) and vs["batch_size"] >= 1,
                 "victims.batch_size must be a positive integer")
        _require(vs["width_mult"] > 0, "victims.width_mult must be positive")
        _require(isinstance(vs["flip"], bool), "victims.flip must be a boolean")
        _require(0 < vs["gate_mde_rel_err"] < 1, "victims.gate_mde_rel_err outside (0, 1)")
        _require(0 < vs["gate_ss_road_iou"] < 1, "victims.gate_ss_road_iou outside (0, 1)")

        ev = r["evaluation"]
        _require(ev["patch"] in ("artifact", "naive", "artistic", "random"),
                 f"evaluation.patch {ev['patch']!r} not one of artifact/naive/artistic/random")
        _require(isinstance(ev["overlay_count"], int) and ev["overlay_count"] >= 0,
                 "evaluation.overlay_count must be >= 0")
        _require(isinstance(ev["max_resample"], int) and ev["max_resample"] >= 1,
                 "evaluation.max_resample must be >= 1")
        _require(isinstance(ev["distort"], bool), "evaluation.distort must be a boolean")

        sw = r["sweep"]
        for axis in ("forward", "lateral"):
            vals = sw[axis]
            _require(isinstance(vals, list) and vals
                     and all(isinstance(x, (int, float)) for x in vals),
                     f"sweep.{axis} must be a non-empty list of numbers")

        ap = r["approach"]
        _require(ap["far"] > ap["near"] > 0, "approach needs far > near > 0")
        _require(ap["step"] > 0, "approach.step must be positive")
        _require(isinstance(ap["scene_seed"], int), "approach.scene_seed must be an integer")
        _require(isinstance(ap["max_obstacles"], int) and ap["max_obstacles"] >= 0,
                 "approach.max_obstacles must be >= 0")

        ab = r["ablation"]
        unknown = set(ab["variants"]) - set(ABLATION_VARIANTS)
        _require(not unknown, f"unknown ablation variants: {sorted(unknown)}")
        _require("full" in ab["variants"], "ablation.variants must include 'full'")
        _require(isinstance(ab["distort"], bool), "ablation.distort must be a boolean")

        # the heavier sections validate through their own constructors
        self.attack_config(seed=0)
        self.metrics_config()
        try:
            self.scene_config().validate()
        except SceneConfigError as exc:
            raise ConfigError(f"dataset section: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    merged = _merge(DEFAULTS, data, "")
    return ExperimentConfig(merged, source=str(path))


def default_config(**overrides) -> ExperimentConfig:
    """Programmatic config for tests; overrides follow the file layout."""
    merged = _merge(DEFAULTS, overrides, "")
    return ExperimentConfig(merged)
