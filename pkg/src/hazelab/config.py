"""Run configuration: a JSON document with strict validation.

Every field is optional and defaulted; unknown keys are rejected.  Error
messages carry the dotted field path (e.g. `haze.beta`).  CLI flags override
config-file values.
"""

from __future__ import annotations

import copy
import json

from .errors import ConfigError
from .network import EncoderConfig, ModelConfig
from .training import TrainConfig

DEFAULTS = {
    "seed": 0,
    "encoder": "tiny",
    "head": "kmodel",
    "image_size": [64, 64],
    "haze": {
        "beta": [0.1, 0.2, 0.3, 0.4],
        "hue": [0.0, 1.0],
        "saturation": [0.0, 0.5],
        "value": [0.6, 1.0],
    },
    "train": {
        "batch_size": 8,
        "learning_rate": 1e-4,
        "beta1": 0.9,
        "beta2": 0.999,
        "patience": 7,
        "max_epochs": 200,
        "convergence_window": 3,
        "convergence_threshold": 1e-3,
    },
    "data": {
        "manifest": None,
        "procedural_train": 50,
        "procedural_val": 10,
        "procedural_test": 20,
        "max_depth": 50.0,
        "crop_left": 0.15,
        "crop_bottom": 0.2,
    },
    "out_dir": "hazelab_run",
}


def _merge(defaults, overrides, path=""):
    if not isinstance(overrides, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    merged = copy.deepcopy(defaults)
    for key, value in overrides.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"{where}: unknown configuration key")
        if isinstance(defaults[key], dict):
            merged[key] = _merge(defaults[key], value, where)
        else:
            merged[key] = value
    return merged


def _require_number(cfg, path, lo=None, hi=None, integer=False):
    node = cfg
    for part in path.split("."):
        node = node[part]
    ok = isinstance(node, (int, float)) and not isinstance(node, bool)
    if integer:
        ok = isinstance(node, int) and not isinstance(node, bool)
    if not ok:
        raise ConfigError(f"{path}: expected {'an integer' if integer else 'a number'}, got {node!r}")
    if lo is not None and node < lo:
        raise ConfigError(f"{path}: must be >= {lo}, got {node}")
    if hi is not None and node > hi:
        raise ConfigError(f"{path}: must be <= {hi}, got {node}")
    return node


def _require_range(cfg, path):
    node = cfg
    for part in path.split("."):
        node = node[part]
    if (
        not isinstance(node, list)
        or len(node) != 2
        or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in node)
    ):
        raise ConfigError(f"{path}: expected [low, high]")
    lo, hi = float(node[0]), float(node[1])
    if not (0.0 <= lo <= hi <= 1.0):
        raise ConfigError(f"{path}: must satisfy 0 <= low <= high <= 1, got {node}")
    return (lo, hi)


class RunConfig:
    def __init__(self, doc: dict):
        cfg = _merge(DEFAULTS, doc)
        self.raw = cfg

        self.seed = _require_number(cfg, "seed", lo=0, integer=True)
        if cfg["encoder"] not in ("tiny", "vgg16"):
            raise ConfigError(f"encoder: must be tiny|vgg16, got {cfg['encoder']!r}")
        if cfg["head"] not in ("kmodel", "direct"):
            raise ConfigError(f"head: must be kmodel|direct, got {cfg['head']!r}")
        self.encoder = cfg["encoder"]
        self.head = cfg["head"]

        size = cfg["image_size"]
        if not (isinstance(size, list) and len(size) == 2 and all(isinstance(v, int) for v in size)):
            raise ConfigError(f"image_size: expected [H, W], got {size!r}")
        if any(v < 32 or v % 32 for v in size):
            raise ConfigError(f"image_size: H and W must be positive multiples of 32, got {size}")
        self.image_size = (size[0], size[1])

        betas = cfg["haze"]["beta"]
        if not isinstance(betas, list) or not betas:
            raise ConfigError("haze.beta: expected a non-empty list of coefficients")
        for i, b in enumerate(betas):
            if not isinstance(b, (int, float)) or isinstance(b, bool) or b < 0:
                raise ConfigError(f"haze.beta: entries must be nonnegative numbers, got {b!r}")
        self.betas = tuple(float(b) for b in betas)
        self.hue = _require_range(cfg, "haze.hue")
        self.saturation = _require_range(cfg, "haze.saturation")
        self.value = _require_range(cfg, "haze.value")

        _require_number(cfg, "train.batch_size", lo=1, integer=True)
        _require_number(cfg, "train.learning_rate", lo=0.0)
        _require_number(cfg, "train.beta1", lo=0.0, hi=1.0)
        _require_number(cfg, "train.beta2", lo=0.0, hi=1.0)
        _require_number(cfg, "train.patience", lo=1, integer=True)
        _require_number(cfg, "train.max_epochs", lo=1, integer=True)
        _require_number(cfg, "train.convergence_window", lo=1, integer=True)
        threshold = _require_number(cfg, "train.convergence_threshold")
        if threshold <= 0:
            raise ConfigError(f"train.convergence_threshold: must be > 0, got {threshold}")

        manifest = cfg["data"]["manifest"]
        if manifest is not None and not isinstance(manifest, str):
            raise ConfigError(f"data.manifest: expected a path string or null, got {manifest!r}")
        self.manifest = manifest
        _require_number(cfg, "data.procedural_train", lo=0, integer=True)
        _require_number(cfg, "data.procedural_val", lo=0, integer=True)
        _require_number(cfg, "data.procedural_test", lo=0, integer=True)
        _require_number(cfg, "data.max_depth", lo=1.0)
        for key in ("data.crop_left", "data.crop_bottom"):
            v = _require_number(cfg, key, lo=0.0)
            if v >= 0.5:
                raise ConfigError(f"{key}: must be < 0.5, got {v}")
        if not isinstance(cfg["out_dir"], str) or not cfg["out_dir"]:
            raise ConfigError(f"out_dir: expected a non-empty path string")
        self.out_dir = cfg["out_dir"]

    # -- derived objects --------------------------------------------------------

    def train_config(self) -> TrainConfig:
        t = self.raw["train"]
        return TrainConfig(
            batch_size=t["batch_size"],
            learning_rate=float(t["learning_rate"]),
            beta1=float(t["beta1"]),
            beta2=float(t["beta2"]),
            patience=t["patience"],
            max_epochs=t["max_epochs"],
            convergence_window=t["convergence_window"],
            convergence_threshold=float(t["convergence_threshold"]),
            seed=self.seed,
            betas=self.betas,
            hue=self.hue,
            saturation=self.saturation,
            value=self.value,
        )

    def model_config(self, kind: str = "full") -> ModelConfig:
        return ModelConfig(EncoderConfig.preset(self.encoder), head=self.head, kind=kind)

    def sources(self, split: str):
        """Scene sources for a split: manifest-backed if configured, else procedural."""
        from .datasets import manifest_sources, split_procedural_sources

        data = self.raw["data"]
        if self.manifest is not None:
            try:
                found = manifest_sources(
                    self.manifest, split, self.image_size, data["crop_left"], data["crop_bottom"]
                )
            except FileNotFoundError:
                raise ConfigError(f"data.manifest: file not found: {self.manifest}")
            if not found:
                raise ConfigError(f"data.manifest: no entries with split {split!r}")
            return found
        counts = {
            "train": data["procedural_train"],
            "val": data["procedural_val"],
            "test": data["procedural_test"],
        }
        sources = split_procedural_sources(counts, self.seed, self.image_size, data["max_depth"])[split]
        if not sources:
            raise ConfigError(f"data.procedural_{split}: no sources configured for split {split!r}")
        return sources


def load_run_config(path=None, overrides: dict | None = None) -> RunConfig:
    doc = {}
    if path is not None:
        try:
            with open(path) as f:
                doc = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config: file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config: invalid JSON in {path} ({e})")
        if not isinstance(doc, dict):
            raise ConfigError("config: top level must be a JSON object")
    if overrides:
        doc = _apply_overrides(doc, overrides)
    return RunConfig(doc)


def _apply_overrides(doc: dict, overrides: dict) -> dict:
    """Overrides use dotted paths, e.g. {'train.max_epochs': 5}."""
    doc = copy.deepcopy(doc)
    for dotted, value in overrides.items():
        node = doc
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{dotted}: cannot override a scalar with an object")
        node[parts[-1]] = value
    return doc
