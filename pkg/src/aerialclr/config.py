"""Run configuration: typed flat key=value files, presets, env overrides.

A config file is a flat text document of `key = value` lines ('#' starts a
comment).  Keys mirror the RunConfig fields (nested blocks are flattened
with cld_/mix_/seed_ prefixes) plus dataset paths and evaluation settings.
Unknown keys are rejected by name.  Environment variables of the form
AERIALCLR_<KEY> override file values; explicit CLI flags override both.

The `preset` key selects one of the five training strategies and installs
its published hyperparameters; any other key in the file then overrides the
preset value.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, fields, replace

from .cld import CLDConfig
from .mixgeo import MixConfig

ENV_PREFIX = "AERIALCLR_"

STRATEGIES = ("moco_v2", "moco_cld", "moco_geo", "geocld", "mixco")


@dataclass
class SeedPack:
    data: int = 0
    augment: int = 1
    init: int = 2
    kmeans: int = 3


@dataclass
class RunConfig:
    """Everything that determines a pretraining run."""

    strategy: str = "moco_v2"
    backbone: str = "resnet50"
    epochs: int = 200
    batch_size: int = 64
    lr_initial: float | None = None  # None -> 0.03 * batch_size / 256
    weight_decay: float = 1e-4
    sgd_momentum: float = 0.9
    tau_q: float = 0.2
    tau_g: float = 0.4
    momentum: float = 0.999   # key-encoder blend factor
    queue_size: int = 4096
    feat_dim: int = 128
    hidden_dim: int = 2048
    crop_size: int = 224
    checkpoint_interval: int = 50  # epochs between checkpoints
    knn_k: int = 20
    knn_t: float = 0.02
    deterministic: bool = True
    dtype: str = "float32"
    cld: CLDConfig = field(default_factory=CLDConfig)
    mix: MixConfig = field(default_factory=MixConfig)
    seeds: SeedPack = field(default_factory=SeedPack)

    @property
    def uses_cld(self) -> bool:
        return self.strategy in ("moco_cld", "geocld")

    @property
    def uses_geo(self) -> bool:
        return self.strategy in ("moco_geo", "geocld", "mixco")

    @property
    def uses_mixture(self) -> bool:
        return self.strategy == "mixco"

    @property
    def lr(self) -> float:
        if self.lr_initial is not None:
            return self.lr_initial
        return 0.03 * self.batch_size / 256.0

    def validate(self):
        """Collect every violation; raise one error naming all of them."""
        problems = []
        if self.strategy not in STRATEGIES:
            problems.append(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.backbone not in ("desk_cnn", "resnet50"):
            problems.append(f"backbone must be desk_cnn or resnet50, got {self.backbone!r}")
        if self.epochs < 1:
            problems.append(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            problems.append(f"batch_size must be >= 2, got {self.batch_size}")
        if self.lr_initial is not None and self.lr_initial <= 0:
            problems.append(f"lr_initial must be positive, got {self.lr_initial}")
        for name in ("tau_q", "tau_g"):
            v = getattr(self, name)
            if v <= 0:
                problems.append(f"{name} must be positive, got {v}")
        if not 0.0 <= self.momentum <= 1.0:
            problems.append(f"momentum must be in [0, 1], got {self.momentum}")
        if self.queue_size < self.batch_size:
            problems.append(
                f"queue_size {self.queue_size} must be >= batch_size {self.batch_size}")
        if self.dtype not in ("float32", "float64"):
            problems.append(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.checkpoint_interval < 1:
            problems.append(f"checkpoint_interval must be >= 1, got {self.checkpoint_interval}")
        if problems:
            raise ValueError("invalid config: " + "; ".join(problems))


@dataclass
class EvalConfig:
    probe_epochs: int = 100
    probe_batch: int = 256
    probe_lr: float = 30.0
    finetune_epochs: int = 200
    finetune_batch: int = 256
    finetune_lr: float = 0.01
    label_fraction: float = 1.0
    eval_crop: int = 224


PRESETS: dict[str, dict] = {
    "moco_v2": {"strategy": "moco_v2"},
    "moco_cld": {"strategy": "moco_cld", "cld_weight": 0.25, "cld_clusters": 32},
    "moco_geo": {"strategy": "moco_geo", "mix_gamma": 0.9},
    "geocld": {"strategy": "geocld", "cld_weight": 0.25, "cld_clusters": 32},
    "mixco": {"strategy": "mixco", "mix_gamma": 0.9, "mix_p": 0.3, "mix_alpha": 1.0},
}


def desk_overrides() -> dict:
    """Scaled-down settings for quick single-machine CPU runs."""
    return {
        "backbone": "desk_cnn",
        "crop_size": 64,
        "batch_size": 32,
        "epochs": 20,
        "queue_size": 256,
        "momentum": 0.99,
        "checkpoint_interval": 10,
        "lr_initial": 0.015,
        "probe_epochs": 40,
        "probe_batch": 128,
        "finetune_epochs": 20,
        "finetune_batch": 64,
        "eval_crop": 64,
    }


# ---------------------------------------------------------------------------
# flat schema
# ---------------------------------------------------------------------------

def _optional_float(s: str):
    return None if s.lower() in ("none", "") else float(s)


def _parse_bool(s: str) -> bool:
    low = s.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


# key -> (parser, default source); RunConfig keys carry their dataclass default
SCHEMA: dict[str, object] = {
    "preset": str,
    "strategy": str,
    "backbone": str,
    "epochs": int,
    "batch_size": int,
    "lr_initial": _optional_float,
    "weight_decay": float,
    "sgd_momentum": float,
    "tau_q": float,
    "tau_g": float,
    "momentum": float,
    "queue_size": int,
    "feat_dim": int,
    "hidden_dim": int,
    "crop_size": int,
    "checkpoint_interval": int,
    "knn_k": int,
    "knn_t": float,
    "deterministic": _parse_bool,
    "dtype": str,
    "cld_weight": float,
    "cld_clusters": int,
    "cld_iters": int,
    "mix_gamma": float,
    "mix_p": float,
    "mix_alpha": float,
    "seed_data": int,
    "seed_augment": int,
    "seed_init": int,
    "seed_kmeans": int,
    # paths and evaluation settings
    "data_dir": str,
    "downstream_dir": str,
    "out_dir": str,
    "probe_epochs": int,
    "probe_batch": int,
    "probe_lr": float,
    "finetune_epochs": int,
    "finetune_batch": int,
    "finetune_lr": float,
    "label_fraction": float,
    "eval_crop": int,
}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse `key = value` lines into a typed dict; unknown keys rejected."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in SCHEMA:
            raise ValueError(f"{source}:{lineno}: unknown config key {key!r}")
        parser = SCHEMA[key]
        try:
            out[key] = parser(value)
        except ValueError as e:
            raise ValueError(f"{source}:{lineno}: bad value for {key}: {e}") from e
    return out


def load_config_file(path) -> dict:
    with open(path) as f:
        return parse_config_text(f.read(), source=str(path))


def env_overrides(environ=None) -> dict:
    """Typed overrides harvested from AERIALCLR_* environment variables."""
    if environ is None:
        environ = os.environ
    out = {}
    for key, parser in SCHEMA.items():
        raw = environ.get(ENV_PREFIX + key.upper())
        if raw is not None:
            out[key] = parser(raw)
    return out


def resolve(file_values: dict | None = None, env: dict | None = None,
            cli: dict | None = None, desk: bool = False) -> dict:
    """Merge flat values by precedence: preset < desk < file < env < cli."""
    merged: dict = {}
    layers = [file_values or {}, env if env is not None else env_overrides(), cli or {}]
    preset = None
    for layer in layers:
        if "preset" in layer and layer["preset"] is not None:
            preset = layer["preset"]
    if preset is not None:
        if preset not in PRESETS:
            raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        merged.update(PRESETS[preset])
        merged["preset"] = preset
    if desk:
        merged.update(desk_overrides())
    for layer in layers:
        for k, v in layer.items():
            if v is not None:
                merged[k] = v
    return merged


def build_run_config(flat: dict) -> RunConfig:
    """Inflate the flat dict into a validated RunConfig."""
    run_fields = {f.name for f in fields(RunConfig)} - {"cld", "mix", "seeds"}
    kwargs = {k: v for k, v in flat.items() if k in run_fields}
    cld_kwargs = {k[len("cld_"):]: v for k, v in flat.items() if k.startswith("cld_")}
    mix_kwargs = {k[len("mix_"):]: v for k, v in flat.items() if k.startswith("mix_")}
    seed_kwargs = {k[len("seed_"):]: v for k, v in flat.items() if k.startswith("seed_")}
    cfg = RunConfig(cld=CLDConfig(**cld_kwargs), mix=MixConfig(**mix_kwargs),
                    seeds=SeedPack(**seed_kwargs), **kwargs)
    cfg.validate()
    return cfg


def build_eval_config(flat: dict) -> EvalConfig:
    ev_fields = {f.name for f in fields(EvalConfig)}
    cfg = EvalConfig(**{k: v for k, v in flat.items() if k in ev_fields})
    if not 0.0 < cfg.label_fraction <= 1.0:
        raise ValueError(f"label_fraction must be in (0, 1], got {cfg.label_fraction}")
    return cfg


def flatten_run_config(cfg: RunConfig, preset: str | None = None) -> dict:
    flat = {}
    if preset is not None:
        flat["preset"] = preset
    for f in fields(RunConfig):
        if f.name in ("cld", "mix", "seeds"):
            continue
        flat[f.name] = getattr(cfg, f.name)
    for f in fields(CLDConfig):
        flat[f"cld_{f.name}"] = getattr(cfg.cld, f.name)
    for f in fields(MixConfig):
        flat[f"mix_{f.name}"] = getattr(cfg.mix, f.name)
    for f in fields(SeedPack):
        flat[f"seed_{f.name}"] = getattr(cfg.seeds, f.name)
    return flat


def format_config_text(flat: dict) -> str:
    """Serialize a flat dict back to the key=value format, sorted, stable."""
    lines = []
    for key in sorted(flat):
        v = flat[key]
        if v is None:
            v = "none"
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v) if math.isfinite(v) else str(v)
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"


def with_seed_offset(cfg: RunConfig, offset: int) -> RunConfig:
    """Shift every RNG stream by a fixed offset (for seed-replicate runs)."""
    s = cfg.seeds
    return replace(cfg, seeds=SeedPack(data=s.data + offset, augment=s.augment + offset,
                                       init=s.init + offset, kmeans=s.kmeans + offset))
