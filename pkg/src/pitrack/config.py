"""Flat key=value configuration files with dotted section prefixes.

One file can configure the simulator (sim.*), the model (model.*), the
training loop (train.*) and evaluation (eval.*). Unknown keys are rejected
so typos fail loudly. CLI --set overrides use the same keys.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .recurrent import ModelConfig
from .sim import SimConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """Bad configuration file or override."""


def _to_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


def _to_opt_int(raw: str):
    return None if raw.strip().lower() in ("none", "auto") else int(raw)


def _to_floats(raw: str) -> list:
    return [float(x) for x in raw.split(",") if x.strip()]


# key -> (section, field name, parser)
KEYS = {
    "sim.frames": ("sim", "frames", int),
    "sim.frame_period": ("sim", "frame_period", float),
    "sim.slots": ("sim", "slots", int),
    "sim.max_concurrent": ("sim", "max_concurrent", int),
    "sim.birth_rate": ("sim", "birth_rate", float),
    "sim.mean_lifetime": ("sim", "mean_lifetime", float),
    "sim.max_angular_speed": ("sim", "max_angular_speed", float),
    "sim.noise_deg": ("sim", "noise_deg", float),
    "sim.miss_prob": ("sim", "miss_prob", float),
    "sim.false_alarm_prob": ("sim", "false_alarm_prob", float),
    "sim.shuffle_prob": ("sim", "shuffle_prob", float),
    "sim.seed": ("sim", "seed", int),
    "model.slots": ("model", "slots", int),
    "model.d": ("model", "d", int),
    "model.n_heads": ("model", "n_heads", int),
    "model.gru_width": ("model", "gru_width", _to_opt_int),
    "model.mlp_hidden": ("model", "mlp_hidden", _to_opt_int),
    "model.reset_threshold": ("model", "reset_threshold", float),
    "model.output_projection": ("model", "output_projection", _to_bool),
    "model.gate_candidate": ("model", "gate_candidate", _to_bool),
    "model.baseline_width": ("model", "baseline_width", _to_opt_int),
    "train.train_data": ("train", "train_data", str),
    "train.val_data": ("train", "val_data", str),
    "train.model_kind": ("train", "model_kind", str),
    "train.window": ("train", "window", int),
    "train.aux_fpit_weight": ("train", "aux_fpit_weight", float),
    "train.step_size": ("train", "step_size", float),
    "train.beta1": ("train", "beta1", float),
    "train.beta2": ("train", "beta2", float),
    "train.epsilon": ("train", "epsilon", float),
    "train.batch_scenes": ("train", "batch_scenes", int),
    "train.truncation": ("train", "truncation", int),
    "train.epochs": ("train", "epochs", int),
    "train.seed": ("train", "seed", int),
    "train.checkpoint": ("train", "checkpoint", str),
    "train.log": ("train", "log", str),
    "train.eval_every": ("train", "eval_every", int),
    "train.precision": ("train", "precision", str),
    "eval.gate_deg": ("eval", "gate_deg", float),
    "eval.activity_threshold": ("eval", "activity_threshold", float),
    "eval.thresholds": ("eval", "thresholds", _to_floats),
}


@dataclass
class EvalOptions:
    gate_deg: float = 20.0
    activity_threshold: float = 0.5
    thresholds: list = field(
        default_factory=lambda: [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
    )


def parse_file(path) -> dict:
    """Read `key = value` lines; blank lines and # comments are skipped."""
    raw: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}: line {lineno}: expected key = value")
            key, _, value = stripped.partition("=")
            raw[key.strip()] = value.strip()
    return raw


def apply_overrides(raw: dict, overrides) -> dict:
    out = dict(raw)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, _, value = item.partition("=")
        out[key.strip()] = value.strip()
    return out


def build(raw: dict):
    """Typed configs from raw strings; unknown keys are an error."""
    sections: dict[str, dict] = {"sim": {}, "model": {}, "train": {}, "eval": {}}
    for key, value in raw.items():
        if key not in KEYS:
            raise ConfigError(f"unknown configuration key: {key!r}")
        section, name, parse = KEYS[key]
        try:
            sections[section][name] = parse(value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from exc
    try:
        sim_cfg = SimConfig(**sections["sim"])
        model_cfg = ModelConfig(**sections["model"])
        train_cfg = TrainConfig(model=model_cfg, **sections["train"])
        eval_opts = EvalOptions(**sections["eval"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return sim_cfg, model_cfg, train_cfg, eval_opts


def load(path=None, overrides=None):
    raw = parse_file(path) if path else {}
    return build(apply_overrides(raw, overrides))
