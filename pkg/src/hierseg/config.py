"""Run configuration: defaults, config-file parsing and CLI overrides.

The config file is plain text with flat dotted keys, one per line::

    # comment
    model.preset = desk-standard
    train.lr = 0.001
    train.crop = 64,64,16

Precedence is CLI overrides > config file > defaults, and every command that
writes outputs echoes the fully resolved configuration into its output
directory so a run can be re-executed exactly.
"""

from __future__ import annotations

from pathlib import Path

from hierseg.model import ModelConfig
from hierseg.train import TrainConfig


class ConfigError(ValueError):
    """Malformed config file or unknown/invalid key."""


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _parse_int3(text: str) -> tuple[int, int, int]:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3:
        raise ConfigError(f"expected three comma-separated integers, got {text!r}")
    return tuple(int(p) for p in parts)


# key -> (parser, default)
SCHEMA = {
    "seed": (int, 0),
    "model.preset": (str, "desk-standard"),
    "model.width_multiplier": (float, None),  # None: use the preset's value
    "train.lr": (float, 1e-3),
    "train.batch_size": (int, 8),
    "train.epochs": (int, 3000),
    "train.crop": (_parse_int3, (128, 128, 48)),
    "train.val_fraction": (float, 1.0 / 6.0),
    "train.val_every": (int, 1),
    "train.flip": (_parse_bool, True),
    "train.rotate": (_parse_bool, True),
    "train.random_crop": (_parse_bool, True),
    "train.fg_bias": (float, 0.5),
    "train.loss_eps": (float, 1e-5),
    "cv.folds": (int, 4),
    "infer.window": (_parse_int3, (256, 256, 48)),
    "infer.overlap": (float, 0.25),
    "preprocess.target_mm": (float, 1.0),
    "preprocess.smooth_sigma_spatial": (float, 1.0),
    "preprocess.smooth_sigma_range": (float, 0.1),
    "preprocess.p_low": (float, 1.0),
    "preprocess.p_high": (float, 99.0),
    "phantom.extents": (_parse_int3, (64, 64, 48)),
    "phantom.blobs": (int, 3),
}


def parse_config_file(path) -> dict:
    """Read ``key = value`` lines; '#' starts a comment."""
    values = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def parse_overrides(pairs) -> dict:
    values = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"override must look like key=value, got {pair!r}")
        key, _, value = pair.partition("=")
        values[key.strip()] = value.strip()
    return values


class RunConfig:
    """Fully resolved flat configuration with typed accessors."""

    def __init__(self, values: dict):
        self.values = values

    def __getitem__(self, key: str):
        return self.values[key]

    @classmethod
    def resolve(cls, config_file=None, overrides=None, seed=None) -> "RunConfig":
        raw = {}
        if config_file is not None:
            raw.update(parse_config_file(config_file))
        raw.update(parse_overrides(overrides))
        if seed is not None:
            raw["seed"] = str(seed)

        values = {}
        for key, (parser, default) in SCHEMA.items():
            if key in raw:
                try:
                    values[key] = parser(raw.pop(key))
                except ConfigError:
                    raise
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"bad value for {key}: {exc}") from exc
            else:
                values[key] = default
        if raw:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(raw))}")
        return cls(values)

    def model_config(self) -> ModelConfig:
        overrides = {}
        if self.values["model.width_multiplier"] is not None:
            overrides["width_multiplier"] = self.values["model.width_multiplier"]
        try:
            return ModelConfig.preset(self.values["model.preset"], **overrides)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def train_config(self) -> TrainConfig:
        v = self.values
        return TrainConfig(
            lr=v["train.lr"],
            batch_size=v["train.batch_size"],
            epochs=v["train.epochs"],
            crop_size=v["train.crop"],
            flip=v["train.flip"],
            rotate=v["train.rotate"],
            random_crop=v["train.random_crop"],
            fg_bias=v["train.fg_bias"],
            loss_eps=v["train.loss_eps"],
            seed=v["seed"],
            val_every=v["train.val_every"],
            window=v["infer.window"],
            overlap=v["infer.overlap"],
        )

    def echo(self, path) -> None:
        """Write the resolved configuration for byte-exact re-execution."""
        lines = []
        for key in sorted(self.values):
            value = self.values[key]
            if value is None:
                continue
            if isinstance(value, tuple):
                value = ",".join(str(x) for x in value)
            lines.append(f"{key} = {value}")
        Path(path).write_text("\n".join(lines) + "\n")
