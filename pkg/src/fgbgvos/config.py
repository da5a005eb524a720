"""Flat run configuration shared by the CLI commands.

Config files hold one ``key = value`` pair per line (``#`` starts a
comment); every knob of the pipeline is addressable this way and any
unknown key is rejected. CLI flags override file values. Defaults are
the dataclass defaults below.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .ensembler import EnsemblerConfig
from .errors import InvalidConfigError
from .inference import InferenceConfig
from .model import ModelConfig
from .training import TrainConfig


@dataclass
class RunConfig:
    # model
    embedding_dim: int = 32
    encoder_width: int = 32
    stride: int = 4
    windows: tuple[int, ...] = (2, 4, 6, 8, 10, 12)
    stage_widths: tuple[int, ...] = (128, 256, 256)
    context_width: int = 128
    decoder_width: int = 128
    use_background: bool = True
    # training
    lr: float = 0.01
    momentum: float = 0.9
    steps: int = 1000
    batch_size: int = 1
    crop_size: int = 64
    n_current: int = 3
    bootstrap_ratio: float = 0.15
    min_fg_pixels: int | None = None
    max_retries: int = 10
    aug_scale_min: float = 1.0
    aug_scale_max: float = 1.3
    aug_flip: bool = True
    # inference
    scales: tuple[float, ...] = (1.0,)
    flip: bool = False
    # evaluation
    tolerance: int | None = None
    # everywhere
    seed: int = 0

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            embedding_dim=self.embedding_dim,
            encoder_width=self.encoder_width,
            stride=self.stride,
            windows=self.windows,
            use_background=self.use_background,
            ensembler=EnsemblerConfig(
                stage_widths=self.stage_widths,
                context_width=self.context_width,
                decoder_width=self.decoder_width,
            ),
        ).validate()

    def train_config(self, **overrides) -> TrainConfig:
        cfg = TrainConfig(
            lr=self.lr,
            momentum=self.momentum,
            steps=self.steps,
            batch_size=self.batch_size,
            crop_size=self.crop_size,
            n_current=self.n_current,
            bootstrap_ratio=self.bootstrap_ratio,
            min_fg_pixels=self.min_fg_pixels,
            max_retries=self.max_retries,
            aug_scale=(self.aug_scale_min, self.aug_scale_max),
            aug_flip=self.aug_flip,
            seed=self.seed,
        )
        for key, value in overrides.items():
            setattr(cfg, key, value)
        return cfg.validate()

    def inference_config(self) -> InferenceConfig:
        return InferenceConfig(scales=self.scales, flip=self.flip).validate()


def _parse_value(name: str, raw: str, default) -> object:
    raw = raw.strip()
    if raw.lower() in ("none", "null") and name in ("min_fg_pixels", "tolerance"):
        return None
    try:
        if isinstance(default, bool):
            if raw.lower() in ("true", "1", "yes", "on"):
                return True
            if raw.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int) or (default is None and name in ("min_fg_pixels", "tolerance")):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            elem = float if any(isinstance(v, float) for v in default) else int
            return tuple(elem(part) for part in raw.split(",") if part.strip())
    except ValueError as exc:
        raise InvalidConfigError(f"bad value for {name!r}: {raw!r}") from exc
    return raw


def load_run_config(
    path: str | Path | None = None,
    overrides: dict[str, str] | None = None,
) -> RunConfig:
    """Build a RunConfig from an optional file plus key=value overrides."""
    cfg = RunConfig()
    defaults = {f.name: getattr(cfg, f.name) for f in fields(RunConfig)}

    def apply(key: str, raw: str, where: str) -> None:
        key = key.strip()
        if key not in defaults:
            raise InvalidConfigError(f"unknown config key {key!r} ({where})")
        setattr(cfg, key, _parse_value(key, raw, defaults[key]))

    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise InvalidConfigError(f"config file not found: {p}")
        for lineno, line in enumerate(p.read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidConfigError(f"{p}:{lineno}: expected 'key = value'")
            key, raw = line.split("=", 1)
            apply(key, raw, f"{p}:{lineno}")
    for key, raw in (overrides or {}).items():
        apply(key, raw, "command line")
    return cfg
