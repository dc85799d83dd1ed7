"""Plain key=value run configuration.

Unknown keys are rejected. Every key has a default; the hyperparameter
defaults (learning rate 2.5e-3, mapping depth 8 large / 2 small, batch 16
at toy scale) follow the reference experiment table, with gamma defaulting
to the toy-scale 0.1. `channel_map=auto` resolves to the standard halving
map min(512, 16384/res); `mapping_depth=auto` resolves to 8 for
resolutions >= 128 and 2 below.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .synthesis import BlockVariant, GeneratorConfig, default_channel_map
from .training import LossConfig

_VARIANTS = {v.value: v for v in BlockVariant}
_PRECISIONS = {"f32": np.float32, "f64": np.float64}

DEFAULTS = {
    "resolution": "16",
    "channel_map": "auto",
    "variant": "skip",
    "r": "8",
    "style_dim": "512",
    "mapping_depth": "auto",
    "upsample": "nearest",
    "precision": "f32",
    "loss": "nonsat_r1",
    "gamma": "0.1",
    "lr": "0.0025",
    "steps": "500",
    "batch": "16",
    "seed": "0",
    "ema_halflife": "50",
}


def _parse_int(key, raw, minimum=None):
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None
    if minimum is not None and value < minimum:
        raise ConfigError(f"{key}: must be >= {minimum}, got {value}")
    return value


def _parse_float(key, raw):
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {raw!r}") from None


def _parse_channel_map(raw):
    cmap = {}
    for part in raw.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" not in part:
            raise ConfigError(f"channel_map entry {part!r} is not res:channels")
        res_s, ch_s = part.split(":", 1)
        cmap[_parse_int("channel_map resolution", res_s, 4)] = \
            _parse_int("channel_map channels", ch_s, 1)
    if not cmap:
        raise ConfigError("channel_map is empty")
    return cmap


@dataclass
class RunConfig:
    resolution: int = 16
    channel_map: dict = None
    variant: BlockVariant = BlockVariant.SKIP
    r: int = 8
    style_dim: int = 512
    mapping_depth: int = 2
    upsample: str = "nearest"
    precision: str = "f32"
    loss: str = "nonsat_r1"
    gamma: float = 0.1
    lr: float = 0.0025
    steps: int = 500
    batch: int = 16
    seed: int = 0
    ema_halflife: float = 50.0

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        values = dict(DEFAULTS)
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
            key, raw = (s.strip() for s in line.split("=", 1))
            if key not in values:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            values[key] = raw
        return cls._from_values(values)

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                return cls.parse(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None

    @classmethod
    def _from_values(cls, v: dict) -> "RunConfig":
        resolution = _parse_int("resolution", v["resolution"], 8)
        if v["channel_map"] == "auto":
            cmap = default_channel_map(resolution)
        else:
            cmap = _parse_channel_map(v["channel_map"])
        if v["variant"] not in _VARIANTS:
            raise ConfigError(f"variant must be one of {sorted(_VARIANTS)}, "
                              f"got {v['variant']!r}")
        if v["mapping_depth"] == "auto":
            depth = 8 if resolution >= 128 else 2
        else:
            depth = _parse_int("mapping_depth", v["mapping_depth"], 1)
        if v["upsample"] not in ("nearest", "bilinear"):
            raise ConfigError(f"upsample must be nearest|bilinear, got {v['upsample']!r}")
        if v["precision"] not in _PRECISIONS:
            raise ConfigError(f"precision must be f32|f64, got {v['precision']!r}")
        if v["loss"] not in ("classic", "nonsat_r1"):
            raise ConfigError(f"loss must be classic|nonsat_r1, got {v['loss']!r}")
        cfg = cls(
            resolution=resolution,
            channel_map=cmap,
            variant=_VARIANTS[v["variant"]],
            r=_parse_int("r", v["r"], 1),
            style_dim=_parse_int("style_dim", v["style_dim"], 1),
            mapping_depth=depth,
            upsample=v["upsample"],
            precision=v["precision"],
            loss=v["loss"],
            gamma=_parse_float("gamma", v["gamma"]),
            lr=_parse_float("lr", v["lr"]),
            steps=_parse_int("steps", v["steps"], 1),
            batch=_parse_int("batch", v["batch"], 1),
            seed=_parse_int("seed", v["seed"]),
            ema_halflife=_parse_float("ema_halflife", v["ema_halflife"]),
        )
        cfg.to_generator_config()   # surfaces channel-map/variant problems early
        cfg.to_loss_config()
        return cfg

    @property
    def dtype(self):
        return _PRECISIONS[self.precision]

    def to_generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(
            resolution=self.resolution, channel_map=dict(self.channel_map),
            variant=self.variant, r=self.r, style_dim=self.style_dim,
            mapping_depth=self.mapping_depth, upsample_mode=self.upsample)

    def to_loss_config(self) -> LossConfig:
        return LossConfig(kind=self.loss, gamma=self.gamma,
                          learning_rate=self.lr, ema_halflife=self.ema_halflife)

    def canonical_text(self) -> str:
        """Normalized serialization: every key explicit, fixed order."""
        cmap = ",".join(f"{res}:{self.channel_map[res]}"
                        for res in sorted(self.channel_map))
        values = {
            "resolution": self.resolution,
            "channel_map": cmap,
            "variant": self.variant.value,
            "r": self.r,
            "style_dim": self.style_dim,
            "mapping_depth": self.mapping_depth,
            "upsample": self.upsample,
            "precision": self.precision,
            "loss": self.loss,
            "gamma": repr(self.gamma),
            "lr": repr(self.lr),
            "steps": self.steps,
            "batch": self.batch,
            "seed": self.seed,
            "ema_halflife": repr(self.ema_halflife),
        }
        return "".join(f"{k}={values[k]}\n" for k in sorted(values))
