"""Shared value types and bank configuration.

Timestamps are integer ticks at the stream's base frame rate so that grid
membership tests for mixed sampling rates are exact.
"""
from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np


class PMBError(Exception):
    """Base class for all errors raised by this package."""


class InvalidConfig(PMBError):
    pass


class ShapeMismatch(PMBError):
    pass


@dataclass(frozen=True, order=True)
class Timestamp:
    tick: int
    base_fps: int = field(compare=False)

    def __post_init__(self):
        if self.tick < 0:
            raise ValueError(f"tick must be non-negative, got {self.tick}")
        if self.base_fps <= 0:
            raise ValueError(f"base_fps must be positive, got {self.base_fps}")

    @property
    def seconds(self) -> Fraction:
        return Fraction(self.tick, self.base_fps)

    def __str__(self):
        return f"{self.tick}@{self.base_fps}fps"


def as_grid(data, copy=False) -> np.ndarray:
    """Coerce ``data`` to an (H, W, D) float32 feature grid and validate it."""
    grid = np.array(data, dtype=np.float32, copy=copy) if copy else np.asarray(data, dtype=np.float32)
    if grid.ndim != 3 or min(grid.shape) <= 0:
        raise ShapeMismatch(f"feature grid must be a non-empty (H, W, D) array, got shape {grid.shape}")
    if not np.isfinite(grid).all():
        raise ValueError("feature grid contains NaN or Inf")
    return grid


def tokens_of(grid: np.ndarray) -> int:
    """Visual tokens carried by a grid: one per spatial cell."""
    return int(grid.shape[0] * grid.shape[1])


class Origin(enum.Enum):
    STREAM_SAMPLED = "stream"
    DOWN_WRITTEN = "down"
    # produced only by the token-merge baseline
    MERGED = "merged"


@dataclass(frozen=True)
class Frame:
    ts: Timestamp
    grid: np.ndarray = field(repr=False, compare=False)
    layer: int = 1
    origin: Origin = Origin.STREAM_SAMPLED

    @property
    def tick(self) -> int:
        return self.ts.tick

    @property
    def tokens(self) -> int:
        return tokens_of(self.grid)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.grid.shape)


@dataclass(frozen=True)
class LayerConfig:
    index: int
    rate_fps: int
    capacity: int
    res_h: int
    res_w: int

    @property
    def tokens_per_frame(self) -> int:
        return self.res_h * self.res_w

    @property
    def budget(self) -> int:
        return self.capacity * self.tokens_per_frame


@dataclass(frozen=True)
class BankConfig:
    layers: tuple[LayerConfig, ...]
    beta: int = 2
    base_fps: int = 8
    depth: int = 8

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))

    @property
    def n(self) -> int:
        return len(self.layers)

    @property
    def total_budget(self) -> int:
        return sum(layer.budget for layer in self.layers)

    def layer(self, i: int) -> LayerConfig:
        """1-based layer lookup."""
        return self.layers[i - 1]

    def effective_rate(self, i: int) -> int:
        return min(self.layer(i).rate_fps, self.base_fps)

    def with_base_fps(self, base_fps: int) -> BankConfig:
        return replace(self, base_fps=base_fps)

    def to_dict(self) -> dict:
        out = {"base_fps": self.base_fps, "beta": self.beta, "depth": self.depth}
        for layer in self.layers:
            for key in ("rate_fps", "capacity", "res_h", "res_w"):
                out[f"layer.{layer.index}.{key}"] = getattr(layer, key)
        return out

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def make_config(capacities, rates=(1, 2, 8), res1=(16, 16), beta=2, base_fps=8, depth=8) -> BankConfig:
    """Build a config whose layer resolutions shrink by ``beta`` per axis."""
    if len(capacities) != len(rates):
        raise ValueError("capacities and rates must have the same length")
    layers = []
    for i, (cap, rate) in enumerate(zip(capacities, rates), start=1):
        scale = beta ** (i - 1)
        layers.append(LayerConfig(i, rate, cap, res1[0] // scale, res1[1] // scale))
    return BankConfig(tuple(layers), beta=beta, base_fps=base_fps, depth=depth)


def online_config(depth=8, base_fps=8) -> BankConfig:
    """Online-benchmark bank: 2/2/12 frames at 16x16, 8x8, 4x4 (832 tokens)."""
    return make_config((2, 2, 12), depth=depth, base_fps=base_fps)


def offline_config(depth=8, base_fps=8) -> BankConfig:
    """Offline-benchmark bank: 24/24/144 frames (9984 tokens)."""
    return make_config((24, 24, 144), depth=depth, base_fps=base_fps)


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    total_budget: int
    layer_budgets: tuple[int, ...]
    violations: tuple[str, ...] = ()


def validate_config(cfg: BankConfig) -> ValidationReport:
    violations = []
    layers = cfg.layers
    if not layers:
        violations.append("no layers")
    if cfg.beta < 2:
        violations.append(f"beta must be an integer >= 2, got {cfg.beta}")
    if cfg.base_fps <= 0:
        violations.append(f"base_fps must be positive, got {cfg.base_fps}")
    if cfg.depth <= 0:
        violations.append(f"depth must be positive, got {cfg.depth}")

    for pos, layer in enumerate(layers, start=1):
        if layer.index != pos:
            violations.append(f"layer {pos} has index {layer.index}")
        for key in ("rate_fps", "capacity", "res_h", "res_w"):
            if getattr(layer, key) <= 0:
                violations.append(f"layer {pos}: {key} must be positive")

    rates = [layer.rate_fps for layer in layers]
    if any(a >= b for a, b in zip(rates, rates[1:])):
        violations.append("rates not strictly increasing")
    areas = [layer.res_h * layer.res_w for layer in layers]
    if any(a <= b for a, b in zip(areas, areas[1:])):
        violations.append("resolutions not strictly decreasing")

    if cfg.base_fps > 0:
        for layer in layers:
            r = layer.rate_fps
            if 0 < r < cfg.base_fps and cfg.base_fps % r != 0:
                violations.append(f"layer {layer.index}: rate {r} does not divide base_fps {cfg.base_fps}")

    if layers and cfg.beta >= 2:
        first = layers[0]
        for i, layer in enumerate(layers[1:], start=2):
            scale = cfg.beta ** (i - 1)
            if (layer.res_h * scale, layer.res_w * scale) != (first.res_h, first.res_w):
                violations.append(
                    f"layer {i}: resolution {layer.res_h}x{layer.res_w} is not layer 1 "
                    f"{first.res_h}x{first.res_w} scaled by 1/{scale}"
                )

    per_layer = tuple(max(layer.budget, 0) for layer in layers)
    return ValidationReport(not violations, sum(per_layer), per_layer, tuple(violations))


# -- config files -------------------------------------------------------------

_TOP_KEYS = ("base_fps", "beta", "depth")
_LAYER_KEYS = ("rate_fps", "capacity", "res_h", "res_w")


def parse_config_text(text: str, overrides: dict[str, str] | None = None) -> BankConfig:
    """Parse ``key = value`` lines (``#`` comments) into a BankConfig.

    ``overrides`` use the same keys and win over file values.
    """
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else ":" if ":" in line else None
        if sep is None:
            raise InvalidConfig(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split(sep, 1))
        values[key] = value
    values.update(overrides or {})

    top = {}
    layers: dict[int, dict[str, int]] = {}
    for key, value in values.items():
        try:
            number = int(value)
        except ValueError:
            raise InvalidConfig(f"{key}: expected an integer, got {value!r}") from None
        if key in _TOP_KEYS:
            top[key] = number
            continue
        parts = key.split(".")
        if len(parts) != 3 or parts[0] != "layer" or parts[2] not in _LAYER_KEYS or not parts[1].isdigit():
            raise InvalidConfig(f"unknown config key {key!r}")
        layers.setdefault(int(parts[1]), {})[parts[2]] = number

    if not layers:
        raise InvalidConfig("config defines no layers")
    if sorted(layers) != list(range(1, len(layers) + 1)):
        raise InvalidConfig(f"layer indices must be 1..n, got {sorted(layers)}")
    built = []
    for i in sorted(layers):
        missing = [k for k in _LAYER_KEYS if k not in layers[i]]
        if missing:
            raise InvalidConfig(f"layer {i} is missing {', '.join(missing)}")
        built.append(LayerConfig(i, **layers[i]))
    return BankConfig(tuple(built), **top)


def load_config(path, overrides: dict[str, str] | None = None) -> BankConfig:
    return parse_config_text(Path(path).read_text(), overrides)


def dump_config(cfg: BankConfig) -> str:
    return "".join(f"{key} = {value}\n" for key, value in cfg.to_dict().items())
