"""Pyramid memory bank: layered frame queues with similarity-driven eviction.

Each incoming frame is routed to exactly one layer, the finest-resolution
layer whose sampling grid contains its timestamp. When a layer overflows,
the older frame of its most similar adjacent pair is evicted and written
down into the next layer at that layer's resolution; the last layer discards.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass, replace

import numpy as np

from .core import (
    BankConfig,
    Frame,
    InvalidConfig,
    Origin,
    PMBError,
    ShapeMismatch,
    Timestamp,
    as_grid,
    validate_config,
)
from .kernels import avg_pool2d, global_avg_pool, most_similar_adjacent_pair


class NonMonotonicTimestamp(PMBError):
    pass


@dataclass(frozen=True)
class SyncEvent:
    """Cache erasure boundary produced by one eviction.

    ``t_min`` is the timestamp of the evicted (older) frame of the chosen pair.
    ``cascade_depth`` is the 1-based position of this eviction in the chain
    triggered by a single ingest.
    """

    t_min: Timestamp
    evicted_from_layer: int
    cascade_depth: int = 1


def route_frame(cfg: BankConfig, ts: Timestamp) -> int | None:
    if ts.base_fps != cfg.base_fps:
        raise ValueError(f"timestamp base_fps {ts.base_fps} does not match config base_fps {cfg.base_fps}")
    for i in range(1, cfg.n + 1):
        if ts.tick * cfg.effective_rate(i) % cfg.base_fps == 0:
            return i
    return None


class MemoryLayer:
    def __init__(self, config):
        self.config = config
        self.frames: list[Frame] = []
        self._ticks: list[int] = []
        self._pooled: list[np.ndarray] = []

    def __len__(self):
        return len(self.frames)

    @property
    def over_capacity(self) -> bool:
        return len(self.frames) > self.config.capacity

    @property
    def tokens(self) -> int:
        return len(self.frames) * self.config.tokens_per_frame

    def insert(self, frame: Frame):
        pos = bisect.bisect_left(self._ticks, frame.tick)
        if pos < len(self._ticks) and self._ticks[pos] == frame.tick:
            raise ValueError(f"duplicate timestamp {frame.ts} in layer {self.config.index}")
        self.frames.insert(pos, frame)
        self._ticks.insert(pos, frame.tick)
        self._pooled.insert(pos, global_avg_pool(frame.grid))

    def pop(self, pos: int) -> Frame:
        del self._ticks[pos]
        del self._pooled[pos]
        return self.frames.pop(pos)

    def eviction_index(self) -> int:
        """Position of the frame to evict: the older member of the most similar adjacent pair."""
        return most_similar_adjacent_pair(self._pooled)


class PyramidMemoryBank:
    def __init__(self, cfg: BankConfig):
        report = validate_config(cfg)
        if not report.ok:
            raise InvalidConfig("; ".join(report.violations))
        self.config = cfg
        self.budget = report.total_budget
        self.layers = [MemoryLayer(layer_cfg) for layer_cfg in cfg.layers]
        self.ingest_count = 0
        self.dropped_count = 0
        self.sync_log: list[SyncEvent] = []
        self._last_tick: int | None = None

    @property
    def input_shape(self) -> tuple[int, int, int]:
        first = self.config.layers[0]
        return (first.res_h, first.res_w, self.config.depth)

    def ingest(self, ts: Timestamp, grid) -> list[SyncEvent]:
        """Offer one stream frame at layer-1 resolution; returns the evictions it caused."""
        if ts.base_fps != self.config.base_fps:
            raise ValueError(f"timestamp base_fps {ts.base_fps} does not match bank base_fps {self.config.base_fps}")
        if self._last_tick is not None and ts.tick <= self._last_tick:
            raise NonMonotonicTimestamp(f"tick {ts.tick} is not after last ingested tick {self._last_tick}")
        grid = as_grid(grid)
        if grid.shape != self.input_shape:
            raise ShapeMismatch(f"expected grid of shape {self.input_shape}, got {grid.shape}")

        self._last_tick = ts.tick
        self.ingest_count += 1
        dest = route_frame(self.config, ts)
        if dest is None:
            self.dropped_count += 1
            return []

        layer_cfg = self.config.layer(dest)
        stored = avg_pool2d(grid, layer_cfg.res_h, layer_cfg.res_w)
        if stored is grid:
            stored = grid.copy()
        stored.flags.writeable = False
        self.layers[dest - 1].insert(Frame(ts, stored, dest, Origin.STREAM_SAMPLED))

        events = []
        while True:
            over = next((layer for layer in self.layers if layer.over_capacity), None)
            if over is None:
                break
            _, event = self.evict_and_downwrite(over.config.index, cascade_depth=len(events) + 1)
            events.append(event)
        self.sync_log.extend(events)
        return events

    def evict_and_downwrite(self, i: int, cascade_depth: int = 1) -> tuple[Frame, SyncEvent]:
        layer = self.layers[i - 1]
        if len(layer) < 2:
            raise ValueError(f"layer {i} holds fewer than two frames")
        evicted = layer.pop(layer.eviction_index())
        if i < self.config.n:
            nxt = self.config.layer(i + 1)
            pooled = avg_pool2d(evicted.grid, nxt.res_h, nxt.res_w)
            pooled.flags.writeable = False
            self.layers[i].insert(replace(evicted, grid=pooled, layer=i + 1, origin=Origin.DOWN_WRITTEN))
        return evicted, SyncEvent(evicted.ts, i, cascade_depth)

    def readout(self) -> list[Frame]:
        """All stored frames in timestamp order.

        The returned list is a snapshot; stored grids are read-only and never
        modified in place, so later ingests cannot change it.
        """
        frames = [frame for layer in self.layers for frame in layer.frames]
        frames.sort(key=lambda f: f.tick)
        return frames

    def token_count(self) -> int:
        return sum(layer.tokens for layer in self.layers)

    def layer_sizes(self) -> list[int]:
        return [len(layer) for layer in self.layers]

    def __repr__(self):
        return (
            f"PyramidMemoryBank(layers={self.layer_sizes()}, tokens={self.token_count()}/{self.budget}, "
            f"ingested={self.ingest_count})"
        )


def new_bank(cfg: BankConfig) -> PyramidMemoryBank:
    return PyramidMemoryBank(cfg)
