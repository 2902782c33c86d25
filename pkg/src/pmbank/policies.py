"""Memory update policies compared against the pyramid bank.

Every policy exposes ``ingest(ts, grid) -> list[SyncEvent]``, ``readout()``,
``token_count()`` and ``budget()``. ``budget()`` is ``None`` for policies
whose memory is unbounded.
"""
from __future__ import annotations

from fractions import Fraction
from math import floor
from typing import Protocol

import numpy as np

from .bank import NonMonotonicTimestamp, PyramidMemoryBank, SyncEvent
from .core import BankConfig, Frame, Origin, ShapeMismatch, Timestamp, as_grid
from .kernels import global_avg_pool, most_similar_adjacent_pair

POLICY_NAMES = ("pyramid", "fifo", "token-merge", "uniform", "none")


class MemoryPolicy(Protocol):
    name: str
    # True when the policy keeps unbounded shadow storage (simulation only)
    simulator_only: bool

    def ingest(self, ts: Timestamp, grid) -> list[SyncEvent]: ...

    def readout(self) -> list[Frame]: ...

    def token_count(self) -> int: ...

    def budget(self) -> int | None: ...


def matched_capacity(budget: int, tokens_per_frame: int) -> int:
    """Largest full-resolution frame count whose tokens fit in ``budget``."""
    return max(1, budget // tokens_per_frame)


class _FrameQueue:
    """Single full-resolution queue shared by the flat baselines."""

    name = "queue"
    simulator_only = False

    def __init__(self, res):
        self.res = tuple(res)
        self.frames: list[Frame] = []
        self._last_tick = None

    def _accept(self, ts: Timestamp, grid) -> Frame:
        if self._last_tick is not None and ts.tick <= self._last_tick:
            raise NonMonotonicTimestamp(f"tick {ts.tick} is not after last ingested tick {self._last_tick}")
        grid = as_grid(grid, copy=True)
        if grid.shape[:2] != self.res:
            raise ShapeMismatch(f"expected {self.res[0]}x{self.res[1]} grid, got {grid.shape[0]}x{grid.shape[1]}")
        grid.flags.writeable = False
        self._last_tick = ts.tick
        return Frame(ts, grid, 1, Origin.STREAM_SAMPLED)

    @property
    def tokens_per_frame(self) -> int:
        return self.res[0] * self.res[1]

    def readout(self) -> list[Frame]:
        return list(self.frames)

    def token_count(self) -> int:
        return len(self.frames) * self.tokens_per_frame


class FifoPolicy(_FrameQueue):
    name = "fifo"

    def __init__(self, capacity: int, res=(16, 16)):
        if capacity < 1:
            raise ValueError("fifo capacity must be >= 1")
        super().__init__(res)
        self.capacity = capacity

    def ingest(self, ts, grid):
        self.frames.append(self._accept(ts, grid))
        events = []
        while len(self.frames) > self.capacity:
            oldest = self.frames.pop(0)
            events.append(SyncEvent(oldest.ts, 1, len(events) + 1))
        return events

    def budget(self):
        return self.capacity * self.tokens_per_frame


class TokenMergePolicy(_FrameQueue):
    """Merges the most similar adjacent pair into their unweighted mean on overflow."""

    name = "token-merge"

    def __init__(self, capacity: int, res=(16, 16)):
        if capacity < 2:
            raise ValueError("token-merge capacity must be >= 2")
        super().__init__(res)
        self.capacity = capacity
        self._pooled: list[np.ndarray] = []

    def ingest(self, ts, grid):
        frame = self._accept(ts, grid)
        self.frames.append(frame)
        self._pooled.append(global_avg_pool(frame.grid))
        events = []
        while len(self.frames) > self.capacity:
            j = most_similar_adjacent_pair(self._pooled)
            a, b = self.frames[j], self.frames[j + 1]
            merged = ((a.grid.astype(np.float64) + b.grid.astype(np.float64)) / 2).astype(np.float32)
            merged.flags.writeable = False
            self.frames[j : j + 2] = [Frame(a.ts, merged, 1, Origin.MERGED)]
            self._pooled[j : j + 2] = [global_avg_pool(merged)]
            events.append(SyncEvent(a.ts, 1, len(events) + 1))
        return events

    def budget(self):
        return self.capacity * self.tokens_per_frame


def uniform_indices(n: int, k: int) -> list[int]:
    """round(j*(n-1)/(k-1)) for j in 0..k-1, rounding halves up; all of 0..n-1 when n <= k."""
    if n <= k:
        return list(range(n))
    return [floor(Fraction(j * (n - 1), k - 1) + Fraction(1, 2)) for j in range(k)]


class UniformSamplePolicy(_FrameQueue):
    """Keeps the whole stream and reads out ``k`` evenly spaced frames.

    Retrospective: it never evicts, so it emits no sync events.
    """

    name = "uniform"
    simulator_only = True

    def __init__(self, k: int, res=(16, 16)):
        if k < 2:
            raise ValueError("uniform sample size must be >= 2")
        super().__init__(res)
        self.k = k

    def ingest(self, ts, grid):
        self.frames.append(self._accept(ts, grid))
        return []

    def readout(self):
        return [self.frames[i] for i in uniform_indices(len(self.frames), self.k)]

    def token_count(self):
        return min(len(self.frames), self.k) * self.tokens_per_frame

    def budget(self):
        return self.k * self.tokens_per_frame


class NoCompressionPolicy(_FrameQueue):
    name = "none"
    simulator_only = True

    def ingest(self, ts, grid):
        self.frames.append(self._accept(ts, grid))
        return []

    def budget(self):
        return None


class PyramidPolicy:
    name = "pyramid"
    simulator_only = False

    def __init__(self, cfg: BankConfig):
        self.bank = PyramidMemoryBank(cfg)

    def ingest(self, ts, grid):
        return self.bank.ingest(ts, grid)

    def readout(self):
        return self.bank.readout()

    def token_count(self):
        return self.bank.token_count()

    def budget(self):
        return self.bank.budget


def fifo_policy(capacity, res=(16, 16)) -> FifoPolicy:
    return FifoPolicy(capacity, res)


def token_merge_policy(capacity, res=(16, 16)) -> TokenMergePolicy:
    return TokenMergePolicy(capacity, res)


def uniform_sample_policy(k, res=(16, 16)) -> UniformSamplePolicy:
    return UniformSamplePolicy(k, res)


def no_compression_policy(res=(16, 16)) -> NoCompressionPolicy:
    return NoCompressionPolicy(res)


def pyramid_policy(cfg: BankConfig) -> PyramidPolicy:
    return PyramidPolicy(cfg)


def policy_factory(name: str, cfg: BankConfig, capacity: int | None = None):
    """Zero-argument constructor for the named policy.

    Flat baselines run at layer-1 resolution with ``capacity`` frames, which
    defaults to the largest count fitting the pyramid's token budget.
    """
    first = cfg.layers[0]
    res = (first.res_h, first.res_w)
    if capacity is None:
        capacity = matched_capacity(cfg.total_budget, first.tokens_per_frame)
    if name == "pyramid":
        return lambda: PyramidPolicy(cfg)
    if name == "fifo":
        return lambda: FifoPolicy(capacity, res)
    if name == "token-merge":
        return lambda: TokenMergePolicy(max(capacity, 2), res)
    if name == "uniform":
        return lambda: UniformSamplePolicy(max(capacity, 2), res)
    if name == "none":
        return lambda: NoCompressionPolicy(res)
    raise ValueError(f"unknown policy {name!r}; choose from {', '.join(POLICY_NAMES)}")
