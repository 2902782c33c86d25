"""Metadata-only model of a KV cache kept in step with a memory bank.

The cache records one entry per frame in timestamp order. An eviction
invalidates every entry at or after the evicted frame's timestamp; the
erased suffix is re-appended from the bank's readout on next access.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass

from .core import Frame, PMBError, Timestamp


class OutOfOrderAppend(PMBError):
    pass


class NoTraffic(PMBError):
    pass


@dataclass(frozen=True)
class CacheEntry:
    ts: Timestamp
    token_count: int
    # representation revision; the frame's layer index, which changes on down-write
    revision: int = 1

    @classmethod
    def of(cls, frame: Frame) -> CacheEntry:
        return cls(frame.ts, frame.tokens, frame.layer)


@dataclass(frozen=True)
class ConsistencyResult:
    ok: bool
    position: int | None = None
    ts: Timestamp | None = None

    def __bool__(self):
        return self.ok


class CacheState:
    def __init__(self):
        self.entries: list[CacheEntry] = []
        self._ticks: list[int] = []
        self.tokens_appended_total = 0
        self.tokens_erased_total = 0
        # tokens a regime that reprocesses the whole readout on every ingest would consume
        self.full_reprocess_tokens = 0
        self.empty_syncs = 0

    def __len__(self):
        return len(self.entries)

    @property
    def tokens(self) -> int:
        return sum(e.token_count for e in self.entries)

    def append_frames(self, frames) -> CacheState:
        frames = list(frames)
        last = self._ticks[-1] if self._ticks else None
        for frame in frames:
            if last is not None and frame.tick <= last:
                raise OutOfOrderAppend(f"frame at tick {frame.tick} is not after cache tail tick {last}")
            last = frame.tick
        for frame in frames:
            entry = CacheEntry.of(frame)
            self.entries.append(entry)
            self._ticks.append(frame.tick)
            self.tokens_appended_total += entry.token_count
        return self

    def erase_from(self, tick: int) -> int:
        """Drop every entry with tick >= ``tick``; returns the erased token count."""
        pos = bisect.bisect_left(self._ticks, tick)
        erased = sum(e.token_count for e in self.entries[pos:])
        del self.entries[pos:]
        del self._ticks[pos:]
        self.tokens_erased_total += erased
        return erased

    def sync_on_eviction(self, event) -> int:
        # inclusive boundary: the evicted frame itself changed representation
        if not self._ticks or self._ticks[-1] < event.t_min.tick:
            self.empty_syncs += 1
        return self.erase_from(event.t_min.tick)

    def record_full_reprocess(self, tokens: int):
        self.full_reprocess_tokens += tokens

    def snapshot(self) -> dict:
        return {
            "entries": len(self.entries),
            "tokens": self.tokens,
            "tokens_appended": self.tokens_appended_total,
            "tokens_erased": self.tokens_erased_total,
        }


def append_frames(cache: CacheState, frames) -> CacheState:
    return cache.append_frames(frames)


def sync_on_eviction(cache: CacheState, event) -> int:
    return cache.sync_on_eviction(event)


def rebuild(readout) -> CacheState:
    """Fresh cache holding exactly the given readout."""
    return CacheState().append_frames(readout)


def consistency_check(cache: CacheState, readout) -> ConsistencyResult:
    """True iff the cache entries are exactly a prefix of the readout."""
    if len(cache.entries) > len(readout):
        pos = len(readout)
        return ConsistencyResult(False, pos, cache.entries[pos].ts)
    for pos, (entry, frame) in enumerate(zip(cache.entries, readout)):
        if entry.ts.tick != frame.tick or entry.token_count != frame.tokens:
            return ConsistencyResult(False, pos, entry.ts)
    return ConsistencyResult(True)


def recompute_savings(cache: CacheState) -> float:
    """Fraction of token processing avoided relative to reprocessing everything per ingest."""
    if cache.tokens_appended_total == 0 or cache.full_reprocess_tokens == 0:
        raise NoTraffic("no tokens have been appended")
    return max(0.0, 1.0 - cache.tokens_appended_total / cache.full_reprocess_tokens)
