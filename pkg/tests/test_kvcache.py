import numpy as np
import pytest

from pmbank.bank import SyncEvent, new_bank
from pmbank.core import Frame, Timestamp, online_config
from pmbank.kvcache import (
    CacheEntry,
    CacheState,
    NoTraffic,
    OutOfOrderAppend,
    append_frames,
    consistency_check,
    rebuild,
    recompute_savings,
    sync_on_eviction,
)
from conftest import random_bank_case


def frame(tick, size=16, layer=1):
    return Frame(Timestamp(tick, 8), np.zeros((size, size, 1), dtype=np.float32), layer)


def cache_with(ticks, size=1):
    return CacheState().append_frames([frame(t, size) for t in ticks])


def test_append_two_layer1_frames():
    cache = append_frames(CacheState(), [frame(1), frame(2)])
    assert [(e.ts.tick, e.token_count) for e in cache.entries] == [(1, 256), (2, 256)]
    assert cache.tokens_appended_total == 512


def test_append_out_of_order():
    cache = cache_with([3])
    with pytest.raises(OutOfOrderAppend):
        cache.append_frames([frame(3)])
    with pytest.raises(OutOfOrderAppend):
        cache.append_frames([frame(5), frame(4)])
    assert [e.ts.tick for e in cache.entries] == [3]


def test_append_empty_is_identity():
    cache = cache_with([1, 2])
    before = (list(cache.entries), cache.tokens_appended_total)
    cache.append_frames([])
    assert (cache.entries, cache.tokens_appended_total) == before


def test_sync_erases_inclusive_suffix():
    cache = cache_with([1, 3, 5, 7, 9])
    erased = sync_on_eviction(cache, SyncEvent(Timestamp(5, 8), 1))
    assert [e.ts.tick for e in cache.entries] == [1, 3]
    assert erased == 3


def test_sync_erases_single_tail_entry():
    cache = CacheState().append_frames([frame(1), frame(2), frame(3, size=8)])
    assert cache.sync_on_eviction(SyncEvent(Timestamp(3, 8), 1)) == 64
    assert [e.ts.tick for e in cache.entries] == [1, 2]


def test_sync_beyond_tail_is_counted():
    cache = cache_with([1, 2])
    assert cache.sync_on_eviction(SyncEvent(Timestamp(9, 8), 1)) == 0
    assert cache.empty_syncs == 1


def test_prefix_never_touched():
    cache = cache_with(range(10))
    head = list(cache.entries[:4])
    cache.sync_on_eviction(SyncEvent(Timestamp(4, 8), 2))
    assert cache.entries == head


def test_consistency_check_cases():
    assert consistency_check(CacheState(), [])
    readout = [frame(1), frame(2, size=8)]
    assert consistency_check(rebuild(readout), readout)
    stale = CacheState().append_frames([frame(1), frame(2)])  # 256 tokens where readout holds 64
    result = consistency_check(stale, readout)
    assert not result and result.position == 1 and result.ts.tick == 2
    # a cache that is a strict prefix of the readout is consistent
    assert consistency_check(rebuild(readout[:1]), readout)
    assert not consistency_check(rebuild(readout), readout[:1])


def test_recompute_savings():
    with pytest.raises(NoTraffic):
        recompute_savings(CacheState())
    cache = CacheState().append_frames([frame(0)])
    cache.record_full_reprocess(256)
    assert recompute_savings(cache) == 0.0


def _drive(cfg, ticks, grids, per_event=True):
    bank, cache = new_bank(cfg), CacheState()
    for tick, grid in zip(ticks, grids):
        events = bank.ingest(Timestamp(tick, cfg.base_fps), grid)
        if per_event:
            for e in events:
                cache.sync_on_eviction(e)
        elif events:
            cache.sync_on_eviction(min(events, key=lambda e: e.t_min.tick))
        readout = bank.readout()
        yield bank, cache, readout
        cache.append_frames(readout[len(cache):])
        cache.record_full_reprocess(sum(f.tokens for f in readout))


@pytest.mark.parametrize("seed", range(40))
def test_incremental_equals_rebuild(seed):
    cfg, ticks, grids = random_bank_case(seed)
    for bank, cache, readout in _drive(cfg, ticks, grids):
        assert consistency_check(cache, readout), "sync events left a stale entry"
        cache.append_frames(readout[len(cache):])
        assert cache.entries == rebuild(readout).entries
        assert cache.tokens_appended_total - cache.tokens_erased_total == cache.tokens == bank.token_count()


@pytest.mark.parametrize("seed", range(20))
def test_min_boundary_equivalent_to_per_event_sync(seed):
    cfg, ticks, grids = random_bank_case(seed)
    a = [[e for e in c.entries] for _, c, _ in _drive(cfg, ticks, grids, per_event=True)]
    b = [[e for e in c.entries] for _, c, _ in _drive(cfg, ticks, grids, per_event=False)]
    assert a == b


def test_strict_erase_would_leave_stale_entry():
    rng = np.random.default_rng(0)
    bank, cache = new_bank(online_config(depth=2)), CacheState()
    stale_seen = False
    for tick in range(60):
        events = bank.ingest(Timestamp(tick, 8), rng.standard_normal((16, 16, 2)).astype(np.float32))
        for e in events:
            cache.erase_from(e.t_min.tick + 1)  # literal strict boundary
        readout = bank.readout()
        if not consistency_check(cache, readout):
            stale_seen = True
            break
        cache.append_frames(readout[len(cache):])
    assert stale_seen


def test_savings_grow_with_stream_length_without_evictions():
    bank_free = []
    cache = CacheState()
    frames = []
    for tick in range(50):
        frames.append(frame(tick))
        cache.append_frames(frames[len(cache):])
        cache.record_full_reprocess(256 * len(frames))
        bank_free.append(recompute_savings(cache))
    assert bank_free[0] == 0.0
    assert all(b >= a for a, b in zip(bank_free, bank_free[1:]))
    assert bank_free[-1] == pytest.approx(1 - 2 / 51)


def test_cache_entry_revision_tracks_layer():
    assert CacheEntry.of(frame(3, size=4, layer=3)) == CacheEntry(Timestamp(3, 8), 16, 3)
