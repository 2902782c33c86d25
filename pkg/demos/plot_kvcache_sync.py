"""
Keeping a KV cache in step with the bank
========================================

Each eviction erases the cache suffix starting at the evicted frame's
timestamp. Re-appending the missing tail of the readout afterwards gives
exactly the cache you would get by rebuilding from scratch.
"""

from pmbank import CacheState, StreamSpec, gen_synthetic_stream, new_bank, online_config, recompute_savings
from pmbank.kvcache import consistency_check, rebuild

stream = gen_synthetic_stream(StreamSpec(seed=3, base_fps=8, duration_s=120, scene_count=8, noise_sigma=0.3))
bank, cache = new_bank(online_config()), CacheState()

for ts, grid in stream.frames():
    for event in bank.ingest(ts, grid):
        cache.sync_on_eviction(event)
    readout = bank.readout()
    # after syncing, what is left must be an untouched prefix of the readout
    assert consistency_check(cache, readout)
    cache.append_frames(readout[len(cache):])
    cache.record_full_reprocess(sum(f.tokens for f in readout))

assert cache.entries == rebuild(bank.readout()).entries
print("entries:", len(cache), "tokens held:", cache.tokens)
print("appended:", cache.tokens_appended_total, "erased:", cache.tokens_erased_total)
print(f"savings vs reprocessing the whole bank per frame: {recompute_savings(cache):.3f}")

###############################################################################
# Erasing strictly after the boundary instead leaves the evicted frame's old,
# higher-resolution entry behind.
bank, cache = new_bank(online_config()), CacheState()
for i, (ts, grid) in enumerate(stream.frames()):
    for event in bank.ingest(ts, grid):
        cache.erase_from(event.t_min.tick + 1)
    check = consistency_check(cache, bank.readout())
    if not check:
        print(f"strict erase goes stale at ingest {i}, entry t={check.ts}")
        break
    cache.append_frames(bank.readout()[len(cache):])
