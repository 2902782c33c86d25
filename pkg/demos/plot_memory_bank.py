"""
Filling a pyramid memory bank
=============================

Stream a synthetic video through the online 2/2/12 bank and watch how the
layers fill, evict and push frames down to coarser resolutions.
"""

import numpy as np

from pmbank import StreamSpec, gen_synthetic_stream, new_bank, online_config, route_frame

###############################################################################
# The online layout stores 2 frames at 16x16, 2 at 8x8 and 12 at 4x4.
cfg = online_config(depth=8, base_fps=8)
for layer in cfg.layers:
    print(f"layer {layer.index}: {layer.rate_fps} fps, {layer.capacity} x {layer.res_h}x{layer.res_w}"
          f" = {layer.budget} tokens")
print("total budget:", cfg.total_budget)

###############################################################################
# Every base tick goes to exactly one layer: the finest one whose grid it hits.
stream = gen_synthetic_stream(StreamSpec(seed=0, base_fps=8, duration_s=60, scene_count=6, noise_sigma=0.3))
print([route_frame(cfg, stream.timestamp(i)) for i in range(16)])

###############################################################################
# Ingest the stream. Evictions return sync events; a single ingest can cascade
# through several layers.
bank = new_bank(cfg)
depths = []
for ts, grid in stream.frames():
    events = bank.ingest(ts, grid)
    if events:
        depths.append(events[-1].cascade_depth)
print(bank)
print("evicting ingests:", len(depths), "deepest cascade:", max(depths))

###############################################################################
# Readout merges the layers by timestamp; each frame keeps the resolution of
# the layer it currently lives in.
for frame in bank.readout():
    scene = next(s.scene_id for s in stream.scenes if s.contains(frame.tick))
    print(f"t={float(frame.ts.seconds):6.3f}s  layer {frame.layer}  {frame.shape[0]}x{frame.shape[1]}"
          f"  scene {scene}  {frame.origin.value}")

scenes_kept = {s.scene_id for s in stream.scenes for f in bank.readout() if s.contains(f.tick)}
print(f"scenes still represented: {len(scenes_kept)}/{len(stream.scenes)}; tokens: {bank.token_count()}")
assert bank.token_count() <= cfg.total_budget
print("mean |grid| of oldest frame:", float(np.abs(bank.readout()[0].grid).mean()))
