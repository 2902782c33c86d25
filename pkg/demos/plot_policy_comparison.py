"""
Comparing memory policies at a matched token budget
===================================================

Pyramid bank against FIFO, token merging, uniform sampling and keeping
everything, under the streaming and the 32-second sliding-window protocols.
Scene recall is the fraction of scenes seen so far that still have a frame
in memory.
"""

from pmbank import StreamSpec, gen_synthetic_stream, online_config, policy_factory
from pmbank.harness import compare_policies, query_ticks_every

stream = gen_synthetic_stream(StreamSpec(seed=1, base_fps=2, duration_s=600, scene_count=8, noise_sigma=0.5))
cfg = online_config(depth=8, base_fps=2)
policies = {name: policy_factory(name, cfg) for name in ("pyramid", "fifo", "token-merge", "uniform", "none")}
queries = query_ticks_every(stream, 30)

for protocol in ("streaming", "sliding"):
    result = compare_policies(stream, policies, protocol, queries)
    print(f"\n{protocol} protocol")
    for rank, name in enumerate(result.ranking, start=1):
        rep = result.reports[name]
        budget = rep.budget if rep.budget is not None else "unbounded"
        print(f"  {rank}. {name:<12} recall {rep.mean_recall:.3f}  peak tokens {rep.peak_tokens:>7}  budget {budget}")

###############################################################################
# The same table as CSV, ready for plotting elsewhere.
print()
print(compare_policies(stream, policies, "streaming", queries).summary_csv())
