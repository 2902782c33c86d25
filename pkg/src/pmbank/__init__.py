"""Streaming bounded-memory feature cache with a layered (pyramid) memory bank."""
from .bank import NonMonotonicTimestamp, PyramidMemoryBank, SyncEvent, new_bank, route_frame
from .core import (
    BankConfig,
    Frame,
    InvalidConfig,
    LayerConfig,
    Origin,
    PMBError,
    ShapeMismatch,
    Timestamp,
    ValidationReport,
    load_config,
    make_config,
    offline_config,
    online_config,
    parse_config_text,
    validate_config,
)
from .kernels import NonDivisibleShape, ZeroVector, avg_pool2d, cosine_similarity, global_avg_pool, pooled_pair_similarity
from .kvcache import CacheEntry, CacheState, NoTraffic, OutOfOrderAppend, consistency_check, recompute_savings
from .policies import (
    fifo_policy,
    no_compression_policy,
    policy_factory,
    pyramid_policy,
    token_merge_policy,
    uniform_sample_policy,
)
from .stream import Stream, StreamSpec, SceneAnnotation, gen_synthetic_stream, load_stream, save_stream

__version__ = "0.1.0"
