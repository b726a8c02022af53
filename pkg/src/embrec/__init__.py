"""Cache transformer activations at a layer boundary and resume from them.

A deterministic toy encoder produces the activations; an append-only
shard-plus-manifest store keeps them bit-exact on disk (optionally float16
at rest); a bounded prefetcher hides read latency; a benchmark harness
measures the speedup of resuming at layer k+1 against the k/(N-k) cost
model.
"""

from .bench import (
    BenchReport,
    Scenario,
    TimingStats,
    report_emit,
    run_benchmark,
    speedup_pct,
    theoretical_speedup_pct,
    time_stage,
)
from .core import (
    Dtype,
    Rng,
    checksum,
    f16_to_f32,
    f32_to_f16,
    tensor_checksum,
)
from .errors import (
    ConfigError,
    CorruptionError,
    DuplicateKeyError,
    EmbrecError,
    EquivalenceError,
    InputError,
    KeyNotFoundError,
    LayerRangeError,
    ShapeError,
    StoreError,
    StoreExistsError,
    StoreModeError,
    StoreNotFoundError,
)
from .model import (
    Adapter,
    AdapterStack,
    FusionMLP,
    Model,
    ModelConfig,
    adapter_apply,
    attach_adapters,
    cross_model_fuse,
    embed,
    forward_range,
    full_forward,
    init_fusion,
    init_model,
    layer_forward,
    model_id,
    parameter_checksum,
    trainable_fraction,
)
from .store import (
    CacheKey,
    EntryMeta,
    MemStore,
    StoreHandle,
    VerifyReport,
    entry_size,
    prefetch_iter,
    store_create,
    store_get,
    store_open,
    store_put,
    store_verify,
)

__version__ = "0.1.0"
