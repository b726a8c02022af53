"""Overlap cache reads with compute using the bounded prefetcher.

When reads are slow (network filesystem, cold disk), fetching the next
batch item while the current one is still computing hides the latency.
This demo injects a 5 ms delay into every read so the effect is visible:
depth 0 blocks for the full delay per item, deeper pipelines wait less.
The iterator yields (key, tensor) in request order at every depth; a
Semaphore caps how many completed reads may sit unconsumed.
"""

import tempfile
import time

from embrec import (
    CacheKey, Dtype, ModelConfig, Rng, embed, forward_range, init_model,
    model_id, prefetch_iter, store_create, store_open, store_put,
)

cfg = ModelConfig(n_layers=6, d_model=128, n_heads=4, d_ff=512,
                  vocab_size=256, max_seq=64, ln_eps=1e-5, seed=9)
model = init_model(cfg)
mid = model_id(cfg)
r = Rng(1)

with tempfile.TemporaryDirectory() as tmp:
    keys = []
    with store_create(f"{tmp}/s", Dtype.F32) as s:
        for i in range(8):
            tokens = r.fill_uniform(64, 0.0, 256.0).astype("int64") % 256
            h3 = forward_range(model, embed(model, tokens), 0, 3)
            keys.append(CacheKey(mid, 3, f"doc{i}"))
            store_put(s, keys[-1], h3)

    for depth in (0, 2, 8):
        with store_open(f"{tmp}/s") as s:
            s.read_delay_ms = 5.0
            waited = 0.0
            t0 = time.perf_counter()
            it = prefetch_iter(s, keys, depth)
            for _ in keys:
                w0 = time.perf_counter()
                _, h = next(it)
                waited += time.perf_counter() - w0
                forward_range(model, h, 3, 6)  # compute overlaps the reads
            total = time.perf_counter() - t0
        print(f"depth {depth}: blocked {waited * 1e3:6.1f} ms of "
              f"{total * 1e3:6.1f} ms total")

print("\ndeeper pipelines trade memory (depth x entry bytes) for hidden latency")
