"""Measure the speedup from resuming at layer k instead of layer 0.

Skipping k of N layers removes a k/N share of the work, which shows up as
a speedup of k/(N-k) over what remains: recycling half a 12-layer network
can at most double throughput (+100%).  The harness times both passes and
prints measured next to that ceiling.  Timings wander with machine load;
the shape of the curve is the point here, not the third digit.
"""

import tempfile

from embrec import (
    Dtype, ModelConfig, Scenario, run_benchmark, store_create,
)

cfg = ModelConfig(n_layers=8, d_model=128, n_heads=4, d_ff=256,
                  vocab_size=512, max_seq=64, ln_eps=1e-5, seed=3)

print(f"{'k':>3} {'baseline ms':>12} {'variant ms':>11} "
      f"{'measured %':>11} {'ceiling %':>10}")
for k in (2, 4, 6):
    r = run_benchmark(Scenario(config=cfg, k=k, batch=4, seq_len=64,
                               mode="recycle_ram", reps=5, warmup=1))
    print(f"{k:>3} {r.baseline.mean_ms:>12.1f} {r.variant.mean_ms:>11.1f} "
          f"{r.measured_speedup_pct:>11.1f} {r.theoretical_speedup_pct:>10.1f}")

# same comparison, but the cached activations come from files
with tempfile.TemporaryDirectory() as tmp:
    with store_create(f"{tmp}/bench", Dtype.F32) as s:
        r = run_benchmark(Scenario(config=cfg, k=4, batch=4, seq_len=64,
                                   mode="recycle_disk", reps=5, warmup=1),
                          store=s)
print(f"\nfrom disk at k=4: {r.measured_speedup_pct:.1f}% measured, "
      f"{r.wait_time_ms:.2f} ms of each rep spent waiting on reads, "
      f"{r.storage['bytes_per_seq']:,} bytes stored per sequence")
