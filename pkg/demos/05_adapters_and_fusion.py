"""Tune on top of recycled activations: adapters and cross-model fusion.

Caching layers 1..k only helps if those layers stay frozen.  Two ways to
keep learning anyway: bottleneck adapters on the remaining layers (newly
attached ones start as exact no-ops, so behavior is unchanged until they
train), and a fusion MLP that injects another model's final activations
into this model's embeddings.
"""

import numpy as np

from embrec import (
    FusionMLP, ModelConfig, attach_adapters, cross_model_fuse, full_forward,
    init_fusion, init_model, trainable_fraction,
)

cfg = ModelConfig(n_layers=6, d_model=64, n_heads=4, d_ff=128,
                  vocab_size=384, max_seq=32, ln_eps=1e-5, seed=17)
base = init_model(cfg)
tokens = list(range(20))

# adapters attach to layers k+1..N; up-projections start at zero
k = 3
adapted = attach_adapters(base, k, bottleneck=16, seed=5)
identical = (full_forward(adapted, tokens).tobytes()
             == full_forward(base, tokens).tobytes())
print(f"freshly attached adapters leave the output untouched: {identical}")

reduced = trainable_fraction(base, k, "reduced")
adapters = trainable_fraction(adapted, k, "adapters")
print(f"fine-tuning layers {k + 1}..{cfg.n_layers} directly: "
      f"{reduced.trainable:,} of {reduced.total:,} params "
      f"({100 * reduced.fraction:.1f}%)")
print(f"training only the adapters:                {adapters.trainable:,} "
      f"of {adapters.total:,} params ({100 * adapters.fraction:.1f}%)")

# fusion: a second model's last layer feeds this model's first
src_cfg = ModelConfig(n_layers=4, d_model=48, n_heads=4, d_ff=96,
                      vocab_size=384, max_seq=32, ln_eps=1e-5, seed=23)
src = init_model(src_cfg)
source_out = full_forward(src, tokens)

mlp = init_fusion(d_src=48, d_consumer=64, seed=31)
consumer_h0 = full_forward(base, tokens)  # stand-in for any consumer state
fused = cross_model_fuse(consumer_h0, source_out, mlp)
delta = float(np.abs(fused - consumer_h0).mean())
print(f"fused {source_out.shape} source activations into "
      f"{consumer_h0.shape} consumer state (mean |delta| {delta:.4f})")

# zeroing the output projection makes fusion exactly transparent, the safe
# starting point before the MLP trains
silent = FusionMLP(w_a=mlp.w_a, b_a=mlp.b_a,
                   w_b=np.zeros_like(mlp.w_b), b_b=np.zeros_like(mlp.b_b))
untouched = cross_model_fuse(consumer_h0, source_out, silent)
print(f"with a zeroed output projection the consumer state is unchanged: "
      f"{untouched.tobytes() == consumer_h0.tobytes()}")
