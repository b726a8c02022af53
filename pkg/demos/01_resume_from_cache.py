"""Cache a mid-network activation on disk, reload it, finish the pass.

The point of the whole package in one script: if you keep h^k, the output
of layer k, you never pay for layers 1..k again.  Because the store holds
exact f32 bytes and the resumed layers are the same code, the recycled
output is bitwise identical to running the network end to end.
"""

import tempfile

from embrec import (
    CacheKey, Dtype, ModelConfig, embed, forward_range, full_forward,
    init_model, model_id, store_create, store_get, store_open, store_put,
)

cfg = ModelConfig(n_layers=6, d_model=32, n_heads=4, d_ff=64,
                  vocab_size=256, max_seq=64, ln_eps=1e-5, seed=42)
model = init_model(cfg)
tokens = list(b"any byte string works as a token sequence")
print(f"model {model_id(cfg)}: {cfg.n_layers} layers, d_model={cfg.d_model}")

reference = full_forward(model, tokens)
k = 4
h_k = forward_range(model, embed(model, tokens), 0, k)
print(f"computed h^{k} once: shape {h_k.shape}")

with tempfile.TemporaryDirectory() as tmp:
    store_dir = f"{tmp}/activations"
    key = CacheKey(model_id(cfg), k, "doc-0001")
    with store_create(store_dir, Dtype.F32) as s:
        meta = store_put(s, key, h_k)
    print(f"cached {meta.byte_len} bytes, crc32 {meta.crc32:08x}")

    # a later process reopens the store and resumes at layer k+1
    with store_open(store_dir) as s:
        resumed = forward_range(model, store_get(s, key), k, cfg.n_layers)

same = resumed.tobytes() == reference.tobytes()
print(f"resumed output == full pass, bit for bit: {same}")
assert same
