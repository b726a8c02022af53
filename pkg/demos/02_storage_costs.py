"""What caching activations actually costs on disk.

Storage is the price of recycling: one sequence costs seq_len * dim floats.
At BERT-base width (768) and a 512-token window that is 1.5 MiB per
sequence in f32, and exactly half when the store keeps f16 at rest.
"""

import tempfile

from embrec import CacheKey, Dtype, Rng, entry_size, store_create, store_put

print(f"{'seq_len':>8} {'dim':>6} {'f32 bytes':>12} {'f16 bytes':>12}")
for seq_len, dim in [(128, 256), (256, 768), (512, 768), (512, 1024)]:
    f32 = entry_size(seq_len, dim, Dtype.F32)
    f16 = entry_size(seq_len, dim, Dtype.F16)
    print(f"{seq_len:>8} {dim:>6} {f32:>12,} {f16:>12,}")

per_token = entry_size(1, 768, Dtype.F32)
print(f"\nevery token at width 768 costs {per_token} bytes in f32")

# the on-disk layout: 8-byte shard header, then raw payloads back to back,
# with offsets, lengths and checksums kept in a JSON-lines manifest
with tempfile.TemporaryDirectory() as tmp:
    r = Rng(7)
    with store_create(f"{tmp}/s", Dtype.F16) as s:
        for i in range(3):
            h = r.fill_uniform(64 * 128, -2.0, 2.0).reshape(64, 128)
            m = store_put(s, CacheKey("demo", 3, f"doc{i}"), h)
            print(f"doc{i}: shard={m.shard} offset={m.offset} "
                  f"bytes={m.byte_len} crc32={m.crc32:08x}")
    with open(f"{tmp}/s/manifest.jsonl", encoding="utf-8") as f:
        print("\nmanifest.jsonl, first line:")
        print(" ", f.readline().rstrip())
