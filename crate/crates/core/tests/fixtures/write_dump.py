"""Writes external_dump.ssc with only the standard library and numpy."""
import struct
import zipfile

import numpy as np

rng = np.random.default_rng(7)
H, N, LAYERS = 2, 6, (14, 15)
layers = {}
for l in range(LAYERS[0], LAYERS[1] + 1):
    # Dyadic weights so float32 storage is exact.
    w = rng.integers(1, 9, size=(H, N, N)).astype(np.float64)
    w = np.floor(w / w.sum(-1, keepdims=True) * 256) / 256
    w[..., 0] += 1.0 - w.sum(-1)
    layers[l] = w

manifest = f"""format = "steerseg-attention"
version = 1
layer_start = {LAYERS[0]}
layer_end = {LAYERS[1]}
heads = {H}
seq_len = {N}
n_visual = 4
visual_layout = [1, 2, 2]
visual_start = 1
query_index = 5
generated_word = "circle"
rollout_layers = [{LAYERS[0]}, {LAYERS[1]}]
dtype = "float32"
byte_order = "little-endian"
"""

with zipfile.ZipFile("external_dump.ssc", "w", zipfile.ZIP_STORED) as z:
    z.writestr("manifest", manifest)
    for l, w in layers.items():
        z.writestr(f"layer_{l}.bin", struct.pack(f"<{w.size}f", *w.astype(np.float32).ravel()))

r = np.eye(N)[5]
for l in sorted(layers, reverse=True):
    a = 0.5 * (layers[l].mean(0) + np.eye(N))
    r = r @ a
print("query row over visual tokens:", repr(r[1:5].tolist()))
print("row-sum check:", [float(w.sum(-1).max()) for w in layers.values()])
