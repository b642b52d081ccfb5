"""Build, save, load and run a tiny fully-binarized model.

The model: bit-plane input block (P=4, N=4, sign-bit fusion) -> binary
conv + folded BN/sign -> max pool -> softmax head.  The production path
runs entirely on packed words and integers; the reference path re-derives
everything in float64.  Their logits agree bit-for-bit here because the
batch-norm parameters are dyadic (exact in Q16.16) and conv+sign blocks
fold to exact integer thresholds.

Run:  python3 demos/04_tiny_model.py
"""

import pathlib
import tempfile

import numpy as np

from bpbn import ModelBuilder, load_model, run_inference, save_model
from bpbn.reference import reference_forward

rng = np.random.default_rng(3)
pm1 = lambda shape: rng.choice(np.array([-1, 1], dtype=np.int8), size=shape)

h = w = 8
c, p, n, f = 3, 4, 4, 3

builder = ModelBuilder("tiny-demo", (h, w, c))

# input block: depthwise kernels per (channel, plane), dyadic BN
gamma = rng.integers(256, 2049, size=c * p * n) / 1024.0
beta = rng.integers(-1024, 1025, size=c * p * n) / 1024.0
affines = np.stack(
    [gamma, np.zeros_like(gamma), np.ones_like(gamma), beta], axis=1
).reshape(c, p, n, 4)
builder.add_bpie_input(pm1((c, p, f, f, n)), affines, fuse_output="sign-bits")

# one conv block; BN+sign folds to integer thresholds at execution time
o = 8
bn = np.stack(
    [
        rng.uniform(0.3, 1.5, o) * rng.choice([-1.0, 1.0], o),
        rng.uniform(-2, 2, o),
        rng.uniform(0.5, 2.0, o),
        rng.uniform(-1, 1, o),
    ],
    axis=1,
)
builder.add_binary_conv(pm1((3, 3, c * n, o)), affines=bn)
builder.add_sign()
builder.add_maxpool2()

classes = 4
builder.add_softmax_head(pm1(((h // 2) * (w // 2) * o, classes)))
manifest = builder.build()

with tempfile.TemporaryDirectory() as tmp:
    path = pathlib.Path(tmp) / "tiny.bpbn"
    save_model(manifest, path)
    print(f"saved container: {path.stat().st_size} bytes")
    manifest = load_model(path)
    print(f"loaded '{manifest.name}': "
          + " -> ".join(l["kind"] for l in manifest.layers))

img = rng.integers(0, 256, size=(h, w, c), dtype=np.uint8)

prod = run_inference(manifest, img, trace=True)
ref = reference_forward(manifest, img, trace=True)

print("\nper-layer trace (production):")
for i, t in enumerate(prod.trace):
    print(f"  [{i}] {t['kind']:<14} -> {tuple(np.shape(t['output']))}")

print(f"\nproduction logits: {np.array2string(prod.logits, precision=6)}")
print(f"reference  logits: {np.array2string(ref.logits, precision=6)}")
print(f"max |delta| = {np.max(np.abs(prod.logits - ref.logits)):g}")
print(f"argmax: production {prod.argmax()}, reference {ref.argmax()}")

macs = reference_forward(manifest, img, count_macs=True).mac_counts
print("\nMAC counts by layer:", {m['kind']: m['macs'] for m in macs})
