"""Comparing the four input binarization schemes on one image.

* bit-plane stack: keeps (channel, bit) planes separate for the depthwise
  pipeline -- C*P planes of 1 channel each.
* DBID: the same bits flattened into one C*P-channel tensor.
* thermometer: K monotone threshold channels per input channel.
* BIL: DBID plus a binary pointwise expansion to K channels.

Run:  python3 demos/02_input_encoders.py
"""

import numpy as np

from bpbn import (
    BinaryKernel,
    FixedAffine,
    bit_rearrange,
    encode_bil,
    encode_dbid,
    encode_thermometer,
    thermometer_thresholds,
)

rng = np.random.default_rng(42)
img = rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
h, w, c = img.shape
print(f"input image: {h}x{w}x{c}, 8-bit\n")

# --- bit-plane stack ------------------------------------------------------
stack = bit_rearrange(img, planes=8)
print(f"bit-plane stack: {len(stack.planes)} planes of {h}x{w}x1 "
      f"(positions {stack.bit_positions})")

# with 4 planes only the high positions are kept
stack4 = bit_rearrange(img, planes=4)
print(f"4-plane stack keeps positions {stack4.bit_positions}")

# --- DBID -----------------------------------------------------------------
dbid = encode_dbid(img, planes=8)
print(f"\nDBID: one packed tensor {dbid.dims} (c-major, bit-minor channels)")
# channel (c, bp) equals the stack's plane (c, bp)
assert np.array_equal(
    dbid.bits()[:, :, 1 * 8 + 7], stack.plane(1, 7).bits()[:, :, 0]
)
print("DBID channel (c=1, bp=7) == stack plane (1, 7)")

# --- thermometer ----------------------------------------------------------
k = 32
therm = encode_thermometer(img, k)
print(f"\nthermometer K={k}: {therm.dims} channels")
print(f"thresholds: {thermometer_thresholds(k)[:6].tolist()} ...")
p = int(img[0, 0, 0])
set_count = int(therm.bits()[0, 0, :k].sum())
print(f"pixel value {p} sets {set_count}/{k} channels (monotone in p)")

# --- BIL ------------------------------------------------------------------
kk = 16
weights = rng.choice(np.array([-1, 1], dtype=np.int8), size=(1, 1, c * 8, kk))
bn = [FixedAffine.identity() for _ in range(kk)]
bil = encode_bil(img, 8, BinaryKernel(weights), bn)
print(f"\nBIL: pointwise expansion of DBID to {bil.dims} channels")

print("\nchannel-count summary (input channels -> binary channels):")
for name, dims in [
    ("bit-plane stack", (c, "x8 planes")),
    ("DBID", dbid.dims[2]),
    (f"thermometer K={k}", therm.dims[2]),
    (f"BIL K={kk}", bil.dims[2]),
]:
    print(f"  {name:>18}: {dims}")
