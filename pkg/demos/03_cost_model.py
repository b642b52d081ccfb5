"""First-layer cost model: MACs, weights, ratios, latency speedups.

Reproduces the published comparison at its default dims (32x32x3 input,
3x3 kernels, F1=128, K=32, N1=floor(128/3)=42, N2=32) and then explores
how the picture changes for a single-channel input.

Run:  python3 demos/03_cost_model.py
"""

from dataclasses import replace

from bpbn import FirstLayerCostInputs, macs_for, report
from bpbn.costmodel import TABLE1_DEFAULTS, render_text

print(render_text(report(TABLE1_DEFAULTS)))

print("\n--- reading the table ---")
rep = report(TABLE1_DEFAULTS)
ours = rep.row("ours(P=4,N2)")
base = rep.row("baseline")
print(
    f"the reduced bit-plane configuration (P=4, N2=32) costs exactly the "
    f"baseline MAC budget ({ours.macs:,} = {base.macs:,}) while running "
    f"{ours.speedup:.0f}x faster under the binary-conv latency model"
)

# channel-expansion methods pay K times the baseline; the bit-plane method
# pays P*N/F1, which the multiplier N controls directly
for n in (8, 16, 32, 42):
    macs, weights = macs_for("ours", replace(TABLE1_DEFAULTS, p=4, n=n))
    print(f"ours(P=4, N={n:2d}): {macs:>12,} MACs, {weights:>6,} weights, "
          f"ratio {macs / base.macs:.3f}")

print("\n--- grayscale input (C=1) ---")
print(render_text(report(FirstLayerCostInputs(c=1))))
