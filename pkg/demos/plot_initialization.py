"""
Rayleigh-phase versus uniform initialization
============================================

Both schemes below give complex weights with total variance ``2 / fan_in``.
They differ in shape: the Rayleigh scheme draws a magnitude and a uniform
phase, the other draws the real and imaginary parts from a box.
"""

import numpy as np

from cvfcn.initializers import init_stats

#%%
# Summary statistics for a 3x3 kernel over 12 input channels.

fan_in = 3 * 3 * 12
for scheme in ("rayleigh", "uniform"):
    s = init_stats(scheme, fan_in, 100_000, seed=0)
    print(f"{scheme:9s} E|W| {s['mean_abs']:.4f}  Var {s['var']:.5f} "
          f"(target {s['target_var']:.5f})  phase chi2 p {s['phase_chi2_p']:.2f}")

#%%
# A text histogram of the phase.  Rayleigh-phase weights are flat in
# angle; box-uniform parts pile up on the diagonals.

for scheme in ("rayleigh", "uniform"):
    s = init_stats(scheme, fan_in, 100_000, seed=0)
    print(scheme)
    for i, frac in enumerate(s["phase_bin_fractions"]):
        lo = -180 + i * 22.5
        print(f"  {lo:7.1f} deg {'#' * int(round(frac * 400))}")
