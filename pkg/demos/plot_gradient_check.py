"""
Checking every backward pass
============================

Each layer, and then a tiny network, is compared against central finite
differences computed in float64.
"""

from cvfcn import gradcheck

#%%
# Per-layer and whole-network checks in single and double precision.

results, seconds = gradcheck.timed_run(seed=0)
for r in results:
    print(r.line())
print(f"{seconds:.1f} s")

#%%
# The harness catches mistakes.  Here the CReLU backward is swapped for
# one that forgets to gate the gradient.

with gradcheck.corrupted("crelu"):
    bad = gradcheck.layer_checks(seed=0)
print([r.line() for r in bad if not r.passed])
