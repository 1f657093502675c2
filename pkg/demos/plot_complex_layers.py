"""
Complex layers by hand
======================

A tour of the building blocks on tensors small enough to read.
"""

import numpy as np

from cvfcn import layers as L

#%%
# A 1x1 complex convolution is a complex multiply plus a bias.

p = L.ConvParams(W=np.full((1, 1, 1, 1), 1 + 1j), b=np.zeros(1, complex), stride=1, pad=0)
y, _ = L.cconv2d_fwd(np.full((1, 1, 1, 1), 2 - 1j), p)
print("(1+1j)(2-1j) =", y.item())

#%%
# CReLU rectifies the real and imaginary parts separately.

z = np.array([1 - 2j, -3 + 4j, -1 - 1j])
print("crelu", z, "->", L.crelu_fwd(z)[0])

#%%
# Max-pooling keeps the element with the largest magnitude and remembers
# where it came from.  Unpooling puts values back at those places.

x = np.array([[1 + 0j, 0 + 3j, 0.5, 0.1],
              [-2 - 2j, 1 + 1j, 0.2j, -0.9],
              [0.3, 0.3, 4, 0],
              [0, 0.1j, 0, 0]]).reshape(1, 4, 4, 1)
pooled, loc = L.cmaxpool_fwd(x)
print("pooled\n", pooled[0, :, :, 0])
print("max locations (row, col)")
for flat in loc.indices.ravel():
    _, r, c, _ = np.unravel_index(flat, x.shape)
    print("  ", (int(r), int(c)))
print("unpooled\n", L.cmaxunpool_fwd(pooled, loc)[0, :, :, 0])

#%%
# Without location maps every value lands in the top-left corner instead.

print(L.cmaxunpool_fwd(pooled, L.topleft_locmap(x.shape))[0, :, :, 0])

#%%
# Complex batch norm whitens each channel so that (re, im) has covariance
# gamma gamma^T, which is I/2 with the default gamma.

rng = np.random.default_rng(0)
raw = (3 + 2 * rng.standard_normal((8, 6, 6, 1))
       + 1j * (rng.standard_normal((8, 6, 6, 1)) + rng.standard_normal((8, 6, 6, 1))))
out, _ = L.cbn_fwd(raw, L.BNParams.create(1, np.complex128), training=True)
v = np.stack([out.real.ravel(), out.imag.ravel()])
print("covariance after BN\n", np.round(v @ v.T / v.shape[1], 4))

#%%
# The output layer squashes both parts into (0, 1).

print(L.cout_fwd(np.array([0j, np.log(3) * (1 + 1j)]))[0])
