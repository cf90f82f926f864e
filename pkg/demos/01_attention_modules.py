"""Squeeze-and-excitation gates and residual adapters on small tensors.

Run with ``python demos/01_attention_modules.py``.
"""

import numpy as np

from mdan import autodiff as ad
from mdan.attention import ResidualAdapter, SEModule, adapter_forward, se_forward, se_weights
from mdan.autodiff import Tensor

rng = np.random.default_rng(0)

# An SE module squeezes each channel to its mean, passes the means through a
# small bottleneck and rescales every channel by a gate in (0, 1).
f = rng.normal(size=(8, 5, 5))
se = SEModule(Tensor(rng.normal(size=(2, 8))), Tensor(np.zeros(2)),
              Tensor(rng.normal(size=(8, 2))), Tensor(np.zeros(8)))
s = se_weights(Tensor(f), se).data
out = se_forward(Tensor(f), se).data
print("SE gates:", np.round(s, 3))
print("channel norm ratios:", np.round(np.linalg.norm(out, axis=(1, 2)) / np.linalg.norm(f, axis=(1, 2)), 3))

# With all parameters at zero every gate is sigmoid(0) = 0.5.
print("zero SE halves the input:", np.array_equal(se_forward(Tensor(f), SEModule.zeros(8, 4)).data, 0.5 * f))

# A residual adapter adds a 1x1 convolution in parallel to a shared 3x3 conv:
# y = F(x) + alpha * F(x). That equals one convolution whose kernel mixes the
# shared kernels with coefficients (I + alpha).
x = rng.normal(size=(3, 6, 6))
k = rng.normal(size=(4, 3, 3, 3))
alpha = 0.1 * rng.normal(size=(4, 4))
parallel = adapter_forward(Tensor(x), Tensor(k), ResidualAdapter(Tensor(alpha))).data
mixed = np.einsum("dc,cihw->dihw", np.eye(4) + alpha, k)
combined = ad.conv2d(Tensor(x), Tensor(mixed), None, 1, 1).data
print("parallel form vs combined kernel, max diff:", np.max(np.abs(parallel - combined)))

# Zero-initialised adapters leave the shared convolution untouched, which is
# why the source and target paths of a fresh network agree exactly.
plain = ad.conv2d(Tensor(x), Tensor(k), None, 1, 1).data
print("zero adapter is the plain conv:", np.array_equal(adapter_forward(Tensor(x), Tensor(k), ResidualAdapter.zeros(4)).data, plain))
