"""Pure numpy implementation of the hot inference kernels.

Used when the compiled extension is unavailable or explicitly disabled
via TDKWS_BACKEND=numpy.  Semantics must match ``_kernels_cy`` exactly
up to float32 rounding.
"""

import numpy as np

BACKEND_NAME = "numpy"


def dense_forward(x, weights, bias, relu):
    """Affine transform of a single float32 vector with optional ReLU.

    x: (in_dim,) float32; weights: (in_dim, out_dim) float32 C-contiguous;
    bias: (out_dim,) float32.  Returns (out_dim,) float32.
    """
    out = x @ weights
    out += bias
    if relu:
        np.maximum(out, 0.0, out=out)
    return out
