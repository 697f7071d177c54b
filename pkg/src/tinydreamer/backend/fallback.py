"""Pure-numpy implementations of the hot elementwise kernels.

These mirror the compiled versions in ``_fastops.pyx`` exactly; which one is
used is decided once at import time in ``tinydreamer.backend``.
"""

import numpy as np

COMPILED = False


def sigmoid(x):
    out = np.empty_like(x)
    np.negative(x, out=out)
    np.exp(out, out=out)
    out += 1.0
    np.reciprocal(out, out=out)
    return out


def silu_fwd(x):
    return x * sigmoid(x)


def silu_bwd(x, g):
    s = sigmoid(x)
    return g * (s * (1.0 + x * (1.0 - s)))


def softmax_lastaxis(x):
    m = np.max(x, axis=-1, keepdims=True)
    out = np.exp(x - m)
    out /= np.sum(out, axis=-1, keepdims=True)
    return out


def softmax_bwd(y, g):
    inner = np.sum(g * y, axis=-1, keepdims=True)
    return y * (g - inner)
