"""Kernel backend selection.

The hot elementwise kernels exist twice: a Cython extension (``_fastops``)
and a pure-numpy fallback with identical semantics. The compiled version is
preferred when importable; set ``TINYDREAMER_PURE=1`` to force the fallback
(used by the kernel benchmark and the backend-equivalence tests).
"""

import os

if os.environ.get("TINYDREAMER_PURE", "") not in ("", "0"):
    from . import fallback as _impl
else:
    try:
        from . import _fastops as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import fallback as _impl

COMPILED = _impl.COMPILED
sigmoid = _impl.sigmoid
silu_fwd = _impl.silu_fwd
silu_bwd = _impl.silu_bwd
softmax_lastaxis = _impl.softmax_lastaxis
softmax_bwd = _impl.softmax_bwd


def implementations():
    """Return (compiled, fallback) module pair when both are available."""
    from . import fallback

    try:
        from . import _fastops  # type: ignore[attr-defined]
    except ImportError:
        _fastops = None
    return _fastops, fallback


def benchmark(shape=(256, 512), repeats: int = 200) -> dict:
    """Per-call wall time of each kernel, compiled vs fallback."""
    import time

    import numpy as np

    compiled, fallback = implementations()
    rng = np.random.default_rng(0)
    x = rng.standard_normal(shape).astype(np.float32)
    g = rng.standard_normal(shape).astype(np.float32)
    kernels = {
        "sigmoid": lambda m: m.sigmoid(x),
        "silu_fwd": lambda m: m.silu_fwd(x),
        "silu_bwd": lambda m: m.silu_bwd(x, g),
        "softmax_lastaxis": lambda m: m.softmax_lastaxis(x),
        "softmax_bwd": lambda m: m.softmax_bwd(m.softmax_lastaxis(x), g),
    }
    results = {}
    for name, fn in kernels.items():
        row = {}
        for label, mod in (("compiled", compiled), ("fallback", fallback)):
            if mod is None:
                row[label] = None
                continue
            fn(mod)  # warm up
            start = time.perf_counter()
            for _ in range(repeats):
                fn(mod)
            row[label] = (time.perf_counter() - start) / repeats
        results[name] = row
    return results
