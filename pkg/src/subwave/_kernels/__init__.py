"""Hot numeric kernels with two interchangeable backends.

The numba backend JIT-compiles the inner loops; the numpy backend is a
vectorized fallback with identical semantics.  Selection at import time via
the environment variable SUBWAVE_BACKEND:

    auto  (default) - numba if importable, else numpy
    numba           - require numba, raise if unavailable
    numpy           - force the pure-numpy path

``benchmarks/bench_kernels.py`` compares the two paths.
"""

import os

_requested = os.environ.get("SUBWAVE_BACKEND", "auto").strip().lower()
if _requested not in ("auto", "numba", "numpy"):
    raise RuntimeError(
        f"SUBWAVE_BACKEND must be one of auto|numba|numpy, got {_requested!r}"
    )

if _requested == "numpy":
    from . import _numpy as _impl

    BACKEND = "numpy"
elif _requested == "numba":
    from . import _numba as _impl

    BACKEND = "numba"
else:
    try:
        from . import _numba as _impl

        BACKEND = "numba"
    except ImportError:
        from . import _numpy as _impl

        BACKEND = "numpy"

stiffness_triplets = _impl.stiffness_triplets
tensor_stiffness_triplets = _impl.tensor_stiffness_triplets
mass_triplets = _impl.mass_triplets
locate_points = _impl.locate_points
nodal_gradients = _impl.nodal_gradients
mollify_vector_field = _impl.mollify_vector_field

__all__ = [
    "BACKEND",
    "stiffness_triplets",
    "tensor_stiffness_triplets",
    "mass_triplets",
    "locate_points",
    "nodal_gradients",
    "mollify_vector_field",
]
