"""Kernel backend selection.

Set ``CHEF_BACKEND=numpy`` or ``CHEF_BACKEND=numba`` to force a backend;
unset, numba is used when importable and numpy otherwise. The flag is read
once at import. Batched training math is GEMM-bound and uses BLAS through
numpy in both backends; the switched kernels are the per-observation
network forward used in rollouts and the categorical projection
(see benchmarks/bench_backends.py for the comparison).
"""

from __future__ import annotations

import os

from .errors import ConfigurationError

_requested = os.environ.get("CHEF_BACKEND", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise ConfigurationError(
        f"CHEF_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

if _requested == "numpy":
    from . import _kernels_numpy as _impl
elif _requested == "numba":
    from . import _kernels_numba as _impl
else:
    try:
        from . import _kernels_numba as _impl
    except ImportError:
        from . import _kernels_numpy as _impl

BACKEND_NAME = _impl.BACKEND_NAME
forward_single = _impl.forward_single
project_batch = _impl.project_batch
