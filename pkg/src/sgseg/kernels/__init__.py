"""Per-frame kernels with a compiled fast path.

The Cython module is used when it was built; set ``SGSEG_PURE_PYTHON=1`` to
force the reference implementation.
"""

import os

from sgseg.kernels import _pykernels as python

compiled = None
if os.environ.get("SGSEG_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from sgseg.kernels import _ckernels as compiled
    except ImportError:
        compiled = None

backend = compiled if compiled is not None else python
BACKEND_NAME = "cython" if compiled is not None else "python"

barrier_pool = backend.barrier_pool
barrier_matrix = backend.barrier_matrix
run_lengths = backend.run_lengths

__all__ = ["BACKEND_NAME", "barrier_matrix", "barrier_pool", "run_lengths", "compiled", "python"]
