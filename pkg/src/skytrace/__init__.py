"""4D flight-trajectory forecasting on a small numpy autograd engine."""

import os

# must run before numpy loads its BLAS
_threads = os.environ.get("SKYTRACE_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"
