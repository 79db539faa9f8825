"""Region-constrained active loop closure exploration with a pose-graph backend."""

import os

# Pin BLAS thread pools to one thread before numpy loads anywhere in this
# package. Threaded BLAS reductions are not guaranteed to be bitwise
# reproducible, and run outputs are required to be.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

__version__ = "0.1.0"

from .se2 import Pose2, compose, inverse, between, normalize_angle  # noqa: E402,F401
