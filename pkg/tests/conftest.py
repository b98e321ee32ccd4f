"""Pin BLAS to one thread before numpy loads: the acceptance suite's runtime
bounds are stated for a single CPU core (and the tiny matrices here run
faster without thread fan-out anyway)."""

import os

for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")
