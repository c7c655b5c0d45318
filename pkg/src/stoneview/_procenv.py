"""Worker-process initializer. Imports nothing heavy so it can cap BLAS
threading before numpy loads in a spawned process."""

import os


def limit_blas_threads(n=1):
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(n)
