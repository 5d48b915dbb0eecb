import os

# single-threaded BLAS before numpy loads: keeps runs deterministic and
# honors the one-core wall-clock budget of the acceptance suite
for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
    os.environ.setdefault(var, "1")
