"""Console-script entry point.

Applies the IWRI_THREADS worker cap to the BLAS/OpenMP pools before numpy
is imported, then hands over to the CLI.
"""

import os
import sys


def run():
    cap = os.environ.get("IWRI_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, cap)
    from .cli import main

    sys.exit(main(sys.argv[1:]))
