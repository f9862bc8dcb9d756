"""Console entry point; applies the thread-count override before numpy loads."""

import os


def main(argv=None) -> int:
    threads = os.environ.get("FINITEBATH_THREADS")
    if threads:
        for var in (
            "OMP_NUM_THREADS",
            "OPENBLAS_NUM_THREADS",
            "MKL_NUM_THREADS",
            "NUMEXPR_NUM_THREADS",
        ):
            os.environ.setdefault(var, threads)
    from .cli import main as cli_main

    return cli_main(argv)
