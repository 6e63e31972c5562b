"""Entry point for ``python -m channelwise`` and the ``channelwise`` script."""

import os
import sys

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "VECLIB_MAXIMUM_THREADS")


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    if "--serial" in argv:
        # must happen before numpy loads its BLAS
        for var in _THREAD_VARS:
            os.environ[var] = "1"
    from .cli import main as cli_main
    return cli_main(argv)


if __name__ == "__main__":
    sys.exit(main())
