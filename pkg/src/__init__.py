"""Layer-skipping transformer inference engine."""
import os

from .config_loader import get_config

__version__ = "0.1.0"

THREAD_ENV_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")

# Must run before numpy is imported by any submodule.
_pinned = os.environ.get("SKIPRUN_THREADS") or get_config().get_runtime_config()["threads"]
if _pinned:
    os.environ["SKIPRUN_THREADS"] = str(_pinned)
    for _var in THREAD_ENV_VARS:
        os.environ[_var] = str(_pinned)


def pinned_threads():
    """Thread count the BLAS backend was pinned to, or None when left to the library."""
    value = os.environ.get("SKIPRUN_THREADS")
    return int(value) if value and value.isdigit() else None
