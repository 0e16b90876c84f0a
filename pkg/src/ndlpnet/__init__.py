"""Nighttime image deraining: location-prior network, trainer, synthesizer, metrics."""

import os as _os


def _cap_threads() -> None:
    # NDLP_THREADS caps BLAS/OpenMP pools; must be set before numpy loads.
    cap = _os.environ.get("NDLP_THREADS")
    if not cap:
        return
    for var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
        "VECLIB_MAXIMUM_THREADS",
    ):
        _os.environ.setdefault(var, cap)


_cap_threads()

__version__ = "0.1.0"
