"""Hot numerical kernels with a compiled core and a NumPy fallback.

The Cython extension is used when it was built; otherwise the pure-NumPy
implementations take over. Set ONTASK_PURE_PYTHON=1 to force the fallback
(useful for benchmarking and debugging).
"""

import os

from ontask.kernels import _pykernels

if os.environ.get("ONTASK_PURE_PYTHON"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from ontask.kernels import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

dft_onesided = _impl.dft_onesided
best_split_scan = _impl.best_split_scan


def get_backend() -> str:
    """Name of the active kernel backend: "cython" or "python"."""
    return BACKEND


def available_backends() -> dict[str, object]:
    """Importable backend modules keyed by name."""
    backends: dict[str, object] = {"python": _pykernels}
    try:
        from ontask.kernels import _ckernels

        backends["cython"] = _ckernels
    except ImportError:
        pass
    return backends
