"""Backend selection: compiled kernels when importable, NumPy otherwise.

``import liouville._backend as bk`` and call ``bk.rho_total`` etc.;
``bk.BACKEND`` names the active implementation ("cython" or "python").
``LIOUVILLE_BACKEND=python`` in the environment forces the fallback.
"""

import os

if os.environ.get("LIOUVILLE_BACKEND", "").strip().lower() == "python":
    from . import _kernels_py as _impl
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernels_py as _impl

BACKEND = _impl.BACKEND
rho_total = _impl.rho_total
rho_cumsum = _impl.rho_cumsum
exit_chunk = _impl.exit_chunk


def available_backends():
    """Names of importable backends, compiled one first when present."""
    names = []
    try:
        from . import _kernels  # noqa: F401

        names.append("cython")
    except ImportError:
        pass
    names.append("python")
    return names
