"""Hot numeric kernels: compiled extension when available, numpy otherwise.

The backend is picked once at import. Set COLLABMPC_BACKEND=numpy to force
the fallback, COLLABMPC_BACKEND=native to require the extension.
"""

import os

from . import _numpy

_impl = _numpy
_backend = "numpy"

_requested = os.environ.get("COLLABMPC_BACKEND", "").strip().lower()
if _requested != "numpy":
    try:
        from . import _native  # type: ignore[attr-defined]

        _impl = _native
        _backend = "native"
    except ImportError:
        if _requested == "native":
            raise ImportError(
                "COLLABMPC_BACKEND=native but the compiled extension is not "
                "built; reinstall with a C toolchain or unset the variable"
            )


def backend() -> str:
    """Name of the active kernel backend ('native' or 'numpy')."""
    return _backend


fk_batch = _impl.fk_batch
sphere_centers = _impl.sphere_centers
sphere_jacobians = _impl.sphere_jacobians
point_jacobian = _impl.point_jacobian
rotation_jacobian = _impl.rotation_jacobian
sdf_batch = _impl.sdf_batch
