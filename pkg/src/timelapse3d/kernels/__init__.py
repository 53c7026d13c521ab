"""Hot numeric kernels: compiled core with a pure-numpy fallback.

Two interchangeable implementations exist:

* ``_native``  — Cython extension, built by setup.py (optional).
* ``_fallback`` — vectorized numpy, always available.

Both export the same two entry points with identical semantics:

``aggregate_plane(warped, valid, var_eps)``
    Median-of-medians NCC matching cost for one sweep plane.

``zbuffer_scatter(ix, iy, depth, value, deriv, src_index, width, height)``
    Min-depth scatter of point samples onto a pixel grid.

The native module is preferred when importable; setting the environment
variable ``TIMELAPSE3D_FORCE_FALLBACK`` selects the numpy path explicitly
(used by the benchmark and the cross-checking tests).
"""

import os

if os.environ.get("TIMELAPSE3D_FORCE_FALLBACK"):
    from . import _fallback as _impl

    BACKEND = "fallback"
else:
    try:
        from . import _native as _impl  # type: ignore[attr-defined]

        BACKEND = "native"
    except ImportError:
        from . import _fallback as _impl

        BACKEND = "fallback"

aggregate_plane = _impl.aggregate_plane
zbuffer_scatter = _impl.zbuffer_scatter
