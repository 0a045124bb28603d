"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
implementation. Set ``POFCAP_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

_impl = _kernels_py
BACKEND = "python"

if os.environ.get("POFCAP_PURE_PYTHON", "") != "1":
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"


def backend(name=None):
    """Return a kernel module by name ("cython" or "python"); default is the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")


def forward_kinematics(parents, order, offsets, theta, scale, t):
    return _impl.forward_kinematics(parents, order, offsets, theta, scale, t)


def attached_jacobian(parents, offsets, pos, rot, omega, anchor, frame, local):
    return _impl.attached_jacobian(parents, offsets, pos, rot, omega, anchor, frame, local)


def rasterize_segments(sums, counts, channels, starts, ends, values, half_width):
    return _impl.rasterize_segments(sums, counts, channels, starts, ends, values, half_width)
