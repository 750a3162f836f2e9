"""Kernel backend selection.

The compiled extension ``stepconf._kernels`` is used when it imports; otherwise
(or when ``STEPCONF_PURE_PYTHON=1``) the pure-Python twin in ``_pykernels``
is used. Both expose ``fnv1a64``, ``mcs_expand`` and ``mcs_exact``.
"""

import importlib
import os

from . import _pykernels


def load_backend(name):
    """Return the kernel module for ``"cython"`` or ``"python"``."""
    if name == "python":
        return _pykernels
    if name == "cython":
        return importlib.import_module("stepconf._kernels")
    raise ValueError(f"unknown kernel backend {name!r}")


def available_backends():
    names = ["python"]
    try:
        load_backend("cython")
    except ImportError:
        pass
    else:
        names.insert(0, "cython")
    return names


if os.environ.get("STEPCONF_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        _impl = load_backend("cython")
    except ImportError:
        _impl = _pykernels

BACKEND = _impl.BACKEND
fnv1a64 = _impl.fnv1a64
mcs_expand = _impl.mcs_expand
mcs_exact = _impl.mcs_exact
