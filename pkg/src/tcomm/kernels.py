"""Kernel backend selection.

The compiled extension ``tcomm._kernels`` is used when importable; otherwise
(or with ``TCOMM_PURE_PYTHON=1``) the numpy fallback is used. Both expose the
same functions with the same semantics.
"""

import importlib
import os

from tcomm import _kernels_py

LINEAR, RELU, TANH, SOFTMAX = (
    _kernels_py.LINEAR,
    _kernels_py.RELU,
    _kernels_py.TANH,
    _kernels_py.SOFTMAX,
)


def load_backend(name: str):
    """Return the kernel module for ``"cython"`` or ``"python"``."""
    if name == "python":
        return _kernels_py
    if name == "cython":
        return importlib.import_module("tcomm._kernels")
    raise ValueError(f"unknown kernel backend {name!r}")


def _select():
    if os.environ.get("TCOMM_PURE_PYTHON", "") not in ("", "0"):
        return "python", _kernels_py
    try:
        return "cython", load_backend("cython")
    except ImportError:
        return "python", _kernels_py


BACKEND, _impl = _select()

dense_forward = _impl.dense_forward
dense_backward = _impl.dense_backward
softmax_rows = _impl.softmax_rows
powernorm_forward = _impl.powernorm_forward
powernorm_backward = _impl.powernorm_backward
adam_update = _impl.adam_update
