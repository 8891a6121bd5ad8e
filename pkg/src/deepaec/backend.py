"""Convolution kernel backend selection.

Two interchangeable implementations of the dilated 2-D convolution kernels
exist: numba-jitted loops (``deepaec._kernels_numba``) and a pure-numpy
path built on tensordot (``deepaec._kernels_numpy``).  The active backend
is chosen once at import time from the ``DEEPAEC_BACKEND`` environment
variable:

    DEEPAEC_BACKEND=numba   force the jitted kernels (error if numba missing)
    DEEPAEC_BACKEND=numpy   force the pure-numpy fallback
    DEEPAEC_BACKEND=auto    numba when importable, numpy otherwise (default)

``set_backend`` switches at runtime; tests and the benchmark script use it
to exercise both paths.  Both backends are deterministic for fixed inputs
(each output element is accumulated in a fixed order), so results are
reproducible run-to-run within a backend.
"""

import os

from .errors import InvalidArgumentError

from . import _kernels_numpy

_BACKENDS = {"numpy": _kernels_numpy}

try:  # numba is optional at runtime, required only when explicitly forced
    from . import _kernels_numba

    _BACKENDS["numba"] = _kernels_numba
except ImportError:  # pragma: no cover - exercised only without numba
    _kernels_numba = None

_active_name = None
_active = None


def available_backends():
    return sorted(_BACKENDS)


def set_backend(name):
    """Select the kernel backend by name ('numba', 'numpy', or 'auto')."""
    global _active_name, _active
    if name == "auto":
        name = "numba" if "numba" in _BACKENDS else "numpy"
    if name not in _BACKENDS:
        raise InvalidArgumentError(
            f"unknown backend {name!r}; available: {available_backends()}"
        )
    _active_name = name
    _active = _BACKENDS[name]
    return name


def current_backend():
    return _active_name


def conv_forward(x, w, pad, dilation):
    return _active.conv_forward(x, w, pad[0], pad[1], dilation[0], dilation[1])


def conv_backward_input(gy, w, in_shape, pad, dilation):
    return _active.conv_backward_input(
        gy, w, in_shape[1], in_shape[2], pad[0], pad[1], dilation[0], dilation[1]
    )


def conv_backward_weights(gy, x, kernel, pad, dilation):
    return _active.conv_backward_weights(
        gy, x, kernel[0], kernel[1], pad[0], pad[1], dilation[0], dilation[1]
    )


set_backend(os.environ.get("DEEPAEC_BACKEND", "auto"))
