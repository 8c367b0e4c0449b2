"""dkstn: spatio-temporal forecasting toolkit for tropical oscillation indices.

Submodules are imported lazily so the command-line entry point can cap the
numeric library's thread pool before anything heavy loads.
"""

import importlib

__version__ = "0.1.0"

_SUBMODULES = (
    "checkpoint",
    "cli",
    "errors",
    "figures",
    "grid",
    "metrics",
    "optim",
    "preprocess",
    "rmm",
    "runconfig",
    "srcm",
    "taam",
    "tensor",
    "training",
)


def __getattr__(name):
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_SUBMODULES))
