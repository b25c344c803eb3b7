"""Stochastic Galerkin KKT solvers with hierarchical Gauss-Seidel preconditioning.

Submodules are imported lazily so the command-line entry point can cap the
BLAS thread pools before NumPy loads.
"""

__version__ = "0.1.0"

_SUBMODULES = (
    "basis",
    "bench",
    "fem",
    "krylov",
    "linalg",
    "operators",
    "preconditioners",
    "problems",
    "random_field",
    "spectral",
)


def __getattr__(name):
    if name in _SUBMODULES:
        import importlib

        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(list(globals()) + list(_SUBMODULES))
