"""Kernel backend selection.

The compiled extension is used when importable; ``PPMN_PURE_PYTHON=1`` forces
the numpy fallback. Tests and the benchmark request a backend explicitly via
:func:`get_backend`.
"""
import importlib
import os

_MODULES = {"cython": "ppmn.ops._kernels", "python": "ppmn.ops._kernels_py"}


def available_backends():
    names = []
    for name, module in _MODULES.items():
        try:
            importlib.import_module(module)
        except ImportError:
            continue
        names.append(name)
    return names


def get_backend(name=None):
    """Return the kernel module for ``name`` (default: the active backend)."""
    if name is None:
        return kernels
    if name not in _MODULES:
        raise ValueError(f"unknown kernel backend {name!r}; choose from {sorted(_MODULES)}")
    return importlib.import_module(_MODULES[name])


def _select():
    if os.environ.get("PPMN_PURE_PYTHON", "").strip() not in ("", "0"):
        return "python", get_backend("python")
    try:
        return "cython", get_backend("cython")
    except ImportError:
        return "python", get_backend("python")


BACKEND, kernels = _select()
