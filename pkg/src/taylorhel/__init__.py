"""Gauge-invariant magnetic helicity on multiply connected voxel domains.

Submodules are imported on first attribute access so that the command-line
entry point can set thread-count variables before numpy loads.
"""
from importlib import import_module

__version__ = "0.1.0"

_EXPORTS = {
    "GridSpec": "grid",
    "Field": "grid",
    "build_complex": "grid",
    "build_domain": "geometry",
    "validate_topology": "geometry",
    "build_basis": "harmonic",
    "decompose": "harmonic",
    "cut_flux": "harmonic",
    "circulation": "harmonic",
    "vector_potential": "potential",
    "gauge_shift": "potential",
    "build_exterior": "potential",
    "upsilon": "helicity",
    "helicity_report": "helicity",
    "iden_check": "helicity",
    "SimConfig": "mhd",
    "InitialCondition": "mhd",
    "run": "mhd",
    "ideal_limit_study": "mhd",
    "woltjer_relax": "relax",
    "run_suite": "verify",
    "load_config": "config",
}

__all__ = sorted(_EXPORTS)


def __getattr__(name):
    if name in _EXPORTS:
        return getattr(import_module(f".{_EXPORTS[name]}", __name__), name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
