"""Liouville measures, time-changed Brownian motion and heat kernels on the
unit torus.

Submodules
----------
exponents
    Closed-form exponent calculus (scaling, multifractal, tube margins).
torus_field
    Log-correlated field synthesis and the discrete Green table.
gmc
    Multiplicative-chaos measures, censuses and the assumption suite.
spectral
    Liouville generator, spectral decompositions, heat kernel, resolvent.
lbm
    Brownian paths/bridges, the additive clock, time change, Monte Carlo.
bounds_harness
    Numerical experiments matching the heat-kernel bound statements.
"""

from . import exponents, torus_field
from ._backend import BACKEND

__version__ = "0.1.0"

__all__ = ["exponents", "torus_field", "gmc", "spectral", "lbm", "bounds_harness", "BACKEND"]


def __getattr__(name):
    # Heavier submodules import lazily so the exponent calculus stays light.
    if name in ("gmc", "spectral", "lbm", "bounds_harness", "cli", "config"):
        import importlib

        mod = importlib.import_module(f".{name}", __name__)
        globals()[name] = mod
        return mod
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
