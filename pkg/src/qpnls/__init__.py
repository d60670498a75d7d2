"""Quasi-periodic solutions of the 1-D nonlinear Schrodinger equation.

Space-time quasi-periodic approximate solutions are built on Fourier lattices
indexed by Z^4 (two time modes, two space modes) with a multiscale Newton
iteration, a frequency map and small-divisor diagnostics.
"""

from .errors import (
    ConfigError,
    DegenerateFit,
    DegenerateLambda,
    Excised,
    NearResonance,
    NoConvergence,
    PlusBlockSingular,
    SingularQPrime,
    ZeroAmplitude,
)
from .lattice import CoeffField, SectorField, convolve, nonlinear_term, reflect_conjugate
from .divisors import ParamPoint

__version__ = "0.1.0"

__all__ = [
    "CoeffField",
    "ConfigError",
    "DegenerateFit",
    "DegenerateLambda",
    "Excised",
    "NearResonance",
    "NoConvergence",
    "ParamPoint",
    "PlusBlockSingular",
    "SectorField",
    "SingularQPrime",
    "ZeroAmplitude",
    "convolve",
    "nonlinear_term",
    "reflect_conjugate",
]
