"""Numerical laboratory for quenched limit theorems of random cocycles.

The package builds random transfer-operator and Markov-operator cocycles
over a seeded symbolic environment, solves their fiberwise
Perron--Frobenius problems (leading eigenvalue, density, and conformal
functional along the orbit), differentiates the resulting pressure in a
spectral parameter to obtain asymptotic moments of Birkhoff sums, and
assembles Edgeworth-type corrections to the central limit theorem,
including their numerical validation against Monte Carlo sampling and
exact characteristic-function inversion.

Modules
-------
env
    Seeded two-sided symbol streams (the driving environment).
dynamics
    Random expanding circle maps, observables, Birkhoff sums, Gibbs sampling.
operators
    Weighted transfer / Markov operator cocycles on grid-discretized fields.
rpf
    Fiberwise eigendata solvers and cocycle contraction estimation.
moments
    Pressure jets, combinatorial moment identities, asymptotic moments.
edgeworth
    Higher-order distributional expansions and their empirical validation.
cli
    ``rpflab`` command-line entry point running reproducible experiments.
"""

__version__ = "0.1.0"

__all__ = [
    "env",
    "dynamics",
    "operators",
    "rpf",
    "moments",
    "edgeworth",
    "config",
    "cli",
    "errors",
]
