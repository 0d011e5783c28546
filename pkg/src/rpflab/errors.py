"""Exception hierarchy for the random-cocycle laboratory.

Every error raised deliberately by this package derives from
:class:`RpflabError`, so callers can catch the package's failures without
masking genuine bugs (``TypeError``, ``IndexError``, ...).  The subclasses
mirror the three ways a computation can refuse to proceed:

* the request itself is malformed (:class:`ConfigError`),
* the requested data lies outside what a sampled environment path can
  provide (:class:`OutOfWindowError`),
* the mathematical object being asked for does not exist or cannot be
  certified, e.g. a degenerate observable or a non-mixing cocycle
  (:class:`DegenerateModelError`, :class:`RefusalError`).
"""

from __future__ import annotations


class RpflabError(Exception):
    """Base class for all deliberate failures raised by this package."""


class ConfigError(RpflabError):
    """A configuration value or combination of values is invalid.

    Raised while parsing config files, merging CLI overrides, or when a
    function receives arguments that violate its documented preconditions.
    """


class OutOfWindowError(RpflabError, IndexError):
    """An environment path was asked for a symbol outside its window.

    Paths are materialized once, over a fixed index window, from a seed.
    Reading past the window would silently re-draw randomness and destroy
    reproducibility, so it is an error instead; re-sample the path with a
    larger window if more symbols are needed.
    """


class DegenerateModelError(RpflabError):
    """The model is degenerate for the requested computation.

    Examples: an observable that is identically zero (no fluctuations, so
    variance-normalized quantities are undefined), or an asymptotic variance
    below the resolvable floor.
    """


class ConvergenceError(RpflabError):
    """An iterative eigendata solve failed to reach its tolerance in depth.

    Carries the last observed increment in the message.  Usually signals a
    spectral parameter outside the analyticity radius, a lattice-degenerate
    observable, or a depth budget too small for the model's contraction rate.
    """


class BranchError(RpflabError):
    """Logarithm branch tracking detected an ambiguous jump.

    Raised when consecutive eigenvalues along a parameter curve differ in
    argument by a quarter turn or more, so continuity cannot pick a branch;
    re-run with a finer curve.
    """


class RefusalError(RpflabError):
    """The computation refuses to certify its output.

    Raised when a validity check fails in a way that makes the downstream
    numbers meaningless rather than merely inaccurate — e.g. a
    characteristic-function norm estimate shows no decay (lattice-valued
    observable), so expansion coefficients would be garbage.
    """
