"""Random expanding circle maps, observables, Birkhoff sums, Gibbs sampling.

The fiber dynamics used throughout the package are full-branch affine
expanding maps of the circle ``[0, 1)``: symbol ``s`` of the environment
selects the map ``T_s(x) = m_s x mod 1`` with an integer slope ``m_s >= 2``.
Composing along an environment path gives the skew-product orbit

    ``x_{i+1} = T_{omega_i}(x_i)``,

and a per-symbol observable ``u_s`` accumulates into the Birkhoff sum
``S_n = sum_{i<n} u_{omega_i}(x_i)``, the central object whose distribution
the rest of the package expands.

Observables and potentials come from small closed-form families so that
exact means and regularity constants are available:

* :class:`TrigPoly` — real trigonometric polynomials (smooth case),
* :class:`StepObservable` — piecewise-constant functions on equal cells
  (rough case; with integer values it is lattice-distributed, the standard
  counterexample for distributional expansions).

:func:`sample_orbit_under_gibbs` draws Birkhoff sums under the fiberwise
Gibbs measure by reconstructing orbits *backwards* through inverse branches.
The naive alternative — draw the initial point, iterate forwards — is
numerically invalid here: an affine slope-``m`` map consumes ``log2(m)``
mantissa bits per step, so double-precision forward orbits of the doubling
map degenerate to exactly 0 after ~52 steps.  Backward reconstruction gains
bits per step instead, and produces the same process in law.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DegenerateModelError
from .env import EnvModel, EnvPath

__all__ = [
    "TrigPoly",
    "LinearObservable",
    "StepObservable",
    "MapFamily",
    "ObservablePair",
    "inverse_branches",
    "birkhoff_sum",
    "center_observable",
    "sample_orbit_under_gibbs",
]

_PHI_BASES = ("geometric", "zero")


class TrigPoly:
    """Real trigonometric polynomial ``c + sum_k a_k cos(2 pi k x) + b_k sin(2 pi k x)``.

    Parameters
    ----------
    const : float
        Constant term ``c`` (also the Lebesgue mean).
    cos : sequence of float
        Cosine coefficients ``a_1, a_2, ...`` for frequencies ``1, 2, ...``.
    sin : sequence of float
        Sine coefficients ``b_1, b_2, ...``.

    Examples
    --------
    >>> u = TrigPoly(cos=[1.0])          # cos(2 pi x)
    >>> float(round(u(0.0), 12))
    1.0
    >>> u.lebesgue_mean
    0.0
    """

    def __init__(self, const: float = 0.0, cos=(), sin=()) -> None:
        self.const = float(const)
        self.cos = np.asarray(cos, dtype=float)
        self.sin = np.asarray(sin, dtype=float)
        if self.cos.ndim != 1 or self.sin.ndim != 1:
            raise ConfigError("cos and sin coefficient lists must be 1-d")
        if not (np.isfinite(self.cos).all() and np.isfinite(self.sin).all()
                and np.isfinite(self.const)):
            raise ConfigError("trigonometric coefficients must be finite")

    @property
    def max_frequency(self) -> int:
        """Largest frequency with a nonzero coefficient (0 for constants)."""
        k = 0
        for arr in (self.cos, self.sin):
            nz = np.nonzero(arr)[0]
            if nz.size:
                k = max(k, int(nz[-1]) + 1)
        return k

    @property
    def lebesgue_mean(self) -> float:
        """Mean against Lebesgue measure on the circle (the constant term)."""
        return self.const

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape, self.const)
        two_pi_x = 2.0 * np.pi * x
        for k, a in enumerate(self.cos, start=1):
            if a != 0.0:
                out += a * np.cos(k * two_pi_x)
        for k, b in enumerate(self.sin, start=1):
            if b != 0.0:
                out += b * np.sin(k * two_pi_x)
        return out if out.ndim else float(out)

    def shifted(self, delta: float) -> "TrigPoly":
        """Same polynomial with ``delta`` added to the constant term."""
        return TrigPoly(self.const + delta, self.cos.copy(), self.sin.copy())

    def is_zero(self, tol: float = 0.0) -> bool:
        return (abs(self.const) <= tol
                and (np.abs(self.cos) <= tol).all()
                and (np.abs(self.sin) <= tol).all())

    def __repr__(self) -> str:  # pragma: no cover - cosmetic
        return f"TrigPoly(const={self.const}, cos={self.cos.tolist()}, sin={self.sin.tolist()})"


class LinearObservable:
    """Affine observable ``u(x) = slope * x + intercept`` on ``[0, 1)``.

    Not periodic (it jumps at 0), so it suits the integral-kernel variant
    and the piecewise-linear grid rule; trigonometric interpolation would
    alias it.  The closed-form mean makes quadrature oracles exact.
    """

    def __init__(self, slope: float = 1.0, intercept: float = 0.0) -> None:
        if not (np.isfinite(slope) and np.isfinite(intercept)):
            raise ConfigError("slope and intercept must be finite")
        self.slope = float(slope)
        self.intercept = float(intercept)

    @property
    def lebesgue_mean(self) -> float:
        return 0.5 * self.slope + self.intercept

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = self.slope * (x % 1.0) + self.intercept
        return out if out.ndim else float(out)

    def shifted(self, delta: float) -> "LinearObservable":
        return LinearObservable(self.slope, self.intercept + delta)

    def is_zero(self, tol: float = 0.0) -> bool:
        return abs(self.slope) <= tol and abs(self.intercept) <= tol

    def __repr__(self) -> str:  # pragma: no cover - cosmetic
        return f"LinearObservable(slope={self.slope}, intercept={self.intercept})"


class StepObservable:
    """Piecewise-constant observable on ``K`` equal cells of the circle.

    ``u(x) = values[floor(K x)]`` for ``x in [0, 1)``.  With integer values
    the Birkhoff sums live on a lattice, which defeats characteristic-
    function decay; that degenerate behaviour is exactly what the negative
    controls downstream need to detect.
    """

    def __init__(self, values) -> None:
        self.values = np.asarray(values, dtype=float)
        if self.values.ndim != 1 or self.values.size < 1:
            raise ConfigError("step values must be a nonempty 1-d sequence")
        if not np.isfinite(self.values).all():
            raise ConfigError("step values must be finite")

    @property
    def cells(self) -> int:
        return self.values.size

    @property
    def lebesgue_mean(self) -> float:
        return float(self.values.mean())

    @property
    def is_integer_lattice(self) -> bool:
        """True when all values are integers (lattice-distributed sums)."""
        return bool(np.all(self.values == np.round(self.values)))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.floor((x % 1.0) * self.cells).astype(np.int64)
        idx = np.clip(idx, 0, self.cells - 1)
        out = self.values[idx]
        return out if out.ndim else float(out)

    def shifted(self, delta: float) -> "StepObservable":
        return StepObservable(self.values + delta)

    def is_zero(self, tol: float = 0.0) -> bool:
        return bool((np.abs(self.values) <= tol).all())

    def __repr__(self) -> str:  # pragma: no cover - cosmetic
        return f"StepObservable(values={self.values.tolist()})"


class MapFamily:
    """Per-symbol full-branch affine expanding circle maps ``x -> m_s x mod 1``.

    Parameters
    ----------
    slopes : sequence of int
        One integer slope ``m_s >= 2`` per environment symbol.  Every branch
        ``y -> (y + b) / m_s`` is a bijection onto ``[0, 1)`` and contracts
        distances by ``1 / m_s``, which is what makes cocycle iterates of the
        associated operators contract geometrically.
    """

    def __init__(self, slopes) -> None:
        slopes = np.asarray(slopes, dtype=np.int64)
        if slopes.ndim != 1 or slopes.size < 1:
            raise ConfigError("slopes must be a nonempty 1-d sequence")
        if np.any(slopes < 2):
            raise ConfigError(f"all slopes must be >= 2, got {slopes.tolist()}")
        self.slopes = slopes

    @property
    def alphabet_size(self) -> int:
        return self.slopes.size

    @property
    def max_slope(self) -> int:
        """Global branch-count bound over symbols."""
        return int(self.slopes.max())

    def slope(self, symbol: int) -> int:
        return int(self.slopes[symbol])

    def apply(self, symbol: int, x):
        """Forward map ``T_s(x) = m_s x mod 1`` (vectorized in ``x``)."""
        x = np.asarray(x, dtype=float)
        out = (self.slopes[symbol] * x) % 1.0
        return out if out.ndim else float(out)

    def orbit(self, path: EnvPath, x, n: int) -> np.ndarray:
        """Orbit points ``x_0, ..., x_n`` along the path (shape ``(n+1,) + x.shape``)."""
        x = np.asarray(x, dtype=float)
        points = np.empty((n + 1,) + x.shape)
        points[0] = x
        for i in range(n):
            points[i + 1] = self.apply(path.symbol(i), points[i])
        return points

    def __repr__(self) -> str:  # pragma: no cover - cosmetic
        return f"MapFamily(slopes={self.slopes.tolist()})"


def inverse_branches(family: MapFamily, symbol: int, x):
    """All preimages of ``x`` under ``T_s``, indexed by branch label.

    Returns an array of shape ``(m_s,) + x.shape`` whose entry at position
    ``b`` is the branch-``b`` preimage ``(x + b) / m_s``; the branch label is
    the array index.  Matched branches of two points ``x, x'`` are closer by
    exactly the factor ``1 / m_s``.
    """
    x = np.asarray(x, dtype=float) % 1.0
    m = family.slope(symbol)
    b = np.arange(m, dtype=float).reshape((m,) + (1,) * x.ndim)
    return (x[None, ...] + b) / m


class ObservablePair:
    """Per-symbol potential and observable with regularity parameters.

    Parameters
    ----------
    u : sequence
        One observable per symbol (:class:`TrigPoly` or
        :class:`StepObservable`).
    phi_base : {"geometric", "zero"}
        Base potential: ``-ln m_s`` (the normalized choice whose transfer
        operator fixes constants for affine maps) or ``0`` (unnormalized).
    phi_extra : sequence of TrigPoly or None, optional
        Optional smooth perturbation added to the base potential per symbol.
    alpha, xi : float
        Regularity parameters of the function class: Hoelder exponent
        ``alpha`` in (0, 1] and the scale ``xi > 0`` weighting the seminorm
        in ``max(sup, xi * seminorm)`` style norms.
    """

    def __init__(self, u, phi_base: str = "geometric", phi_extra=None,
                 alpha: float = 1.0, xi: float = 1.0) -> None:
        self.u = tuple(u)
        if len(self.u) < 1:
            raise ConfigError("need at least one per-symbol observable")
        for obs in self.u:
            if not callable(obs) or not hasattr(obs, "lebesgue_mean"):
                raise ConfigError(f"unsupported observable object {obs!r}")
        if phi_base not in _PHI_BASES:
            raise ConfigError(f"phi_base must be one of {_PHI_BASES}, got {phi_base!r}")
        self.phi_base = phi_base
        if phi_extra is None:
            phi_extra = (None,) * len(self.u)
        self.phi_extra = tuple(phi_extra)
        if len(self.phi_extra) != len(self.u):
            raise ConfigError("phi_extra must have one entry per symbol")
        for extra in self.phi_extra:
            if extra is not None and not isinstance(extra, TrigPoly):
                raise ConfigError("phi_extra entries must be TrigPoly or None")
        if not (0.0 < alpha <= 1.0):
            raise ConfigError(f"alpha must lie in (0, 1], got {alpha}")
        if not (xi > 0.0):
            raise ConfigError(f"xi must be positive, got {xi}")
        self.alpha = float(alpha)
        self.xi = float(xi)

    @property
    def alphabet_size(self) -> int:
        return len(self.u)

    @property
    def is_plain_geometric(self) -> bool:
        """True when the potential is exactly ``-ln m_s`` (no perturbation).

        For affine maps this is the exactly-normalized case: the weighted
        branch sum of constants telescopes to the same constant, the
        invariant density is 1, and the Gibbs measure is Lebesgue on every
        fiber.
        """
        return self.phi_base == "geometric" and all(
            e is None or e.is_zero() for e in self.phi_extra)

    def u_values(self, symbol: int, x):
        """Observable of ``symbol`` evaluated at ``x`` (vectorized)."""
        return self.u[symbol](x)

    def phi_values(self, family: MapFamily, symbol: int, x):
        """Potential of ``symbol`` evaluated at ``x`` (vectorized)."""
        x = np.asarray(x, dtype=float)
        base = -np.log(family.slope(symbol)) if self.phi_base == "geometric" else 0.0
        out = np.full(x.shape, base)
        extra = self.phi_extra[symbol]
        if extra is not None:
            out = out + extra(x)
        return out if out.ndim else float(out)

    def with_u(self, new_u) -> "ObservablePair":
        """Copy with the observables replaced (potential and parameters kept)."""
        return ObservablePair(new_u, self.phi_base, self.phi_extra, self.alpha, self.xi)

    def __repr__(self) -> str:  # pragma: no cover - cosmetic
        return (f"ObservablePair(symbols={len(self.u)}, phi_base={self.phi_base!r}, "
                f"alpha={self.alpha}, xi={self.xi})")


def birkhoff_sum(path: EnvPath, family: MapFamily, field: ObservablePair,
                 x, n: int):
    """Birkhoff sum ``S_n = sum_{i<n} u_{omega_i}(x_i)`` along the path.

    ``x`` may be a scalar or an array of starting points; the sum is
    vectorized over starting points.  ``n = 0`` gives 0.
    """
    if n < 0:
        raise ConfigError(f"n must be >= 0, got {n}")
    x = np.asarray(x, dtype=float)
    total = np.zeros(x.shape)
    for i in range(n):
        s = path.symbol(i)
        total += field.u_values(s, x)
        x = np.asarray(family.apply(s, x))
    return total if total.ndim else float(total)


def _gibbs_weights(gibbs) -> np.ndarray:
    """Gibbs cell weights ``h * nu`` from a solved eigendata triplet."""
    h = np.asarray(gibbs.h.values).real
    nu = np.asarray(gibbs.nu_weights).real
    w = h * nu
    total = w.sum()
    if total <= 0 or np.any(w < -1e-10):
        raise DegenerateModelError("Gibbs weights from the triplet are not a density")
    return np.clip(w, 0.0, None) / max(w.sum(), 1e-300)


def center_observable(family: MapFamily, field: ObservablePair, gibbs,
                      model: EnvModel | None = None) -> ObservablePair:
    """Subtract the ensemble-averaged Gibbs mean from every observable.

    The global mean is ``sum_s w_s * mu(u_s)`` where ``w_s`` is the marginal
    symbol law (uniform if ``model`` is None) and ``mu`` is the Gibbs measure
    taken from ``gibbs``: exactly Lebesgue for plain geometric potentials,
    otherwise the grid density carried by the triplet.  The same constant is
    subtracted from every symbol's observable, so fluctuations are
    unchanged; afterwards the ensemble average of ``mu(u_s)`` vanishes.

    Parameters
    ----------
    family : MapFamily
    field : ObservablePair
    gibbs : eigendata triplet at z = 0, or None
        When None the potential must be plain geometric (Gibbs = Lebesgue,
        means are closed-form).
    model : EnvModel, optional
        Supplies the marginal symbol law; uniform weights when omitted.

    Returns
    -------
    ObservablePair
    """
    s_count = field.alphabet_size
    if model is not None:
        weights = np.asarray(model.stationary, dtype=float)
        if weights.size != s_count:
            raise ConfigError("model alphabet does not match observable count")
    else:
        weights = np.full(s_count, 1.0 / s_count)

    if gibbs is None:
        if not field.is_plain_geometric:
            raise ConfigError("centering without a Gibbs triplet requires the "
                              "plain geometric potential (Gibbs = Lebesgue)")
        means = np.array([field.u[s].lebesgue_mean for s in range(s_count)])
    else:
        w = _gibbs_weights(gibbs)
        nodes = np.asarray(gibbs.h.grid.nodes)
        means = np.array([float(np.real(field.u_values(s, nodes)) @ w)
                          for s in range(s_count)])

    mean = float(weights @ means)
    return field.with_u(tuple(obs.shifted(-mean) for obs in field.u))


def sample_orbit_under_gibbs(path: EnvPath, family: MapFamily,
                             field: ObservablePair, gibbs, n: int, rng,
                             size: int | None = None,
                             return_initial: bool = False):
    """Draw Birkhoff-sum samples ``S_n`` under the fiberwise Gibbs measure.

    Orbits are reconstructed backwards: the endpoint ``x_n`` is drawn from
    the Gibbs density, then inverse branches are selected step by step with
    the normalized branch weights ``e^{phi(y_b)}``, accumulating the
    observable.  Division by the slope gains mantissa bits each step, so the
    reconstruction is numerically exact where forward iteration of expanding
    maps would shed all randomness after ~52 steps.  The law of
    ``(x_0, ..., x_n)`` is the same as drawing ``x_0`` from the Gibbs measure
    and iterating forwards.

    Parameters
    ----------
    path : EnvPath
    family : MapFamily
    field : ObservablePair
        The potential must make the operator normalized (branch weights
        ``e^{phi(y_b)}`` summing to 1); plain geometric potentials take a
        uniform-branch fast path.
    gibbs : eigendata triplet at z = 0, or None
        Supplies the endpoint density grid; None uses the exact Lebesgue
        endpoint law valid for plain geometric potentials.
    n : int
        Number of Birkhoff steps; the path window must cover ``0 .. n``.
    rng : numpy.random.Generator
    size : int, optional
        Number of independent samples; None returns a scalar.
    return_initial : bool
        When True also return the reconstructed starting points ``x_0``.

    Returns
    -------
    samples : float or numpy.ndarray
    initial : numpy.ndarray, only when ``return_initial``
    """
    if n < 0:
        raise ConfigError(f"n must be >= 0, got {n}")
    scalar = size is None
    count = 1 if scalar else int(size)
    if count < 1:
        raise ConfigError(f"size must be >= 1, got {size}")
    path._check(n)  # fail fast before any sampling work

    if gibbs is None:
        if not field.is_plain_geometric:
            raise ConfigError("sampling without a Gibbs triplet requires the "
                              "plain geometric potential (Gibbs = Lebesgue)")
        x = rng.random(count)
    else:
        w = _gibbs_weights(gibbs)
        cells = np.searchsorted(np.cumsum(w), rng.random(count), side="right")
        cells = np.minimum(cells, w.size - 1)
        x = (cells + rng.random(count)) / w.size

    fast = field.is_plain_geometric
    total = np.zeros(count)
    symbols = path.symbols_slice(0, n)
    for k in range(n - 1, -1, -1):
        s = int(symbols[k])
        m = family.slope(s)
        if fast:
            branch = rng.integers(0, m, size=count)
            x = (x + branch) / m
        else:
            # Branch weights of the normalized operator: e^{phi(y_b)} with
            # sum_b e^{phi(y_b)} = 1.  Anything else means the caller passed
            # an unnormalized potential and the sample law would be wrong.
            preimages = (x[None, :] + np.arange(m)[:, None]) / m
            weights = np.exp(field.phi_values(family, s, preimages))
            colsums = weights.sum(axis=0)
            if np.any(np.abs(colsums - 1.0) > 1e-8):
                raise ConfigError("potential is not normalized (branch weights "
                                  "do not sum to 1); normalize the operator first")
            cumulative = np.cumsum(weights, axis=0)
            draw = rng.random(count)
            branch = np.minimum((draw[None, :] >= cumulative).sum(axis=0), m - 1)
            x = preimages[branch, np.arange(count)]
        total += field.u_values(s, x)

    if scalar:
        return (float(total[0]), x) if return_initial else float(total[0])
    return (total, x) if return_initial else total
