"""Order-``d`` Edgeworth expansions for normalized Birkhoff sums.

For the normalized sum ``X_n = S_n / sqrt(n)`` the characteristic function
factors through the leading eigendata of the weighted cocycle,

    ``E[exp(i t X_n)] = exp(sum_j Pi_j(it/sqrt(n))) * W_end(it/sqrt(n))``

up to an exponentially small remainder.  Writing ``u = n^(-1/2)`` and
``tau = it``, subtracting the Gaussian part ``-t^2 v / 2`` (with ``v`` the
mean second pressure derivative over the ``n`` departure fibers) leaves the
graded formal series

    ``psi = sum_{l>=3} u^(l-2) pibar_l tau^l / l!
            + sum_{l>=1} u^l w_l tau^l / l!``

whose exponential, truncated at grade ``u^d``, yields frequency polynomials
``A_k(tau)``.  Each Fourier monomial ``(it)^j e^{-v t^2/2}`` inverts to the
signed Hermite image

    ``(it)^j  ->  -v^(-(j-1)/2) He_{j-1}(s / sqrt(v)) phi_v(s)``   (j >= 1)

with ``phi_v`` the density of the centered Gaussian of variance ``v``, so
the corrected distribution function is

    ``F_d(s) = Phi(s / sqrt(v)) + sum_k n^(-k/2) P_k(s) phi_v(s)``.

The module provides the exact-coefficient series algebra
(:class:`FormalSeries`), the expansion builder/evaluator
(:func:`build_expansion`, :func:`evaluate_expansion`), a high-accuracy CDF
oracle built by numerically inverting the operator characteristic function
(:func:`cdf_via_characteristic`), the sup-distance
(:func:`kolmogorov_distance`), and three experiments measuring the
expansion's convergence behavior.  Lattice (arithmetic) observables admit
no such expansion; :func:`reject_lattice_observable` detects them by the
absence of twisted-norm decay and the experiments refuse to run on them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import hermite_e
from numpy.polynomial import polynomial as npoly
from scipy.special import ndtr

from .env import EnvPath
from .errors import (ConfigError, ConvergenceError, DegenerateModelError,
                     RefusalError, RpflabError)
from .moments import (_JET_AGREEMENT, _STRICT_JET_ORDER, _cauchy_derivatives,
                      _end_weights, _fit_rate, _principal_logs,
                      _window_lambda_w, PressureJet)
from .operators import CocycleEngine, OperatorSpec, norm_estimate
from .rpf import _default_depth, _guard_scale

__all__ = [
    "FormalSeries",
    "EdgeworthModel",
    "CdfCurve",
    "OrderImprovementReport",
    "CoefficientConvergenceReport",
    "CltRateReport",
    "monomial_cdf_image",
    "build_expansion",
    "evaluate_expansion",
    "gaussian_curve",
    "expansion_curve",
    "cdf_via_characteristic",
    "kolmogorov_distance",
    "reject_lattice_observable",
    "order_improvement_experiment",
    "coefficient_convergence_experiment",
    "clt_rate_experiment",
    "write_cdf_csv",
]

# Probe frequencies for lattice detection: mixed small/large values plus
# 2*pi, which is the resonant frequency of any integer-lattice observable
# rescaled to span 1 (the worst case for half-integer-valued steps).
_LATTICE_PROBE = (0.5, 1.0, 2.0, 4.0, 2.0 * np.pi, 8.0)
_LATTICE_LENGTHS = (25, 50, 100, 200)
_LATTICE_THRESHOLD = 0.9

_MAX_EXPANSION_ORDER = 3


# --------------------------------------------------------------------------
# graded formal series
# --------------------------------------------------------------------------

@dataclass
class FormalSeries:
    """Polynomial coefficients graded by powers of ``u = n^(-1/2)``.

    ``coeffs[k, j]`` is the coefficient of ``u^k tau^j``; row ``k`` is the
    ascending coefficient list of the frequency polynomial multiplying
    ``u^k``.  All arithmetic truncates the ``u``-grading at ``order`` while
    letting the frequency degree grow as needed.  ``exp`` and ``log`` are
    exact truncated compositions (finite sums, since every summand raises
    the minimum ``u``-grade), so ``log(exp(S)) == S`` to rounding.
    """

    order: int
    coeffs: np.ndarray

    def __post_init__(self) -> None:
        if self.order < 0:
            raise ConfigError(f"series order must be >= 0, got {self.order}")
        self.coeffs = np.atleast_2d(np.asarray(self.coeffs, dtype=complex))
        if self.coeffs.shape[0] != self.order + 1:
            raise ConfigError(
                f"series of order {self.order} needs {self.order + 1} "
                f"grade rows, got {self.coeffs.shape[0]}")

    # -- constructors ------------------------------------------------------
    @classmethod
    def zero(cls, order: int) -> "FormalSeries":
        return cls(order, np.zeros((order + 1, 1), dtype=complex))

    @classmethod
    def one(cls, order: int) -> "FormalSeries":
        c = np.zeros((order + 1, 1), dtype=complex)
        c[0, 0] = 1.0
        return cls(order, c)

    @classmethod
    def term(cls, order: int, u_power: int, tau_power: int,
             value: complex) -> "FormalSeries":
        if not 0 <= u_power <= order:
            raise ConfigError(
                f"u-power must lie in 0..{order}, got {u_power}")
        if tau_power < 0:
            raise ConfigError(f"tau-power must be >= 0, got {tau_power}")
        c = np.zeros((order + 1, tau_power + 1), dtype=complex)
        c[u_power, tau_power] = value
        return cls(order, c)

    # -- helpers -----------------------------------------------------------
    @property
    def tau_degree(self) -> int:
        """Largest frequency power carried (trailing zeros ignored)."""
        nz = np.nonzero(np.abs(self.coeffs).max(axis=0))[0]
        return int(nz[-1]) if nz.size else 0

    def u_poly(self, k: int) -> np.ndarray:
        """Ascending frequency-polynomial coefficients of grade ``u^k``."""
        if not 0 <= k <= self.order:
            raise ConfigError(f"grade must lie in 0..{self.order}, got {k}")
        return self.coeffs[k].copy()

    def coefficient(self, u_power: int, tau_power: int) -> complex:
        if not 0 <= u_power <= self.order:
            raise ConfigError(
                f"u-power must lie in 0..{self.order}, got {u_power}")
        if tau_power >= self.coeffs.shape[1]:
            return 0.0 + 0.0j
        return complex(self.coeffs[u_power, tau_power])

    def allclose(self, other: "FormalSeries", tol: float = 1e-12) -> bool:
        if self.order != other.order:
            return False
        t = max(self.coeffs.shape[1], other.coeffs.shape[1])
        a = np.zeros((self.order + 1, t), dtype=complex)
        b = np.zeros((self.order + 1, t), dtype=complex)
        a[:, :self.coeffs.shape[1]] = self.coeffs
        b[:, :other.coeffs.shape[1]] = other.coeffs
        return bool(np.abs(a - b).max() <= tol)

    def _binop(self, other: "FormalSeries", sign: float) -> "FormalSeries":
        if not isinstance(other, FormalSeries):
            return NotImplemented
        if self.order != other.order:
            raise ConfigError(
                f"cannot combine series of orders {self.order} and "
                f"{other.order}")
        t = max(self.coeffs.shape[1], other.coeffs.shape[1])
        out = np.zeros((self.order + 1, t), dtype=complex)
        out[:, :self.coeffs.shape[1]] = self.coeffs
        out[:, :other.coeffs.shape[1]] += sign * other.coeffs
        return FormalSeries(self.order, out)

    def __add__(self, other):
        return self._binop(other, 1.0)

    def __sub__(self, other):
        return self._binop(other, -1.0)

    def __mul__(self, other):
        if np.isscalar(other):
            return FormalSeries(self.order, self.coeffs * complex(other))
        if not isinstance(other, FormalSeries):
            return NotImplemented
        if self.order != other.order:
            raise ConfigError(
                f"cannot multiply series of orders {self.order} and "
                f"{other.order}")
        ta, tb = self.coeffs.shape[1], other.coeffs.shape[1]
        out = np.zeros((self.order + 1, ta + tb - 1), dtype=complex)
        for a in range(self.order + 1):
            row_a = self.coeffs[a]
            if not np.any(row_a):
                continue
            for b in range(self.order + 1 - a):
                row_b = other.coeffs[b]
                if not np.any(row_b):
                    continue
                out[a + b] += np.convolve(row_a, row_b)
        return FormalSeries(self.order, out)

    __rmul__ = __mul__

    def exp(self) -> "FormalSeries":
        """Truncated exponential; requires a vanishing grade-0 row.

        The grade-0 row must be identically zero so that each power of the
        series raises the minimum ``u``-grade and the sum terminates at
        ``order`` terms (otherwise the frequency degree would grow without
        bound).
        """
        if np.abs(self.coeffs[0]).max() > 0.0:
            raise ConfigError(
                "series exponential requires a vanishing constant-grade "
                "row; subtract the grade-0 part first")
        acc = FormalSeries.one(self.order)
        power = FormalSeries.one(self.order)
        for m in range(1, self.order + 1):
            power = power * self * (1.0 / m)
            acc = acc + power
        return acc

    def log(self) -> "FormalSeries":
        """Truncated logarithm; requires grade-0 row equal to ``1``."""
        row0 = self.coeffs[0]
        if abs(row0[0] - 1.0) > 1e-9 or np.abs(row0[1:]).max(initial=0.0) > 1e-9:
            raise ConfigError(
                "series logarithm requires the constant-grade row to be "
                "exactly 1")
        x = self - FormalSeries.one(self.order)
        x.coeffs[0] = 0.0           # drop the 1e-9-level residue exactly
        acc = FormalSeries.zero(self.order)
        power = FormalSeries.one(self.order)
        for m in range(1, self.order + 1):
            power = power * x
            acc = acc + power * ((-1.0) ** (m + 1) / m)
        return acc


# --------------------------------------------------------------------------
# expansion model
# --------------------------------------------------------------------------

def _he_power_basis(j: int) -> np.ndarray:
    """Ascending power-basis coefficients of the probabilists' ``He_j``."""
    e = np.zeros(j + 1)
    e[j] = 1.0
    return hermite_e.herme2poly(e)


def monomial_cdf_image(j: int, variance: float) -> np.ndarray:
    """Polynomial ``p`` with ``p(s) phi_v(s)`` the CDF image of ``(it)^j``.

    The function whose Fourier transform (in the ``E[e^{its}]`` convention)
    equals ``(it)^j e^{-v t^2 / 2}`` is the ``j``-th derivative of the
    Gaussian density; its primitive vanishing at ``-inf`` is
    ``-v^(-(j-1)/2) He_{j-1}(s/sqrt(v)) phi_v(s)``.  Returns the ascending
    coefficients of that polynomial factor (degree ``j - 1``).
    """
    if j < 1:
        raise ConfigError(f"monomial power must be >= 1, got {j}")
    if variance <= 0.0:
        raise ConfigError(f"variance must be positive, got {variance}")
    he = _he_power_basis(j - 1)
    scale = -float(variance) ** (-(j - 1) / 2.0)
    powers = np.arange(j, dtype=float)
    return scale * he * float(variance) ** (-powers / 2.0)


@dataclass
class EdgeworthModel:
    """An order-``d`` expansion of the distribution of ``S_n / sqrt(n)``.

    ``p_polys[k-1]`` holds the ascending coefficients of the degree
    ``3k - 1`` correction polynomial ``P_k``; the corrected CDF is
    ``Phi(s/sqrt(variance)) + sum_k n^(-k/2) P_k(s) phi_v(s)``.
    ``a_polys[k-1]`` holds the ascending frequency-side coefficients of
    ``A_k(tau)`` (the ``u^k`` grade of the exponentiated cumulant series),
    kept for diagnostics and coefficient-tracking experiments.
    """

    order: int
    n: int
    variance: float
    p_polys: list
    a_polys: list

    def __post_init__(self) -> None:
        if not 1 <= self.order <= _MAX_EXPANSION_ORDER:
            raise ConfigError(
                f"expansion order must lie in 1..{_MAX_EXPANSION_ORDER}, "
                f"got {self.order}")
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if not (self.variance > 0.0 and np.isfinite(self.variance)):
            raise DegenerateModelError(
                f"expansion requires positive variance, got {self.variance}")
        if len(self.p_polys) != self.order or len(self.a_polys) != self.order:
            raise ConfigError(
                f"order-{self.order} model needs {self.order} correction "
                f"polynomials")
        self.p_polys = [np.asarray(p, dtype=float) for p in self.p_polys]
        self.a_polys = [np.asarray(a, dtype=float) for a in self.a_polys]
        for k, p in enumerate(self.p_polys, start=1):
            if p.size > 3 * k:
                raise ConfigError(
                    f"P_{k} must have degree <= {3 * k - 1}, got size {p.size}")


def _pressure_mean(jet: PressureJet, l: int) -> complex:
    """Mean ``l``-th pressure derivative over the departure fibers.

    A jet spanning fibers ``0..n`` (``fibers = n + 1``) describes an
    ``n``-step block exactly: the first ``n`` fibers are the departure
    fibers entering the eigenvalue product and the last is the arrival
    fiber carrying the boundary factor.  A single-fiber jet is a
    deterministic environment; any other width is its own window proxy.
    """
    rows = jet.pi_derivs[:-1] if jet.n_fibers > 1 else jet.pi_derivs
    return complex(rows[:, l].mean())


def _boundary_derivs(jet: PressureJet) -> np.ndarray:
    """``ln W`` jet at the arrival fiber (the jet's last window fiber)."""
    return jet.w_derivs[-1]


def _real_guard(values: np.ndarray, what: str) -> np.ndarray:
    worst = float(np.abs(values.imag).max(initial=0.0))
    if worst > 1e-6:
        raise DegenerateModelError(
            f"{what} has imaginary residue {worst:.3g} (> 1e-6); the jet "
            f"data is inconsistent with a real observable")
    return values.real.copy()


def build_expansion(jet: PressureJet, n: int, d: int) -> EdgeworthModel:
    """Assemble the order-``d`` expansion model for block length ``n``.

    The cumulant series ``psi`` (module docstring) is exponentiated as a
    truncated formal series; its grade-``k`` frequency polynomials ``A_k``
    are inverted monomial-by-monomial via :func:`monomial_cdf_image` into
    the correction polynomials ``P_k``.  Requires ``jet.order >= d + 2``
    (the grade-``d`` row consumes pressure derivatives up to order
    ``d + 2``) and a positive mean second pressure derivative.
    """
    if not 1 <= d <= _MAX_EXPANSION_ORDER:
        raise ConfigError(
            f"expansion order must lie in 1..{_MAX_EXPANSION_ORDER}, got {d}")
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    if jet.order < d + 2:
        raise ConfigError(
            f"order-{d} expansion needs a jet of order >= {d + 2}, got "
            f"{jet.order}")
    drift = abs(_pressure_mean(jet, 1))
    if drift > 1e-6:
        raise ConfigError(
            f"mean first pressure derivative is {drift:.3g}; center the "
            f"observable before expanding")
    variance = _pressure_mean(jet, 2)
    if abs(variance.imag) > 1e-8:
        raise DegenerateModelError(
            f"mean second pressure derivative has imaginary part "
            f"{variance.imag:.3g}")
    v = float(variance.real)
    if v <= 1e-12:
        raise DegenerateModelError(
            f"mean second pressure derivative is {v:.3g}; the observable "
            f"is degenerate (zero asymptotic variance)")

    w_jet = _boundary_derivs(jet)
    psi = FormalSeries.zero(d)
    for l in range(3, d + 3):
        psi = psi + FormalSeries.term(
            d, l - 2, l, _pressure_mean(jet, l) / math.factorial(l))
    for l in range(1, d + 1):
        psi = psi + FormalSeries.term(
            d, l, l, complex(w_jet[l]) / math.factorial(l))
    series = psi.exp()

    p_polys = []
    a_polys = []
    for k in range(1, d + 1):
        a_k = _real_guard(series.u_poly(k), f"grade-{k} frequency polynomial")
        if abs(a_k[0]) > 1e-9:
            raise DegenerateModelError(
                f"grade-{k} frequency polynomial has constant term "
                f"{a_k[0]:.3g}; the cumulant series is inconsistent")
        p_k = np.zeros(max(3 * k, 1))
        for j in range(1, a_k.size):
            if a_k[j] == 0.0:
                continue
            image = a_k[j] * monomial_cdf_image(j, v)
            p_k[:image.size] += image
        p_polys.append(p_k)
        a_polys.append(a_k)
    return EdgeworthModel(order=d, n=n, variance=v,
                          p_polys=p_polys, a_polys=a_polys)


def evaluate_expansion(model: EdgeworthModel, s) -> np.ndarray:
    """Evaluate the corrected CDF ``F_d`` at the points ``s``.

    Returns ``Phi(s/sqrt(v)) + sum_k n^(-k/2) P_k(s) phi_v(s)``; values are
    reported raw (tiny excursions outside ``[0, 1]`` are possible for any
    truncated expansion and are informative, not clipped).
    """
    s_arr = np.asarray(s, dtype=float)
    v = model.variance
    root = math.sqrt(v)
    values = ndtr(s_arr / root)
    density = np.exp(-s_arr ** 2 / (2.0 * v)) / math.sqrt(2.0 * math.pi * v)
    for k in range(1, model.order + 1):
        poly = npoly.polyval(s_arr, model.p_polys[k - 1])
        values = values + float(model.n) ** (-k / 2.0) * poly * density
    if np.ndim(s) == 0:
        return float(values)
    return values


# --------------------------------------------------------------------------
# CDF curves and the sup-distance
# --------------------------------------------------------------------------

@dataclass
class CdfCurve:
    """A distribution function sampled on an increasing grid."""

    s: np.ndarray
    values: np.ndarray
    info: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.s = np.asarray(self.s, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.s.ndim != 1 or self.s.size < 2:
            raise ConfigError("a CDF curve needs a 1-d grid of >= 2 points")
        if self.values.shape != self.s.shape:
            raise ConfigError(
                f"grid and values disagree: {self.s.shape} vs "
                f"{self.values.shape}")
        if np.any(np.diff(self.s) <= 0.0):
            raise ConfigError("the CDF grid must be strictly increasing")


def gaussian_curve(variance: float, s) -> CdfCurve:
    """The centered Gaussian CDF of the given variance on a grid."""
    if variance <= 0.0:
        raise ConfigError(f"variance must be positive, got {variance}")
    s_arr = np.asarray(s, dtype=float)
    return CdfCurve(s_arr, ndtr(s_arr / math.sqrt(variance)),
                    {"kind": "gaussian", "variance": float(variance)})


def expansion_curve(model: EdgeworthModel, s) -> CdfCurve:
    """The corrected CDF of an expansion model on a grid."""
    s_arr = np.asarray(s, dtype=float)
    return CdfCurve(s_arr, evaluate_expansion(model, s_arr),
                    {"kind": "edgeworth", "order": model.order,
                     "n": model.n, "variance": model.variance})


def _step_curve(s) -> CdfCurve:
    s_arr = np.asarray(s, dtype=float)
    values = (s_arr > 0.0).astype(float)
    values[s_arr == 0.0] = 0.5
    return CdfCurve(s_arr, values, {"kind": "step", "degenerate": True})


def kolmogorov_distance(f: CdfCurve, g: CdfCurve, *,
                        certified: bool = False) -> float:
    """Sup-distance between two CDF curves over their merged grids.

    With ``certified=False`` (default) the distance is the maximum absolute
    difference over the union of the two grids — exact whenever the grids
    are dense relative to the curves' variation (the mode every experiment
    here uses).  With ``certified=True`` the value is instead an upper
    bound valid for *monotone* curves: within each merged-grid gap the
    difference cannot exceed ``max(F(b) - G(a), G(b) - F(a))``, so the
    bound adds the grid-gap modulus to the node-wise sup.
    """
    merged = np.union1d(f.s, g.s)
    fv = np.interp(merged, f.s, f.values)
    gv = np.interp(merged, g.s, g.values)
    node_sup = float(np.abs(fv - gv).max())
    if not certified:
        return node_sup
    gap = max(float(np.max(fv[1:] - gv[:-1], initial=-np.inf)),
              float(np.max(gv[1:] - fv[:-1], initial=-np.inf)))
    return max(node_sup, gap)


# --------------------------------------------------------------------------
# characteristic-function oracle
# --------------------------------------------------------------------------

def _char_function(path: EnvPath, spec: OperatorSpec, n: int,
                   t_values: np.ndarray, depth, tol: float) -> np.ndarray:
    """``E[exp(i t S_n / sqrt(n))]`` on a grid of nonzero frequencies.

    One batched cocycle sweep at ``z = i t / sqrt(n)`` paired with the
    arrival-fiber Gibbs weights; the ``z = 0`` anchor rides along and must
    come back as 1.  Raises if any modulus exceeds ``1 + 1e-8`` (a
    normalized characteristic function cannot), which would indicate a
    broken operator pipeline rather than a model property.
    """
    t_values = np.asarray(t_values, dtype=float)
    zs = np.concatenate([[0.0 + 0.0j], 1j * t_values / math.sqrt(n)])
    engine = CocycleEngine(path, spec, zs)
    state = np.ones((engine.batch, spec.grid.n_points), dtype=complex)
    log_scale = np.zeros(engine.batch)
    sign = 1 if spec.variant == "transfer" else -1
    for step in range(1, n + 1):
        edge = step - 1 if sign == 1 else -step
        state = engine.apply_edge(edge, state)
        sup = np.abs(state).max(axis=1)
        _guard_scale(sup, state, "characteristic-function sweep")
        state /= sup[:, None]
        log_scale += np.log(sup)
    weights = _end_weights(path, spec, sign * n, depth, tol)
    f = (state @ weights.astype(complex)) * np.exp(log_scale)
    if abs(f[0] - 1.0) > 1e-7:
        raise ConfigError(
            f"characteristic function at t = 0 is {f[0]:.12g}, not 1; the "
            f"cocycle is not normalized")
    excess = float(np.abs(f).max()) - 1.0
    if excess > 1e-8:
        raise RpflabError(
            f"characteristic function modulus exceeds 1 by {excess:.3g}; "
            f"the operator pipeline lost normalization")
    return f[1:]


def _variance_from_cf(t_values: np.ndarray, f: np.ndarray) -> float:
    """Matched Gaussian variance from characteristic-function moduli.

    Uses the nodes where ``|f|`` lies in a well-conditioned band; returns
    0.0 when no node has decayed (a degenerate, lattice-free-of-variance
    observable).
    """
    mod = np.abs(f)
    usable = (mod > 0.05) & (mod < 0.999)
    if not np.any(usable):
        return 0.0
    t = t_values[usable]
    m = mod[usable]
    return float(np.median(-2.0 * np.log(m) / t ** 2))


def cdf_via_characteristic(path: EnvPath, spec: OperatorSpec, n: int,
                           t_max: float | None = None,
                           t_nodes: int | None = None, *,
                           s_grid=None, depth=None,
                           tol: float = 1e-10) -> CdfCurve:
    """High-accuracy CDF of ``S_n / sqrt(n)`` by Fourier inversion.

    The characteristic function ``f`` is computed on ``[0, t_max]`` by one
    batched operator sweep, a Gaussian of matched variance ``v`` is
    subtracted, and the difference is inverted in smoothed (difference)
    form: ``F(s) = Phi(s/sqrt(v)) + (1/pi) int_0^{t_max}
    Im[e^{-ist}(e^{-v t^2/2} - f(t))] / t dt``.  The Gaussian part is thus
    handled in closed form on the whole line — only the decaying difference
    is integrated, so the tail beyond ``t_max`` is Gaussian-damped.  The
    trapezoid rule on an oscillation-resolving grid is spectrally accurate
    here because the integrand's own frequency content (the s-range plus
    the support of the underlying density) stays far below the grid's
    Nyquist frequency.

    Window requirements: the transfer variant consumes ``n`` future symbols
    plus the arrival-fiber solve depth; the Markov variant consumes ``n``
    past symbols plus the solve depth.

    Degenerate observables (``f identically 1``) return the unit step at 0.
    """
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    if t_max is not None and t_max <= 0.0:
        raise ConfigError(f"t_max must be positive, got {t_max}")
    if t_nodes is not None and t_nodes < 9:
        raise ConfigError(f"need at least 9 frequency nodes, got {t_nodes}")

    # probe sweep: estimate the matched variance to size grids and gates
    probe_t = np.array([0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0])
    v_probe = _variance_from_cf(
        probe_t, _char_function(path, spec, n, probe_t, depth, tol))
    if v_probe == 0.0:
        grid = (np.linspace(-8.0, 8.0, 1201) if s_grid is None
                else np.asarray(s_grid, dtype=float))
        return _step_curve(grid)

    if t_max is None:
        t_max = 20.0 * max(math.sqrt(v_probe), 1.0 / math.sqrt(v_probe))
    if t_max < 20.0 * math.sqrt(v_probe) - 1e-9:
        raise ConfigError(
            f"t_max = {t_max:.3g} is below 20*sqrt(variance) = "
            f"{20.0 * math.sqrt(v_probe):.3g}; the Gaussian factor would "
            f"be truncated")
    if s_grid is None:
        s_lim = max(8.0 * math.sqrt(v_probe), 4.0)
        s_grid = np.linspace(-s_lim, s_lim, 1201)
    else:
        s_grid = np.asarray(s_grid, dtype=float)
    s_span = float(np.abs(s_grid).max())
    if t_nodes is None:
        t_nodes = int(math.ceil(t_max / 0.04)) + 1
        t_nodes = max(t_nodes, int(math.ceil(
            8.0 * s_span * t_max / (2.0 * math.pi))) + 1)
    h = t_max / (t_nodes - 1)
    if h > 2.0 * math.pi / (8.0 * max(s_span, 1e-9)):
        raise ConfigError(
            f"{t_nodes} nodes give spacing {h:.3g}, fewer than 8 nodes per "
            f"oscillation period at |s| = {s_span:.3g}; increase t_nodes")

    ts = np.linspace(0.0, t_max, t_nodes)
    f = np.empty(t_nodes, dtype=complex)
    f[0] = 1.0
    f[1:] = _char_function(path, spec, n, ts[1:], depth, tol)
    v = _variance_from_cf(ts[1:], f[1:])
    if v <= 0.0:
        v = v_probe

    gauss = np.exp(-v * ts ** 2 / 2.0)
    diff = gauss - f
    trap = np.full(t_nodes, h)
    trap[0] = trap[-1] = h / 2.0
    # integrand Im[e^{-ist} diff(t)] / t vanishes like t at 0
    kernel = np.zeros(t_nodes, dtype=complex)
    kernel[1:] = trap[1:] * diff[1:] / ts[1:]
    values = np.empty(s_grid.size)
    base = ndtr(s_grid / math.sqrt(v))
    for lo in range(0, s_grid.size, 256):
        hi = min(lo + 256, s_grid.size)
        phase = np.exp(-1j * np.outer(s_grid[lo:hi], ts))
        values[lo:hi] = (phase @ kernel).imag / math.pi
    values += base

    mod = np.abs(f)
    root_n = math.sqrt(n)
    delta0, big = 0.5, 2.0
    bands = (ts <= delta0 * root_n, (ts > delta0 * root_n) &
             (ts <= big * root_n), ts > big * root_n)
    integrals = []
    for mask in bands:
        masked = mask.copy()
        masked[0] = False
        integrals.append(float(np.sum(
            trap[masked] * mod[masked] / ts[masked])))
    info = {
        "kind": "characteristic-inversion", "n": n, "variance": v,
        "t_max": float(t_max), "t_nodes": int(t_nodes),
        "cf_excess": float(mod.max() - 1.0),
        "cf_tail": float(mod[-1]),
        "band_integrals": tuple(integrals),
        "monotonicity_defect": float(
            max(0.0, -float(np.diff(values).min()))),
        "range_defect": float(max(0.0, -values.min(), values.max() - 1.0)),
    }
    return CdfCurve(s_grid, values, info)


# --------------------------------------------------------------------------
# lattice refusal
# --------------------------------------------------------------------------

def reject_lattice_observable(path: EnvPath, spec: OperatorSpec, *,
                              frequencies=_LATTICE_PROBE,
                              lengths=_LATTICE_LENGTHS,
                              threshold: float = _LATTICE_THRESHOLD):
    """Refuse observables whose twisted cocycle shows no norm decay.

    For a non-lattice observable the twisted cocycle at every nonzero
    frequency contracts, so the probe-basis norm estimate decays along
    ``lengths``; a lattice (arithmetic) observable has resonant
    frequencies where the estimate stays at 1 forever and no continuous
    Edgeworth expansion exists.  Raises :class:`RefusalError` when some
    probe frequency never drops below ``threshold``; returns the estimate
    matrix ``(len(frequencies), len(lengths))`` otherwise.
    """
    freqs = [float(t) for t in frequencies]
    lens = sorted({int(m) for m in lengths})
    if not freqs or any(t == 0.0 for t in freqs):
        raise ConfigError("probe frequencies must be nonzero")
    if not lens or lens[0] < 1:
        raise ConfigError("probe lengths must be integers >= 1")
    estimates = norm_estimate(path, spec, lens, freqs)
    floor = estimates.min(axis=1)
    stuck = [f"t = {t:g} (floor {fl:.3g})"
             for t, fl in zip(freqs, floor) if fl > threshold]
    if stuck:
        raise RefusalError(
            "no twisted-norm decay up to n = {}: {}; the observable "
            "appears lattice (arithmetic), for which no continuous "
            "Edgeworth expansion exists — the experiment refuses rather "
            "than report meaningless slopes".format(
                lens[-1], "; ".join(stuck)))
    return estimates


# --------------------------------------------------------------------------
# per-length jets from one long window
# --------------------------------------------------------------------------

def _jets_for_lengths(path: EnvPath, spec: OperatorSpec, n_values,
                      order: int, radius: float, points: int, depth,
                      tol: float):
    """Exact block jets for every requested length from one window sweep.

    Runs the coupled window sweeps once over ``max(n) + 1`` fibers, keeping
    eigenvalues everywhere but boundary eigendata only at the arrival
    fibers actually requested; returns ``{n: PressureJet}`` where each jet
    spans fibers ``0..n`` (departure fibers plus the arrival fiber, the
    exact block decomposition used by :func:`build_expansion`).
    """
    n_values = sorted({int(n) for n in np.atleast_1d(n_values)})
    if not n_values or n_values[0] < 1:
        raise ConfigError("block lengths must be integers >= 1")
    if not 1 <= order <= 8:
        raise ConfigError(f"jet order must lie in 1..8, got {order}")
    if points < 4 * order:
        raise ConfigError(
            f"need at least 4*order = {4 * order} circle points, got "
            f"{points}")
    if not 0.0 < 2.0 * radius <= 0.2:
        raise ConfigError(
            f"two-radius extraction needs 0 < 2*radius <= 0.2, got {radius}")
    fibers = n_values[-1] + 1
    angles = 2.0 * np.pi * np.arange(points) / points
    circle = np.exp(1j * angles)
    zs = np.concatenate([[0.0], radius * circle, 2.0 * radius * circle])
    if depth is None:
        depth = max(
            _default_depth(path, spec, 2.0 * radius + 0j, tol, "row"),
            _default_depth(path, spec, 2.0 * radius + 0j, tol, "column"))
    lam, w = _window_lambda_w(path, spec, zs, fibers, int(depth), tol,
                              w_fibers=n_values)

    pi_all = np.empty((fibers, order + 1), dtype=complex)
    pi_errors = np.zeros(order + 1)
    for f in range(fibers):
        lam_p = _principal_logs(lam[f, 1:1 + points], "leading eigenvalue")
        lam_s = _principal_logs(lam[f, 1 + points:], "leading eigenvalue")
        d, e = _cauchy_derivatives(lam_p, lam_s, radius, 2.0 * radius, order)
        pi_all[f] = d
        pi_errors = np.maximum(pi_errors, e)

    jets = {}
    w_errors_all = np.zeros(order + 1)
    for i, n in enumerate(n_values):
        w_p = _principal_logs(w[i, 1:1 + points], "boundary pairing")
        w_s = _principal_logs(w[i, 1 + points:], "boundary pairing")
        d, e = _cauchy_derivatives(w_p, w_s, radius, 2.0 * radius, order)
        w_errors_all = np.maximum(w_errors_all, e)
        w_derivs = np.zeros((n + 1, order + 1), dtype=complex)
        w_derivs[n] = d
        jets[n] = PressureJet(radius=radius, points=points, order=order,
                              pi_derivs=pi_all[:n + 1].copy(),
                              w_derivs=w_derivs,
                              pi_errors=pi_errors.copy(),
                              w_errors=w_errors_all.copy())
    strict = slice(0, min(order, _STRICT_JET_ORDER) + 1)
    worst = max(pi_errors[strict].max(), w_errors_all[strict].max())
    if worst > _JET_AGREEMENT:
        raise ConvergenceError(
            f"two-radius jet extractions disagree by {worst:.3g} on orders "
            f"<= {_STRICT_JET_ORDER} (threshold {_JET_AGREEMENT:g}); deepen "
            f"the solve or adjust the radius")
    return jets


# --------------------------------------------------------------------------
# experiments
# --------------------------------------------------------------------------

@dataclass
class OrderImprovementReport:
    """Sup-distances to the oracle CDF for increasing expansion orders.

    ``distances[k]`` is the row for expansion order ``k`` (row 0 is the
    plain Gaussian with block variance); ``slopes``/``r_squared`` are the
    per-row log-log fits, ``slope_steps[k] = slopes[k+1] - slopes[k]``, and
    ``passes`` records whether every added order steepened the decay by at
    least ``0.5 - 0.15``.  ``band_integrals`` carries the per-``n``
    low/mid/high frequency-band contributions ``int |f(t)|/t dt`` of the
    oracle inversions (a failing band identifies itself).
    """

    n_values: np.ndarray
    orders: np.ndarray
    distances: np.ndarray
    slopes: np.ndarray
    intercepts: np.ndarray
    r_squared: np.ndarray
    slope_steps: np.ndarray
    passes: bool
    variances: np.ndarray
    band_integrals: np.ndarray
    lattice_floor: np.ndarray


def order_improvement_experiment(path: EnvPath, spec: OperatorSpec,
                                 n_values, d: int, *, s_points: int = 1201,
                                 t_max: float | None = None,
                                 t_nodes: int | None = None,
                                 radius: float = 0.05, points: int = 64,
                                 depth=None, tol: float = 1e-10,
                                 slope_step: float = 0.5,
                                 slope_tolerance: float = 0.15
                                 ) -> OrderImprovementReport:
    """Measure how each expansion order improves the CDF approximation.

    For every block length the oracle CDF (characteristic-function
    inversion) is compared against the plain Gaussian and the order-1..d
    expansions built from exact per-length jets; log-log slopes of the
    sup-distances quantify the gained decay order.  Lattice observables are
    refused up front (:func:`reject_lattice_observable`).

    Window requirements: the transfer variant needs ``max(n)`` future
    symbols plus the solve depth (both for the jets window and the oracle
    sweeps); the Markov variant needs the mirrored past window plus the
    solve depth ahead.
    """
    n_values = sorted({int(n) for n in np.atleast_1d(n_values)})
    if len(n_values) < 3:
        raise ConfigError("need at least 3 distinct block lengths")
    if not 1 <= d <= _MAX_EXPANSION_ORDER:
        raise ConfigError(
            f"expansion order must lie in 1..{_MAX_EXPANSION_ORDER}, got {d}")
    estimates = reject_lattice_observable(path, spec)
    jets = _jets_for_lengths(path, spec, n_values, d + 2, radius, points,
                             depth, tol)

    v_ref = build_expansion(jets[n_values[-1]], n_values[-1], d).variance
    s_lim = max(8.0 * math.sqrt(v_ref), 4.0)
    s_grid = np.linspace(-s_lim, s_lim, s_points)

    distances = np.empty((d + 1, len(n_values)))
    variances = np.empty(len(n_values))
    bands = np.empty((len(n_values), 3))
    for i, n in enumerate(n_values):
        oracle = cdf_via_characteristic(path, spec, n, t_max, t_nodes,
                                        s_grid=s_grid, depth=depth, tol=tol)
        bands[i] = oracle.info["band_integrals"]
        models = [build_expansion(jets[n], n, k) for k in range(1, d + 1)]
        variances[i] = models[0].variance
        distances[0, i] = kolmogorov_distance(
            oracle, gaussian_curve(models[0].variance, s_grid))
        for k, model in enumerate(models, start=1):
            distances[k, i] = kolmogorov_distance(
                oracle, expansion_curve(model, s_grid))

    n_arr = np.asarray(n_values, dtype=float)
    fits = [_fit_rate(n_arr, distances[k]) for k in range(d + 1)]
    slopes = np.array([f[0] for f in fits])
    intercepts = np.array([f[1] for f in fits])
    r_squared = np.array([f[2] for f in fits])
    steps = np.diff(slopes)
    passes = bool(np.all(np.isfinite(slopes)) and
                  np.all(steps <= -(slope_step - slope_tolerance)))
    return OrderImprovementReport(
        n_values=np.asarray(n_values), orders=np.arange(d + 1),
        distances=distances, slopes=slopes, intercepts=intercepts,
        r_squared=r_squared, slope_steps=steps, passes=passes,
        variances=variances, band_integrals=bands,
        lattice_floor=estimates.min(axis=1))


@dataclass
class CoefficientConvergenceReport:
    """Correction-polynomial coefficients tracked over anchored lengths.

    Row ``i`` of ``coefficients`` holds the ascending coefficients of
    ``P_k`` for the block of length ``n_values[i]`` ending at the origin
    fiber (anchored ``n`` steps back); ``deviations[i]`` is the sup
    difference from the longest block's coefficients, and
    ``envelope_slope`` fits ``log(deviation)`` against ``log(n)`` over the
    non-final lengths.  For ``k = 1``, ``jet_s2_reference`` carries the
    closed-form ``s^2`` coefficient ``-pibar_3 / (6 v^2)`` per length.
    """

    k: int
    n_values: np.ndarray
    coefficients: np.ndarray
    deviations: np.ndarray
    envelope_slope: float
    envelope_intercept: float
    envelope_r_squared: float
    jet_s2_reference: np.ndarray | None


def coefficient_convergence_experiment(path: EnvPath, spec: OperatorSpec,
                                       n_values, k: int = 1, *,
                                       d: int | None = None,
                                       radius: float = 0.05,
                                       points: int = 64, depth=None,
                                       tol: float = 1e-10
                                       ) -> CoefficientConvergenceReport:
    """Track the order-``k`` correction coefficients of anchored blocks.

    The block of length ``n`` anchored ``n`` steps in the past (so that
    every block ends at the origin fiber) has its own expansion; in a
    random environment its coefficients converge as the anchor recedes,
    with an ``n^(-1/2)``-order fluctuation envelope for i.i.d. drivers,
    while a deterministic environment is constant beyond the solver
    transient.  Window requirements: the path must extend ``max(n)`` steps
    into the past plus the window margin of :func:`_jets_for_lengths`.
    """
    n_values = sorted({int(n) for n in np.atleast_1d(n_values)})
    if len(n_values) < 2:
        raise ConfigError("need at least 2 distinct block lengths")
    if k < 1:
        raise ConfigError(f"coefficient order must be >= 1, got {k}")
    d_eff = k if d is None else int(d)
    if not k <= d_eff <= _MAX_EXPANSION_ORDER:
        raise ConfigError(
            f"need k <= d <= {_MAX_EXPANSION_ORDER}, got k = {k}, "
            f"d = {d_eff}")

    rows = np.zeros((len(n_values), 3 * k))
    s2_ref = np.zeros(len(n_values)) if k == 1 else None
    for i, n in enumerate(n_values):
        anchored = path.shift(-n)
        jets = _jets_for_lengths(anchored, spec, [n], d_eff + 2, radius,
                                 points, depth, tol)
        model = build_expansion(jets[n], n, d_eff)
        p = model.p_polys[k - 1]
        rows[i, :p.size] = p
        if s2_ref is not None:
            pibar3 = _pressure_mean(jets[n], 3).real
            s2_ref[i] = -pibar3 / (6.0 * model.variance ** 2)

    ref = rows[-1]
    deviations = np.abs(rows[:-1] - ref).max(axis=1)
    slope, intercept, r2 = _fit_rate(
        np.asarray(n_values[:-1], dtype=float), deviations)
    return CoefficientConvergenceReport(
        k=k, n_values=np.asarray(n_values), coefficients=rows,
        deviations=deviations, envelope_slope=slope,
        envelope_intercept=intercept, envelope_r_squared=r2,
        jet_s2_reference=s2_ref)


@dataclass
class CltRateReport:
    """Sup-distance to a fixed-variance Gaussian over block lengths.

    The Gaussian keeps the *limit* variance for every ``n`` (unlike the
    per-block variance used elsewhere), so the distance also absorbs the
    variance fluctuation of finite blocks; ``envelope_constants`` reports
    ``distance / (n^(-1/2) (1 + ln n))`` per length (bounded when the
    almost-optimal rate holds).
    """

    n_values: np.ndarray
    distances: np.ndarray
    sigma2: float
    slope: float
    intercept: float
    r_squared: float
    envelope_constants: np.ndarray


def clt_rate_experiment(path: EnvPath, spec: OperatorSpec, n_values, *,
                        sigma2: float | None = None, s_points: int = 1201,
                        t_max: float | None = None,
                        t_nodes: int | None = None, radius: float = 0.05,
                        points: int = 64, depth=None,
                        tol: float = 1e-10) -> CltRateReport:
    """Berry–Esseen-style rate of the CLT against a fixed-σ² Gaussian.

    When ``sigma2`` is not given it is taken from the longest block's mean
    second pressure derivative (the best single-window proxy for the limit
    variance; exact for deterministic environments).  A degenerate
    observable (zero variance) is rejected.
    """
    n_values = sorted({int(n) for n in np.atleast_1d(n_values)})
    if len(n_values) < 3:
        raise ConfigError("need at least 3 distinct block lengths")
    n_max = n_values[-1]
    if sigma2 is None:
        jets = _jets_for_lengths(path, spec, [n_max], 2, radius, points,
                                 depth, tol)
        sigma2 = float(_pressure_mean(jets[n_max], 2).real)
    if sigma2 <= 1e-10:
        raise DegenerateModelError(
            f"asymptotic variance {sigma2:.3g} is not positive; the "
            f"observable is degenerate and has no CLT rate")

    s_lim = max(8.0 * math.sqrt(sigma2), 4.0)
    s_grid = np.linspace(-s_lim, s_lim, s_points)
    gauss = gaussian_curve(sigma2, s_grid)
    distances = np.empty(len(n_values))
    for i, n in enumerate(n_values):
        oracle = cdf_via_characteristic(path, spec, n, t_max, t_nodes,
                                        s_grid=s_grid, depth=depth, tol=tol)
        distances[i] = kolmogorov_distance(oracle, gauss)

    n_arr = np.asarray(n_values, dtype=float)
    slope, intercept, r2 = _fit_rate(n_arr, distances)
    envelope = distances / (n_arr ** -0.5 * (1.0 + np.log(n_arr)))
    return CltRateReport(n_values=np.asarray(n_values), distances=distances,
                         sigma2=float(sigma2), slope=slope,
                         intercept=intercept, r_squared=r2,
                         envelope_constants=envelope)


# --------------------------------------------------------------------------
# CSV output
# --------------------------------------------------------------------------

def write_cdf_csv(curves, file_path: str) -> None:
    """Write named CDF curves sharing one grid as CSV.

    ``curves`` is a sequence of ``(name, CdfCurve)`` pairs; the header is
    ``s,<name1>,<name2>,...`` and values are written with 17 significant
    digits so equal inputs produce byte-identical files.
    """
    curves = list(curves)
    if not curves:
        raise ConfigError("need at least one curve to write")
    base = curves[0][1].s
    for name, curve in curves[1:]:
        if curve.s.shape != base.shape or np.any(curve.s != base):
            raise ConfigError(
                f"curve {name!r} is not on the shared grid; resample the "
                f"curves onto one grid before writing")
    names = [str(name) for name, _ in curves]
    with open(file_path, "w", encoding="ascii") as handle:
        handle.write("s," + ",".join(names) + "\n")
        for i in range(base.size):
            row = [f"{base[i]:.17g}"]
            row += [f"{curve.values[i]:.17g}" for _, curve in curves]
            handle.write(",".join(row) + "\n")
