"""Weighted transfer and Markov operator cocycles on grid-discretized fields.

Two operator families are discretized here, both acting on functions of the
circle and both driven by an environment path:

* **Transfer variant** — for an expanding map ``T_s`` with potential
  ``phi_s`` and observable ``u_s``, the weighted transfer operator

      ``(L_z g)(x) = sum_{T_s y = x} exp(phi_s(y) + z u_s(y)) g(y)``.

  On a uniform ``N``-point circle grid the ``m`` preimages of the grid under
  ``x -> m x mod 1`` are exactly the ``m N``-point fine grid, so one apply is
  "upsample, weight, fold": interpolate ``g`` onto the fine grid, multiply
  by the branch weights, and sum the ``m`` preimage blocks.  Smooth fields
  use exact trigonometric (FFT zero-padding) interpolation; rough fields
  fall back to periodic piecewise-linear interpolation.

* **Markov variant** — an integral operator with a two-sided positive
  (Doeblin) kernel,

      ``(R_z g)(x) = int r_s(x, y) exp(z u_{s'}(y)) g(y) dy``,

  discretized by Gauss--Legendre quadrature (needed because the factor
  ``e^{z u(y)}`` is not periodic in general and must be integrated to high
  accuracy for strongly oscillatory ``z``).

Composition direction differs between the variants: transfer cocycles
compose toward the future of the path, Markov cocycles toward the past
(their natural base map is the inverse shift).  :class:`Chain` hides the
difference behind a direction-free "linear chain of fibers" view, which is
what the eigendata sweeps build on.  Scaled application
(:func:`cocycle_apply`) removes a scalar factor per step and accumulates
its logarithm, so iterates never overflow.
"""

from __future__ import annotations

import numpy as np
from scipy import special

from .dynamics import MapFamily, ObservablePair, TrigPoly
from .env import EnvPath
from .errors import ConfigError, DegenerateModelError

__all__ = [
    "CircleGrid",
    "GaussGrid",
    "FiberField",
    "KernelFamily",
    "OperatorSpec",
    "CocycleEngine",
    "Chain",
    "transfer_apply",
    "markov_apply",
    "cocycle_apply",
    "normalize_operator",
    "norm_estimate",
    "dense_matrix",
    "dump_matrix_csv",
]

_RULES = ("trig", "linear")


# --------------------------------------------------------------------------
# grids
# --------------------------------------------------------------------------

class CircleGrid:
    """Uniform collocation grid ``x_i = i / N`` on the circle.

    ``rule`` selects how fields are interpolated between nodes when the
    operator needs off-grid values: ``"trig"`` (exact for trigonometric
    polynomials of frequency < N/2, spectrally accurate for smooth fields)
    or ``"linear"`` (periodic piecewise-linear, first order but safe for
    rough fields such as step observables).
    """

    kind = "circle"

    def __init__(self, n_points: int, rule: str = "trig") -> None:
        n = int(n_points)
        if n < 4 or (n & (n - 1)) != 0:
            raise ConfigError(f"circle grid size must be a power of two >= 4, got {n_points}")
        if rule not in _RULES:
            raise ConfigError(f"rule must be one of {_RULES}, got {rule!r}")
        self.n_points = n
        self.rule = rule
        self.nodes = np.arange(n) / n
        self.quad_weights = np.full(n, 1.0 / n)

    def refine(self) -> "CircleGrid":
        """Grid with doubled resolution and the same rule."""
        return CircleGrid(2 * self.n_points, self.rule)

    def matches(self, other) -> bool:
        return (isinstance(other, CircleGrid) and other.n_points == self.n_points
                and other.rule == self.rule)

    def __repr__(self) -> str:  # pragma: no cover - cosmetic
        return f"CircleGrid(n_points={self.n_points}, rule={self.rule!r})"


class GaussGrid:
    """Gauss--Legendre quadrature nodes and weights mapped to [0, 1]."""

    kind = "gauss"
    rule = "gauss"

    def __init__(self, n_points: int) -> None:
        n = int(n_points)
        if n < 2:
            raise ConfigError(f"quadrature size must be >= 2, got {n_points}")
        x, w = np.polynomial.legendre.leggauss(n)
        self.n_points = n
        self.nodes = 0.5 * (x + 1.0)
        self.quad_weights = 0.5 * w

    def refine(self) -> "GaussGrid":
        return GaussGrid(2 * self.n_points)

    def matches(self, other) -> bool:
        return isinstance(other, GaussGrid) and other.n_points == self.n_points

    def __repr__(self) -> str:  # pragma: no cover - cosmetic
        return f"GaussGrid(n_points={self.n_points})"


# --------------------------------------------------------------------------
# fields
# --------------------------------------------------------------------------

class FiberField:
    """Complex samples of a function on one fiber's grid.

    Carries the grid it was sampled on; operators check grid compatibility.
    ``info`` is a free-form diagnostics dict (solver convergence histories
    and the like) that never affects numerics.
    """

    def __init__(self, grid, values, info: dict | None = None) -> None:
        values = np.asarray(values, dtype=complex)
        if values.shape != (grid.n_points,):
            raise ConfigError(
                f"field shape {values.shape} does not match grid ({grid.n_points},)")
        self.grid = grid
        self.values = values
        self.info = info if info is not None else {}

    @classmethod
    def ones(cls, grid) -> "FiberField":
        return cls(grid, np.ones(grid.n_points, dtype=complex))

    @classmethod
    def from_function(cls, grid, fn) -> "FiberField":
        return cls(grid, np.asarray(fn(grid.nodes), dtype=complex))

    def sup_norm(self) -> float:
        return float(np.abs(self.values).max())

    def holder_seminorm(self, alpha: float = 1.0, xi: float = 1.0) -> float:
        """Grid estimate of ``sup_{0 < d(x,y) < xi} |g(x) - g(y)| / d(x,y)^alpha``.

        A lower bound for the true seminorm (only grid pairs are examined);
        used for diagnostics, never for correctness decisions.  Uses
        circle distance on circle grids, plain distance on quadrature grids.
        """
        values = self.values
        nodes = self.grid.nodes
        n = self.grid.n_points
        best = 0.0
        circular = isinstance(self.grid, CircleGrid)
        for offset in range(1, n):
            if circular:
                dist = min(offset / n, 1.0 - offset / n)
                if dist <= 0.0 or dist >= xi:
                    continue
                diff = float(np.abs(np.roll(values, -offset) - values).max())
                best = max(best, diff / dist ** alpha)
            else:
                dists = nodes[offset:] - nodes[:-offset]
                diffs = np.abs(values[offset:] - values[:-offset])
                mask = (dists > 0.0) & (dists < xi)
                if mask.any():
                    best = max(best, float((diffs[mask] / dists[mask] ** alpha).max()))
        return best

    def norm(self, alpha: float = 1.0, xi: float = 1.0) -> float:
        """Diagnostic norm ``sup + seminorm`` (equals 1 on the constant 1)."""
        return self.sup_norm() + self.holder_seminorm(alpha, xi)

    def __repr__(self) -> str:  # pragma: no cover - cosmetic
        return f"FiberField(grid={self.grid!r}, sup={self.sup_norm():.6g})"


# --------------------------------------------------------------------------
# kernels
# --------------------------------------------------------------------------

class KernelFamily:
    """Per-symbol positive integral kernels on the circle with Doeblin bounds.

    Supported kernel kinds (one per symbol):

    * ``("flat",)`` — ``r(x, y) = 1`` (rank-one: one step forgets the state);
    * ``("vonmises", kappa, shift)`` — ``r(x, y) =
      exp(kappa cos(2 pi (y - x - shift))) / I0(kappa)``, a smooth positive
      circulant kernel; rows and columns integrate to 1, so the invariant
      density is Lebesgue.

    Parameters
    ----------
    kinds : sequence of tuple
        One kind tuple per symbol.
    doeblin_alpha : float
        Claimed two-sided bound ``alpha <= r <= 1/alpha``; verified on the
        quadrature grid at construction (violations are configuration
        errors).
    quad_size : int
        Number of Gauss--Legendre quadrature nodes.
    """

    def __init__(self, kinds, doeblin_alpha: float, quad_size: int = 64) -> None:
        self.kinds = tuple(tuple(k) for k in kinds)
        if len(self.kinds) < 1:
            raise ConfigError("need at least one kernel")
        if not (0.0 < doeblin_alpha <= 1.0):
            raise ConfigError(f"doeblin_alpha must lie in (0, 1], got {doeblin_alpha}")
        self.doeblin_alpha = float(doeblin_alpha)
        self.grid = GaussGrid(quad_size)
        self._matrices: dict[int, np.ndarray] = {}
        for s, kind in enumerate(self.kinds):
            if kind[0] not in ("flat", "vonmises"):
                raise ConfigError(f"unknown kernel kind {kind[0]!r}")
            values = self._raw_kernel(s)
            lo, hi = values.min(), values.max()
            if lo < self.doeblin_alpha - 1e-12 or hi > 1.0 / self.doeblin_alpha + 1e-12:
                raise ConfigError(
                    f"kernel {s} violates the Doeblin bound: range [{lo:.6g}, {hi:.6g}] "
                    f"outside [{self.doeblin_alpha:.6g}, {1.0 / self.doeblin_alpha:.6g}]")

    @property
    def alphabet_size(self) -> int:
        return len(self.kinds)

    def _raw_kernel(self, symbol: int) -> np.ndarray:
        """Kernel values r(x_i, y_j) on the quadrature grid."""
        kind = self.kinds[symbol]
        x = self.grid.nodes[:, None]
        y = self.grid.nodes[None, :]
        if kind[0] == "flat":
            return np.ones((self.grid.n_points, self.grid.n_points))
        _, kappa, shift = kind[0], float(kind[1]), float(kind[2])
        return np.exp(kappa * np.cos(2 * np.pi * (y - x - shift))) / special.i0(kappa)

    def matrix(self, symbol: int) -> np.ndarray:
        """Discretized z=0 operator: quadrature-weighted, row-normalized.

        ``K[i, j] = r(x_i, y_j) w_j / rowsum_i`` so that ``K @ 1 = 1``
        exactly; the row normalization only absorbs quadrature error of
        size ~1e-15 for the smooth kernels used here.
        """
        if symbol not in self._matrices:
            k = self._raw_kernel(symbol) * self.grid.quad_weights[None, :]
            k /= k.sum(axis=1, keepdims=True)
            self._matrices[symbol] = k
        return self._matrices[symbol]

    def __repr__(self) -> str:  # pragma: no cover - cosmetic
        return (f"KernelFamily(kinds={self.kinds}, alpha={self.doeblin_alpha}, "
                f"quad={self.grid.n_points})")


# --------------------------------------------------------------------------
# operator specification
# --------------------------------------------------------------------------

class OperatorSpec:
    """A weighted operator cocycle: variant, parameter ``z``, grid choices.

    Use the constructors :meth:`transfer` or :meth:`markov`.  The spectral
    parameter ``z`` multiplies the observable in the exponential weight;
    :meth:`with_z` rebinds it cheaply (caches that depend only on geometry
    are carried by engines, not by the spec).

    The two variants compose in opposite directions along a path (the
    Markov variant's natural base map is the inverse shift); ``direction``
    exposes this, and :class:`Chain` consumes it.
    """

    def __init__(self, variant: str, z: complex, family: MapFamily | None,
                 field: ObservablePair | None, kernels: KernelFamily | None,
                 grid) -> None:
        self.variant = variant
        self.z = complex(z)
        self.family = family
        self.field = field
        self.kernels = kernels
        self.grid = grid

    @classmethod
    def transfer(cls, family: MapFamily, field: ObservablePair, z: complex = 0.0,
                 grid_size: int = 256, rule: str = "trig") -> "OperatorSpec":
        if family.alphabet_size != field.alphabet_size:
            raise ConfigError("map family and observables disagree on alphabet size")
        if rule == "trig":
            for s, obs in enumerate(field.u):
                if not isinstance(obs, TrigPoly):
                    raise ConfigError(
                        f"observable {s} is not a trigonometric polynomial; "
                        f"trigonometric interpolation would alias it — use "
                        f"rule='linear'")
        grid = CircleGrid(grid_size, rule)
        return cls("transfer", z, family, field, None, grid)

    @classmethod
    def markov(cls, kernels: KernelFamily, field: ObservablePair,
               z: complex = 0.0) -> "OperatorSpec":
        if kernels.alphabet_size != field.alphabet_size:
            raise ConfigError("kernel family and observables disagree on alphabet size")
        return cls("markov", z, None, field, kernels, kernels.grid)

    @property
    def direction(self) -> str:
        """Path direction the cocycle composes toward: forward or backward."""
        return "forward" if self.variant == "transfer" else "backward"

    def with_z(self, z: complex) -> "OperatorSpec":
        return OperatorSpec(self.variant, z, self.family, self.field,
                            self.kernels, self.grid)

    def __repr__(self) -> str:  # pragma: no cover - cosmetic
        return f"OperatorSpec(variant={self.variant!r}, z={self.z}, grid={self.grid!r})"


# --------------------------------------------------------------------------
# batched engine
# --------------------------------------------------------------------------

def _trig_upsample(values: np.ndarray, factor: int) -> np.ndarray:
    """Exact trigonometric interpolation onto a ``factor`` times finer grid.

    Zero-pads the discrete Fourier transform; the Nyquist coefficient is
    split evenly between ``+N/2`` and ``-N/2`` to keep real data real.
    Operates on the last axis.
    """
    n = values.shape[-1]
    m = n * factor
    spectrum = np.fft.fft(values, axis=-1)
    padded = np.zeros(values.shape[:-1] + (m,), dtype=complex)
    half = n // 2
    padded[..., :half] = spectrum[..., :half]
    padded[..., m - half + 1:] = spectrum[..., half + 1:]
    padded[..., half] = 0.5 * spectrum[..., half]
    padded[..., m - half] = 0.5 * spectrum[..., half]
    return np.fft.ifft(padded, axis=-1) * factor


def _trig_upsample_transpose(values: np.ndarray, factor: int) -> np.ndarray:
    """Transpose (plain bilinear, no conjugation) of :func:`_trig_upsample`.

    Folds the fine spectrum back onto the coarse frequencies, splitting the
    Nyquist bucket symmetrically — the exact transpose of the zero-padding.
    Operates on the last axis, mapping length ``N * factor`` to ``N``.
    """
    m = values.shape[-1]
    n = m // factor
    half = n // 2
    spectrum = np.fft.ifft(values, axis=-1)
    folded = np.zeros(values.shape[:-1] + (n,), dtype=complex)
    folded[..., :half] = spectrum[..., :half]
    folded[..., half + 1:] = spectrum[..., m - half + 1: m]
    folded[..., half] = 0.5 * (spectrum[..., half] + spectrum[..., m - half])
    return np.fft.fft(folded, axis=-1) * factor


def _linear_upsample_matrix(n: int, factor: int) -> np.ndarray:
    """Dense periodic piecewise-linear interpolation matrix, (n*factor, n)."""
    m = n * factor
    mat = np.zeros((m, n))
    pos = np.arange(m) * n / m
    j0 = np.floor(pos).astype(int) % n
    frac = pos - np.floor(pos)
    rows = np.arange(m)
    np.add.at(mat, (rows, j0), 1.0 - frac)
    np.add.at(mat, (rows, (j0 + 1) % n), frac)
    return mat


class CocycleEngine:
    """Batched step-operator machine for one (path, spec, z-batch) context.

    Holds per-symbol caches (fine-grid observable samples, branch weights,
    kernel matrices) for a whole batch of ``z`` values and exposes the
    single-step apply and its transpose.  Step indexing is by *path edge*:

    * transfer variant: edge ``p`` maps fiber ``p`` to fiber ``p + 1`` using
      map and weight symbol ``omega_p``;
    * Markov variant: edge ``p`` maps fiber ``p + 1`` to fiber ``p`` using
      kernel symbol ``omega_p`` and weight symbol ``omega_{p+1}`` (the
      weight sits on the operator's domain fiber).

    All field batches have shape ``(B, n_points)`` with ``B = len(z_values)``.
    """

    def __init__(self, path: EnvPath, spec: OperatorSpec, z_values) -> None:
        self.path = path
        self.spec = spec
        self.z = np.atleast_1d(np.asarray(z_values, dtype=complex))
        if self.z.ndim != 1:
            raise ConfigError("z_values must be a scalar or 1-d array")
        self.grid = spec.grid
        self.batch = self.z.size
        self._weights: dict[int, np.ndarray] = {}
        self._lin_up: dict[int, np.ndarray] = {}
        self._exp_u: dict[int, np.ndarray] = {}

    # -- caches ------------------------------------------------------------

    def _transfer_weights(self, symbol: int) -> np.ndarray:
        """Branch weights exp(phi + z u) on the fine grid, shape (B, m*N)."""
        if symbol not in self._weights:
            family, field = self.spec.family, self.spec.field
            m = family.slope(symbol)
            fine = np.arange(m * self.grid.n_points) / (m * self.grid.n_points)
            phi = field.phi_values(family, symbol, fine)
            u = np.asarray(field.u_values(symbol, fine), dtype=float)
            self._weights[symbol] = np.exp(phi[None, :] + self.z[:, None] * u[None, :])
        return self._weights[symbol]

    def _linear_matrix(self, factor: int) -> np.ndarray:
        if factor not in self._lin_up:
            self._lin_up[factor] = _linear_upsample_matrix(self.grid.n_points, factor)
        return self._lin_up[factor]

    def _markov_exp(self, symbol: int) -> np.ndarray:
        """Weight exp(z u_s(y)) on quadrature nodes, shape (B, M)."""
        if symbol not in self._exp_u:
            u = np.asarray(self.spec.field.u_values(symbol, self.grid.nodes), dtype=float)
            self._exp_u[symbol] = np.exp(self.z[:, None] * u[None, :])
        return self._exp_u[symbol]

    # -- single steps --------------------------------------------------------

    def apply_edge(self, edge: int, batch: np.ndarray) -> np.ndarray:
        """Apply the step operator of path edge ``edge`` to a (B, N) batch."""
        if self.spec.variant == "transfer":
            symbol = self.path.symbol(edge)
            m = self.spec.family.slope(symbol)
            if self.grid.rule == "trig":
                fine = _trig_upsample(batch, m)
            else:
                fine = batch @ self._linear_matrix(m).T
            weighted = self._transfer_weights(symbol) * fine
            return weighted.reshape(self.batch, m, self.grid.n_points).sum(axis=1)
        kernel_sym = self.path.symbol(edge)
        u_sym = self.path.symbol(edge + 1)
        k = self.spec.kernels.matrix(kernel_sym)
        return (self._markov_exp(u_sym) * batch) @ k.T

    def apply_edge_T(self, edge: int, batch: np.ndarray) -> np.ndarray:
        """Transpose step (row-vector action), same edge convention."""
        if self.spec.variant == "transfer":
            symbol = self.path.symbol(edge)
            m = self.spec.family.slope(symbol)
            tiled = np.tile(batch, (1, m))
            weighted = self._transfer_weights(symbol) * tiled
            if self.grid.rule == "trig":
                return _trig_upsample_transpose(weighted, m)
            return weighted @ self._linear_matrix(m)
        kernel_sym = self.path.symbol(edge)
        u_sym = self.path.symbol(edge + 1)
        k = self.spec.kernels.matrix(kernel_sym)
        return (batch @ k) * self._markov_exp(u_sym)

    def dense_edge_matrix(self, edge: int) -> np.ndarray:
        """Dense matrices of the edge step, shape (B, N, N) — oracle mode."""
        n = self.grid.n_points
        out = np.empty((self.batch, n, n), dtype=complex)
        eye = np.eye(n, dtype=complex)
        for j in range(n):
            basis = np.broadcast_to(eye[j], (self.batch, n)).copy()
            out[:, :, j] = self.apply_edge(edge, basis)
        return out


class Chain:
    """Direction-free view of ``n`` cocycle steps ending at an anchor fiber.

    Positions ``c = 0 .. n`` index fibers along the composition order of the
    normalized-cocycle limit theory: position ``n`` is the anchor (where
    eigendata is wanted), position 0 is the far starting fiber.  For the
    transfer variant positions run up the path toward the anchor; for the
    Markov variant they run down it.  ``apply(c, ...)`` maps position ``c``
    to ``c + 1``; ``apply_T`` is its transpose.
    """

    def __init__(self, engine: CocycleEngine, end_fiber: int, n: int) -> None:
        if n < 0:
            raise ConfigError(f"chain length must be >= 0, got {n}")
        self.engine = engine
        self.end_fiber = int(end_fiber)
        self.n = int(n)
        # Check the extreme touched path indices up front (fail fast).
        if n > 0:
            path = engine.path
            if engine.spec.variant == "transfer":
                path._check(self.end_fiber - self.n)
                path._check(self.end_fiber - 1)
            else:
                path._check(self.end_fiber)
                path._check(self.end_fiber + self.n)

    def path_index(self, c: int) -> int:
        """Path index of the fiber at chain position ``c``."""
        if self.engine.spec.variant == "transfer":
            return self.end_fiber - self.n + c
        return self.end_fiber + self.n - c

    def _edge(self, c: int) -> int:
        """Path edge index of the step from position ``c`` to ``c + 1``."""
        if self.engine.spec.variant == "transfer":
            return self.path_index(c)
        return self.path_index(c + 1)

    def apply(self, c: int, batch: np.ndarray) -> np.ndarray:
        if not (0 <= c < self.n):
            raise ConfigError(f"chain step {c} outside [0, {self.n})")
        return self.engine.apply_edge(self._edge(c), batch)

    def apply_T(self, c: int, batch: np.ndarray) -> np.ndarray:
        if not (0 <= c < self.n):
            raise ConfigError(f"chain step {c} outside [0, {self.n})")
        return self.engine.apply_edge_T(self._edge(c), batch)


# --------------------------------------------------------------------------
# public single-operator API
# --------------------------------------------------------------------------

def _require_circle(spec: OperatorSpec) -> None:
    if spec.variant != "transfer":
        raise ConfigError("this operation applies to the transfer variant")


def transfer_apply(spec: OperatorSpec, symbol: int, g: FiberField) -> FiberField:
    """One application of the weighted transfer operator of ``symbol``.

    Evaluates the branch sum at every grid node, interpolating ``g`` at the
    preimages with the grid's rule.
    """
    _require_circle(spec)
    if not spec.grid.matches(g.grid):
        raise ConfigError("field grid does not match the operator grid")
    engine = CocycleEngine(_single_symbol_path(symbol), spec, spec.z)
    out = engine.apply_edge(0, g.values[None, :])
    return FiberField(spec.grid, out[0])


def markov_apply(spec: OperatorSpec, symbol: int, g: FiberField,
                 weight_symbol: int | None = None) -> FiberField:
    """One application of the Markov integral operator of ``symbol``.

    ``weight_symbol`` selects the observable in the weight ``e^{z u}``
    (defaults to ``symbol``); in cocycle composition the weight symbol is
    the one of the domain fiber, one step ahead of the kernel's.
    """
    if spec.variant != "markov":
        raise ConfigError("markov_apply requires the markov variant")
    if not spec.grid.matches(g.grid):
        raise ConfigError("field grid does not match the operator grid")
    w_sym = symbol if weight_symbol is None else weight_symbol
    k = spec.kernels.matrix(symbol)
    u = np.asarray(spec.field.u_values(w_sym, spec.grid.nodes), dtype=float)
    out = k @ (np.exp(spec.z * u) * g.values)
    return FiberField(spec.grid, out)


def _single_symbol_path(symbol: int) -> EnvPath:
    """A tiny constant path exposing one symbol on edges around the origin."""
    from .env import EnvModel
    model = EnvModel(symbol + 1)
    symbols = np.full(3, symbol, dtype=np.int64)
    return EnvPath(model, seed=0, n_past=1, n_future=1, symbols=symbols, origin=1)


def cocycle_apply(path: EnvPath, spec: OperatorSpec, n: int,
                  g: FiberField) -> tuple[FiberField, complex]:
    """Apply ``n`` cocycle steps starting at the path origin, overflow-free.

    The iterate is rescaled to unit sup-norm after every step and the
    logarithms of the removed factors accumulate, so the true iterate is
    ``exp(log_scale) * field`` for any ``n``.  Transfer cocycles consume
    symbols ``omega_0 .. omega_{n-1}``; Markov cocycles consume
    ``omega_{-n} .. omega_0`` (they compose toward the path's past).

    Returns
    -------
    (FiberField, complex)
        The unit-sup field and the accumulated ``log_scale``.

    Raises
    ------
    DegenerateModelError
        If the iterate vanishes identically at some step (z outside the
        positivity/analyticity regime).
    """
    if not spec.grid.matches(g.grid):
        raise ConfigError("field grid does not match the operator grid")
    engine = CocycleEngine(path, spec, spec.z)
    values = g.values[None, :].astype(complex)
    log_scale = 0.0 + 0.0j

    sup = float(np.abs(values).max())
    if sup == 0.0:
        raise DegenerateModelError("initial field is identically zero")
    values = values / sup
    log_scale += np.log(sup)

    for step in range(n):
        edge = step if spec.variant == "transfer" else -step - 1
        values = engine.apply_edge(edge, values)
        sup = float(np.abs(values).max())
        if sup == 0.0 or not np.isfinite(sup):
            raise DegenerateModelError(
                f"cocycle iterate degenerated at step {step + 1} (sup={sup})")
        values = values / sup
        log_scale += np.log(sup)

    return FiberField(spec.grid, values[0]), log_scale


def normalize_operator(spec: OperatorSpec, gibbs=None) -> OperatorSpec:
    """Conjugate the operator so that it fixes the constant 1 at ``z = 0``.

    Handles the two closed-form situations exactly:

    * the operator already fixes 1 (returned unchanged), and
    * the z=0 operator maps 1 to a constant ``c_s`` per symbol (constant
      Jacobian / doubly stochastic kernels) — then 1 is an eigenfunction and
      subtracting ``ln c_s`` from the potential normalizes exactly.

    Genuinely fiber-dependent normalization (non-constant leading
    eigenfunction) would require eigendata along a whole path and is not
    representable as a single static spec; such configurations raise.
    """
    tol = 1e-10
    if spec.variant == "markov":
        one = np.ones(spec.grid.n_points)
        for s in range(spec.kernels.alphabet_size):
            out = spec.kernels.matrix(s) @ one
            if np.abs(out - 1.0).max() > tol:
                raise DegenerateModelError(
                    f"kernel {s} does not fix constants after row normalization")
        return spec

    family, field = spec.family, spec.field
    shifts = []
    any_shift = False
    for s in range(family.alphabet_size):
        m = family.slope(s)
        fine = np.arange(m * spec.grid.n_points) / (m * spec.grid.n_points)
        weights = np.exp(field.phi_values(family, s, fine))
        sums = weights.reshape(m, spec.grid.n_points).sum(axis=0)
        c = sums.mean()
        if c <= 0 or not np.isfinite(c):
            raise DegenerateModelError(f"symbol {s}: weighted branch sum is not positive")
        if np.abs(sums - c).max() > tol * max(1.0, abs(c)):
            raise ConfigError(
                f"symbol {s}: the z=0 operator does not map 1 to a constant; "
                f"fiberwise normalization along a path is required (solve the "
                f"eigendata first)")
        shifts.append(-np.log(c))
        if abs(np.log(c)) > tol:
            any_shift = True
    if not any_shift:
        return spec

    new_extra = []
    for s, shift in enumerate(shifts):
        extra = field.phi_extra[s]
        if extra is None:
            new_extra.append(TrigPoly(const=shift))
        else:
            new_extra.append(extra.shifted(shift))
    new_field = ObservablePair(field.u, field.phi_base, tuple(new_extra),
                               field.alpha, field.xi)
    return OperatorSpec("transfer", spec.z, family, new_field, None, spec.grid)


def _probe_fields(grid, seed: int = 1234) -> list[np.ndarray]:
    """Probe basis for norm estimation: constants, low modes, random fields."""
    x = grid.nodes
    rng = np.random.default_rng(seed)
    probes = [np.ones_like(x, dtype=complex),
              np.exp(2j * np.pi * x),
              np.exp(-2j * np.pi * x),
              np.exp(4j * np.pi * x)]
    # Random smooth field: Fourier series with 1/k^2 decay, bounded seminorm.
    smooth = np.zeros_like(x, dtype=complex)
    for k in range(1, 9):
        a, b = rng.standard_normal(2)
        smooth += (a + 1j * b) / k ** 2 * np.exp(2j * np.pi * k * x)
    probes.append(smooth)
    return probes


def norm_estimate(path: EnvPath, spec: OperatorSpec, n, t_values) -> np.ndarray:
    """Estimate ``sup-norm`` growth factors of the cocycle at ``z = i t``.

    For every ``t`` the estimate is the maximum over a fixed probe basis of
    ``||A_{it}^n g||_sup / ||g||_sup``.  A probe-basis maximum is a lower
    bound on the operator norm; it is used to *measure* empirical decay (or
    detect its absence for lattice observables), never as a certified bound.

    Parameters
    ----------
    path, spec : the cocycle context (spec.z is ignored; z = i t is used).
    n : int or sequence of int
        Iterate count(s); a sequence reuses one sweep per ``t``, reporting
        the estimate at every requested prefix.
    t_values : sequence of real
        Nonempty frequencies.

    Returns
    -------
    numpy.ndarray
        Shape ``(len(t_values),)`` for scalar ``n``, else
        ``(len(t_values), len(n))``.
    """
    t_values = np.atleast_1d(np.asarray(t_values, dtype=float))
    if t_values.size == 0:
        raise ConfigError("t_values must be nonempty")
    scalar_n = np.isscalar(n)
    n_list = np.atleast_1d(np.asarray(n, dtype=int))
    if np.any(n_list < 1):
        raise ConfigError("iterate counts must be >= 1")
    n_max = int(n_list.max())

    probes = _probe_fields(spec.grid)
    out = np.zeros((t_values.size, n_list.size))
    for it, t in enumerate(t_values):
        engine = CocycleEngine(path, spec, 1j * t * np.ones(1))
        for probe in probes:
            values = probe[None, :].astype(complex)
            norm0 = float(np.abs(values).max())
            log_scale = 0.0
            for step in range(n_max):
                edge = step if spec.variant == "transfer" else -step - 1
                values = engine.apply_edge(edge, values)
                sup = float(np.abs(values).max())
                if sup == 0.0:
                    break
                values = values / sup
                log_scale += np.log(sup)
                hit = np.nonzero(n_list == step + 1)[0]
                for h in hit:
                    out[it, h] = max(out[it, h], np.exp(log_scale) / norm0)
    return out[:, 0] if scalar_n else out


def dense_matrix(spec: OperatorSpec, symbol: int) -> np.ndarray:
    """Dense discretized matrix of one symbol's operator (oracle mode).

    Transfer variant: the weighted branch-sum collocation matrix; Markov
    variant: the quadrature kernel matrix times the exponential weight of
    the same symbol.  Intended for small grids (cross-validation, spectra).
    """
    n = spec.grid.n_points
    if spec.variant == "markov":
        u = np.asarray(spec.field.u_values(symbol, spec.grid.nodes), dtype=float)
        return spec.kernels.matrix(symbol) * np.exp(spec.z * u)[None, :]
    engine = CocycleEngine(_single_symbol_path(symbol), spec, spec.z)
    return engine.dense_edge_matrix(0)[0]


def dump_matrix_csv(matrix: np.ndarray, file_path: str) -> None:
    """Write a dense operator matrix as CSV (17 significant digits).

    Complex entries are written as paired ``re_j, im_j`` columns with a
    header row naming them.
    """
    matrix = np.asarray(matrix)
    if np.iscomplexobj(matrix):
        cols = []
        header = []
        for j in range(matrix.shape[1]):
            cols.extend([matrix[:, j].real, matrix[:, j].imag])
            header.extend([f"re_{j}", f"im_{j}"])
        stacked = np.column_stack(cols)
        np.savetxt(file_path, stacked, delimiter=",", fmt="%.17g",
                   header=",".join(header), comments="")
    else:
        header = ",".join(f"c_{j}" for j in range(matrix.shape[1]))
        np.savetxt(file_path, matrix, delimiter=",", fmt="%.17g",
                   header=header, comments="")
