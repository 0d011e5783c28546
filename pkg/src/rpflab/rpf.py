"""Random eigendata of operator cocycles along an environment path.

For a weighted cocycle step ``A_z`` driven by a path, this module computes
the path-dependent leading eigendata at a chosen fiber: the scalar
``lambda(z)`` (one-step leading eigenvalue), the function ``h(z)`` (leading
eigenfunction), and the functional ``nu(z)`` (leading dual measure,
represented as grid weights).  They satisfy, fiber to fiber,

    ``A_z h = lambda h'``      and      ``A_z* nu' = lambda nu``,

with the normalizations ``nu(1) = 1`` and ``nu(h) = 1``, where primes mark
the next fiber in the cocycle's composition direction.

Everything rests on two geometric-convergence sweeps over a finite chain of
fibers:

* a **column sweep** pushes a positive seed field forward along the chain;
  after ``n`` steps the normalized iterate approximates ``h`` at the
  landing fiber with error ``O(delta^n)``;
* a **row sweep** pulls the quadrature functional backward through the
  step transposes; after ``n`` steps the normalized row approximates
  ``nu`` at the starting fiber, and the per-step mass ratios approximate
  the one-step eigenvalues.

Convergence is certified by *coupling*: every sweep carries two distinct
positive seeds, and the sup-distance between the normalized iterates decays
like the true contraction rate, so it serves as an a-posteriori error proxy
and drives both early-convergence detection and the data-driven default
depth.

:func:`estimate_contraction` measures the contraction constants ``(C,
delta)`` themselves.  For the transfer variant it deliberately switches to
an interval piecewise-linear representation: the spectrally accurate
trigonometric discretization annihilates the slow mode of piecewise-affine
expanding maps (its discrete second eigenvalue is tiny), while interval
hat functions represent the exact slow eigenfunction ``x - 1/2`` and
reproduce the true second eigenvalue ``1/m`` of an ``m``-branch map exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .env import EnvPath
from .errors import (BranchError, ConfigError, ConvergenceError,
                     DegenerateModelError)
from .operators import (Chain, CocycleEngine, FiberField, OperatorSpec,
                        _probe_fields, dense_matrix)

__all__ = [
    "RpfTriplet",
    "ContractionEstimate",
    "solve_h",
    "solve_nu",
    "lambda_of",
    "solve_triplet",
    "gibbs_triplet",
    "pressure",
    "verify_rpf_identities",
    "estimate_contraction",
    "reject_small_spectral_gap",
    "dump_triplets_csv",
]

_MIN_DEPTH = 14
_PREPASS = 14
_MAX_DEPTH = 500
_DEFAULT_RHO = 0.2


# --------------------------------------------------------------------------
# result types
# --------------------------------------------------------------------------

@dataclass
class RpfTriplet:
    """Leading eigendata of the cocycle at one fiber and one ``z``.

    Attributes
    ----------
    z : complex
        Spectral parameter.
    log_lambda : complex
        Logarithm of the one-step leading eigenvalue (principal branch,
        anchored at ``log 1 = 0`` for ``z = 0`` of a normalized cocycle).
    h : FiberField
        Leading eigenfunction, normalized so ``nu(h) = 1``.
    nu_weights : numpy.ndarray
        Grid weights of the dual measure, normalized so ``nu(1) = 1``
        (the weights sum to one); entries are nonnegative at real ``z``.
    residuals : tuple of float
        Solver convergence proxies ``(h, nu, lambda)``: final coupling
        distances of the two-seed sweeps.  Diagnostics, not certified
        error bounds.
    """

    z: complex
    log_lambda: complex
    h: FiberField
    nu_weights: np.ndarray
    residuals: tuple

    @property
    def lam(self) -> complex:
        """The one-step leading eigenvalue ``exp(log_lambda)``."""
        return complex(np.exp(self.log_lambda))

    def nu(self, g) -> complex:
        """Apply the dual functional to a field or plain value array."""
        values = g.values if isinstance(g, FiberField) else np.asarray(g)
        return complex(self.nu_weights @ values)

    @property
    def mu_weights(self) -> np.ndarray:
        """Real probability weights of the measure ``h d nu``.

        Meaningful at ``z = 0`` (the invariant Gibbs measure of the fiber)
        and for small real ``z``; tiny negative round-off is clipped.
        """
        w = (self.h.values * self.nu_weights).real
        w = np.clip(w, 0.0, None)
        total = w.sum()
        if total <= 0.0:
            raise DegenerateModelError("eigendata weights do not form a measure")
        return w / total


@dataclass
class ContractionEstimate:
    """Fitted constants of geometric cocycle contraction.

    ``residual(n) <= C * delta**n`` is the model fitted on measured
    residuals over ``n_values``; ``fit_residual`` is the root-mean-square
    misfit of the log-linear fit and ``r_squared`` its variance fraction.
    ``valid`` is False when the residuals do not actually decay; an exact
    finite-step collapse (rank-one steps) is reported with the sentinel
    ``delta = 5e-324`` and a note.
    """

    C: float
    delta: float
    n_values: np.ndarray
    residual_values: np.ndarray
    fit_residual: float
    r_squared: float
    valid: bool
    note: str = ""


# --------------------------------------------------------------------------
# chains and sweeps
# --------------------------------------------------------------------------

def _backward_chain(engine: CocycleEngine, depth: int) -> Chain:
    """Chain whose anchor (last position) is the path origin fiber."""
    return Chain(engine, 0, depth)


def _forward_chain(engine: CocycleEngine, depth: int) -> Chain:
    """Chain whose first position is the path origin fiber."""
    if engine.spec.variant == "transfer":
        return Chain(engine, depth, depth)
    return Chain(engine, -depth, depth)


def _guard_scale(scale: np.ndarray, state: np.ndarray, what: str) -> None:
    sup = np.abs(state).max(axis=-1)
    bad = (~np.isfinite(scale)) | (np.abs(scale) < 1e-13 * np.maximum(sup, 1e-300))
    if np.any(bad):
        raise DegenerateModelError(
            f"{what} collapsed during an eigendata sweep; the spectral "
            f"parameter is likely outside the analyticity radius or the "
            f"observable is lattice-degenerate")


def _column_sweep(chain, quad: np.ndarray, seeds: np.ndarray, keep=()):
    """Push seed fields up the chain, normalizing to unit quadrature mean.

    ``seeds`` has shape ``(B, N)``.  Returns the final states, the list of
    two-seed coupling increments (populated when ``B == 2``), and a dict of
    kept states by chain position.
    """
    keep = set(keep)
    state = np.asarray(seeds, dtype=complex).copy()
    mean = state @ quad
    _guard_scale(mean, state, "quadrature mean")
    state /= mean[:, None]
    kept = {0: state.copy()} if 0 in keep else {}
    increments: list[float] = []
    for c in range(chain.n):
        state = chain.apply(c, state)
        mean = state @ quad
        _guard_scale(mean, state, "quadrature mean")
        state /= mean[:, None]
        if state.shape[0] == 2:
            increments.append(float(np.abs(state[0] - state[1]).max()))
        if c + 1 in keep:
            kept[c + 1] = state.copy()
    return state, increments, kept


def _row_sweep(chain, seeds: np.ndarray, keep=()):
    """Pull functional rows down the chain, normalizing to unit total mass.

    ``seeds`` has shape ``(B, N)`` of weight rows at the anchor.  Returns
    the rows at position 0, the per-position one-step eigenvalue factors
    ``lam`` of shape ``(n, B)`` (``lam[c]`` acts between positions ``c`` and
    ``c + 1``), the coupling increments (when ``B == 2``), and kept rows by
    position.
    """
    keep = set(keep)
    state = np.asarray(seeds, dtype=complex).copy()
    mass = state.sum(axis=1)
    _guard_scale(mass, state, "total mass")
    state /= mass[:, None]
    kept = {chain.n: state.copy()} if chain.n in keep else {}
    lam = np.empty((chain.n, state.shape[0]), dtype=complex)
    increments: list[float] = []
    for c in range(chain.n - 1, -1, -1):
        state = chain.apply_T(c, state)
        mass = state.sum(axis=1)
        _guard_scale(mass, state, "total mass")
        lam[c] = mass
        state /= mass[:, None]
        if state.shape[0] == 2:
            increments.append(float(np.abs(state[0] - state[1]).max()))
        if c in keep:
            kept[c] = state.copy()
    return state, lam, increments, kept


def _second_seed(nodes: np.ndarray) -> np.ndarray:
    """A second positive seed, independent of the constant seed."""
    return 1.0 + 0.5 * np.cos(2 * np.pi * nodes)


def _fit_tail_ratio(increments) -> float | None:
    """Median ratio of successive increments over the usable tail."""
    ratios = []
    for a, b in zip(increments[4:], increments[5:]):
        if a > 1e-13 and b > 0.0:
            ratios.append(b / a)
    if not ratios:
        return None
    return float(np.median(ratios))


def _validate_solver_args(z: complex, depth, tol: float, rho: float) -> None:
    if not (0.0 < tol < 1.0):
        raise ConfigError(f"tolerance must lie in (0, 1), got {tol}")
    if abs(z) > rho + 1e-12:
        raise ConfigError(
            f"|z| = {abs(z):.4g} exceeds the analyticity radius rho = {rho}; "
            f"eigendata solves are only defined inside the radius")
    if depth is not None and int(depth) < 1:
        raise ConfigError(f"depth must be >= 1, got {depth}")


def _default_depth(path: EnvPath, spec: OperatorSpec, z: complex, tol: float,
                   orientation: str) -> int:
    """Data-driven depth: fit the coupling decay rate on a short pre-pass.

    Geometric convergence at rate ``delta`` needs about
    ``log(tol) / log(delta)`` steps; the rate is measured on a cheap
    14-step sweep oriented like the solve that will follow.
    """
    engine = CocycleEngine(path, spec, [z, z])
    nodes = spec.grid.nodes
    if orientation == "column":
        chain = _backward_chain(engine, _PREPASS)
        seeds = np.stack([np.ones_like(nodes, dtype=complex),
                          _second_seed(nodes).astype(complex)])
        _, increments, _ = _column_sweep(chain, spec.grid.quad_weights, seeds)
    else:
        chain = _forward_chain(engine, _PREPASS)
        quad = spec.grid.quad_weights
        seeds = np.stack([quad.astype(complex), quad * _second_seed(nodes)])
        _, _, increments, _ = _row_sweep(chain, seeds)
    rate = _fit_tail_ratio(increments)
    if rate is None:
        return _MIN_DEPTH
    rate = min(max(rate, 0.05), 0.95)
    depth = math.ceil(math.log(tol) / math.log(rate)) + 4
    return int(min(max(depth, _MIN_DEPTH), _MAX_DEPTH))


# --------------------------------------------------------------------------
# eigendata solves
# --------------------------------------------------------------------------

def solve_h(path: EnvPath, spec: OperatorSpec, z: complex,
            depth: int | None = None, tol: float = 1e-10,
            rho: float = _DEFAULT_RHO) -> FiberField:
    """Leading eigenfunction at the path origin fiber.

    Pushes two positive seeds from ``depth`` composition steps before the
    origin; the normalized iterate converges geometrically to ``h``.  The
    result is normalized to unit quadrature mean (so ``z = 0`` of a
    normalized cocycle returns exactly the constant one); assembling a full
    triplet rescales it to ``nu(h) = 1``.  ``info`` carries the coupling
    increments, their fitted decay ratio, and the first depth at which the
    increment fell below ``tol``.

    Raises
    ------
    ConvergenceError
        If the final coupling increment is still above ``tol``.
    """
    _validate_solver_args(z, depth, tol, rho)
    if depth is None:
        depth = _default_depth(path, spec, z, tol, "column")
    depth = int(depth)
    engine = CocycleEngine(path, spec, [z, z])
    chain = _backward_chain(engine, depth)
    nodes = spec.grid.nodes
    seeds = np.stack([np.ones_like(nodes, dtype=complex),
                      _second_seed(nodes).astype(complex)])
    state, increments, _ = _column_sweep(chain, spec.grid.quad_weights, seeds)
    if increments and increments[-1] >= tol:
        raise ConvergenceError(
            f"eigenfunction iteration did not converge: last increment "
            f"{increments[-1]:.3e} >= tol {tol:.3e} at depth {depth}; "
            f"|z| may exceed the usable radius or the observable may be "
            f"lattice-degenerate")
    converged_at = next((c + 1 for c, d in enumerate(increments) if d < tol),
                        None)
    info = {
        "increments": np.asarray(increments),
        "ratio": _fit_tail_ratio(increments),
        "depth": depth,
        "converged_depth": converged_at,
    }
    return FiberField(spec.grid, state[0], info)


def solve_nu(path: EnvPath, spec: OperatorSpec, z: complex,
             depth: int | None = None, tol: float = 1e-10,
             rho: float = _DEFAULT_RHO) -> np.ndarray:
    """Dual-measure grid weights at the path origin fiber.

    Pulls the quadrature functional (and a perturbed second seed) back
    through ``depth`` step transposes; the normalized row converges
    geometrically to ``nu``.  Weights are returned summing to one
    (``nu(1) = 1``).
    """
    _validate_solver_args(z, depth, tol, rho)
    if depth is None:
        depth = _default_depth(path, spec, z, tol, "row")
    depth = int(depth)
    engine = CocycleEngine(path, spec, [z, z])
    chain = _forward_chain(engine, depth)
    quad = spec.grid.quad_weights
    seeds = np.stack([quad.astype(complex),
                      quad * _second_seed(spec.grid.nodes)])
    state, _, increments, _ = _row_sweep(chain, seeds)
    if increments and increments[-1] >= tol:
        raise ConvergenceError(
            f"dual-measure iteration did not converge: last increment "
            f"{increments[-1]:.3e} >= tol {tol:.3e} at depth {depth}")
    weights = state[0]
    return weights / weights.sum()


def lambda_of(path: EnvPath, spec: OperatorSpec, z: complex,
              depth: int | None = None, tol: float = 1e-10,
              rho: float = _DEFAULT_RHO) -> complex:
    """One-step leading eigenvalue at the path origin fiber.

    Computed as the mass ratio of the pulled-back dual functional across
    the origin's step, ``lambda = nu'(A_z 1)`` with ``nu'`` the dual
    measure one step ahead in composition direction.
    """
    _validate_solver_args(z, depth, tol, rho)
    if depth is None:
        depth = _default_depth(path, spec, z, tol, "row")
    depth = int(depth)
    engine = CocycleEngine(path, spec, [z, z])
    chain = _forward_chain(engine, depth)
    quad = spec.grid.quad_weights
    seeds = np.stack([quad.astype(complex),
                      quad * _second_seed(spec.grid.nodes)])
    _, lam, _, _ = _row_sweep(chain, seeds)
    gap = abs(lam[0, 0] - lam[0, 1])
    if gap >= tol * max(1.0, abs(lam[0, 0])):
        raise ConvergenceError(
            f"eigenvalue coupling still {gap:.3e} at depth {depth}; "
            f"increase the depth or check the model")
    return complex(lam[0, 0])


def solve_triplet(path: EnvPath, spec: OperatorSpec, z: complex,
                  depth: int | None = None, tol: float = 1e-10,
                  rho: float = _DEFAULT_RHO) -> RpfTriplet:
    """Full eigendata triplet at the path origin fiber.

    Runs the backward column sweep (for ``h``) and the forward row sweep
    (for ``nu`` and ``lambda``) at the same depth and assembles the
    normalized triplet: ``nu(1) = 1``, ``nu(h) = 1``, ``log_lambda``
    principal.  The path window must reach ``depth`` fibers on both sides
    of the origin.
    """
    _validate_solver_args(z, depth, tol, rho)
    if depth is None:
        depth = _default_depth(path, spec, z, tol, "row")
    depth = int(depth)
    engine = CocycleEngine(path, spec, [z, z])
    nodes = spec.grid.nodes
    quad = spec.grid.quad_weights

    col_chain = _backward_chain(engine, depth)
    col_seeds = np.stack([np.ones_like(nodes, dtype=complex),
                          _second_seed(nodes).astype(complex)])
    col_state, col_inc, _ = _column_sweep(col_chain, quad, col_seeds)

    row_chain = _forward_chain(engine, depth)
    row_seeds = np.stack([quad.astype(complex), quad * _second_seed(nodes)])
    row_state, lam, row_inc, _ = _row_sweep(row_chain, row_seeds)

    last_col = col_inc[-1] if col_inc else 0.0
    last_row = row_inc[-1] if row_inc else 0.0
    lam_gap = float(abs(lam[0, 0] - lam[0, 1])) if depth > 0 else 0.0
    if max(last_col, last_row) >= tol:
        raise ConvergenceError(
            f"triplet solve did not converge at depth {depth}: increments "
            f"h={last_col:.3e}, nu={last_row:.3e} (tol {tol:.3e})")

    weights = row_state[0]
    weights = weights / weights.sum()
    pairing = weights @ col_state[0]
    if not np.isfinite(pairing) or abs(pairing) < 1e-13:
        raise DegenerateModelError(
            "nu(h) pairing degenerated; eigendata is not usable at this z")
    h_values = col_state[0] / pairing
    info = {
        "increments": np.asarray(col_inc),
        "ratio": _fit_tail_ratio(col_inc),
        "depth": depth,
        "converged_depth": next(
            (c + 1 for c, d in enumerate(col_inc) if d < tol), None),
    }
    return RpfTriplet(
        z=complex(z),
        log_lambda=complex(np.log(lam[0, 0])),
        h=FiberField(spec.grid, h_values, info),
        nu_weights=weights,
        residuals=(float(last_col), float(last_row), lam_gap),
    )


def gibbs_triplet(path: EnvPath, spec: OperatorSpec,
                  depth: int | None = None, tol: float = 1e-10) -> RpfTriplet:
    """Eigendata at ``z = 0``; its ``mu_weights`` are the fiber's Gibbs
    measure (the stationary family the limit theorems are stated under)."""
    return solve_triplet(path, spec, 0.0, depth=depth, tol=tol)


# --------------------------------------------------------------------------
# pressure along a curve
# --------------------------------------------------------------------------

def pressure(path: EnvPath, spec: OperatorSpec, z_list,
             depth: int | None = None, tol: float = 1e-10,
             rho: float = _DEFAULT_RHO) -> np.ndarray:
    """Logarithm of the leading eigenvalue along a curve from ``z = 0``.

    All ``z`` values are solved in one batched sweep; the logarithm branch
    is chosen by continuity along the list, anchored at the exact value 0
    for ``z = 0`` (the cocycle must be normalized).

    Raises
    ------
    BranchError
        If consecutive eigenvalue arguments jump by >= pi/2 (curve too
        coarse to track the branch).
    ConfigError
        If the curve does not start at 0, leaves the radius ``rho``, or
        the cocycle is not normalized at ``z = 0``.
    """
    z_arr = np.asarray(list(z_list), dtype=complex)
    if z_arr.size == 0:
        raise ConfigError("z_list must be nonempty")
    if z_arr[0] != 0:
        raise ConfigError("the pressure curve must start at z = 0")
    for z in z_arr:
        _validate_solver_args(z, depth, tol, rho)
    if depth is None:
        z_ref = z_arr[int(np.argmax(np.abs(z_arr)))]
        depth = _default_depth(path, spec, z_ref, tol, "row")
    depth = int(depth)

    engine = CocycleEngine(path, spec, z_arr)
    chain = _forward_chain(engine, depth)
    quad = spec.grid.quad_weights
    batch = z_arr.size
    seed_a = np.tile(quad.astype(complex), (batch, 1))
    seed_b = np.tile(quad * _second_seed(spec.grid.nodes), (batch, 1))
    _, lam_a, _, _ = _row_sweep(chain, seed_a)
    _, lam_b, _, _ = _row_sweep(chain, seed_b)
    lam = lam_a[0]
    gaps = np.abs(lam_a[0] - lam_b[0])
    worst = float(gaps.max())
    if worst >= tol * max(1.0, float(np.abs(lam).max())):
        raise ConvergenceError(
            f"pressure solve coupling still {worst:.3e} at depth {depth}")

    if abs(lam[0] - 1.0) > 1e-6:
        raise ConfigError(
            f"lambda(0) = {lam[0]:.8g} is not 1; normalize the cocycle "
            f"before computing pressure")
    out = np.empty(batch, dtype=complex)
    out[0] = 0.0
    prev_arg = 0.0
    unwrapped = 0.0
    for k in range(1, batch):
        arg = float(np.angle(lam[k]))
        step = (arg - prev_arg + np.pi) % (2 * np.pi) - np.pi
        if abs(step) >= np.pi / 2:
            raise BranchError(
                f"eigenvalue argument jumped by {abs(step):.3f} rad between "
                f"curve points {k - 1} and {k}; refine the z curve")
        unwrapped += step
        prev_arg = arg
        out[k] = np.log(np.abs(lam[k])) + 1j * unwrapped
    return out


# --------------------------------------------------------------------------
# verification
# --------------------------------------------------------------------------

def verify_rpf_identities(path: EnvPath, spec: OperatorSpec,
                          triplet: RpfTriplet,
                          triplet_next: RpfTriplet) -> tuple:
    """Residuals of the defining eigen-identities across one step.

    ``triplet`` must be solved at the origin of ``path``; ``triplet_next``
    at the next fiber in composition direction — the origin of
    ``path.shift(1)`` for the transfer variant, of ``path.shift(-1)`` for
    the Markov variant.  Solve the two triplets independently (their own
    sweeps), otherwise shared-sweep identities hold to round-off by
    construction and verify nothing.

    Returns
    -------
    (float, float, float)
        Sup-norm residual of the eigenfunction equation
        ``A_z h = lambda h'``; max probe residual of the dual equation
        ``nu'(A_z g) = lambda nu(g)``; and ``|nu(h) - 1|``.
    """
    if triplet.z != triplet_next.z:
        raise ConfigError(
            f"triplets disagree on z: {triplet.z} vs {triplet_next.z}")
    if not spec.grid.matches(triplet.h.grid):
        raise ConfigError("triplet grid does not match the operator grid")
    engine = CocycleEngine(path, spec, [triplet.z])
    edge = 0 if spec.variant == "transfer" else -1
    lam = triplet.lam

    applied_h = engine.apply_edge(edge, triplet.h.values[None, :])[0]
    res_h = float(np.abs(applied_h - lam * triplet_next.h.values).max())

    res_nu = 0.0
    for probe in _probe_fields(spec.grid):
        lhs = triplet_next.nu(engine.apply_edge(edge, probe[None, :])[0])
        rhs = lam * triplet.nu(probe)
        res_nu = max(res_nu, abs(lhs - rhs))

    res_norm = abs(triplet.nu(triplet.h) - 1.0)
    return (res_h, float(res_nu), float(res_norm))


# --------------------------------------------------------------------------
# contraction measurement
# --------------------------------------------------------------------------

class _IntervalGrid:
    """Nodes and trapezoid weights of the interval hat-function basis."""

    kind = "interval"

    def __init__(self, n_cells: int) -> None:
        self.n_points = n_cells + 1
        self.nodes = np.arange(n_cells + 1) / n_cells
        w = np.full(n_cells + 1, 1.0 / n_cells)
        w[0] *= 0.5
        w[-1] *= 0.5
        self.quad_weights = w


def _interval_pl_transfer_matrix(spec: OperatorSpec, symbol: int, z: complex,
                                 n_cells: int) -> np.ndarray:
    """Transfer step matrix in the interval piecewise-linear basis.

    Rows collocate the branch sum at the ``n_cells + 1`` nodes; the field
    at the branch preimages is evaluated by interval (non-wrapping) linear
    interpolation.  The slow eigenfunction ``x - 1/2`` of piecewise-affine
    maps is exactly representable here, so the discrete second eigenvalue
    equals the true ``1/m``.
    """
    family, field = spec.family, spec.field
    m = family.slope(symbol)
    nodes = np.arange(n_cells + 1) / n_cells
    mat = np.zeros((n_cells + 1, n_cells + 1), dtype=complex)
    rows = np.arange(n_cells + 1)
    for b in range(m):
        y = (nodes + b) / m
        u = np.asarray(field.u_values(symbol, y), dtype=float)
        w = np.exp(field.phi_values(family, symbol, y) + z * u)
        pos = y * n_cells
        j0 = np.clip(np.floor(pos).astype(int), 0, n_cells - 1)
        frac = pos - j0
        np.add.at(mat, (rows, j0), w * (1.0 - frac))
        np.add.at(mat, (rows, j0 + 1), w * frac)
    return mat


class _MatrixChain:
    """Chain interface over an explicit list of dense step matrices."""

    def __init__(self, matrices) -> None:
        self.mats = matrices
        self.n = len(matrices)

    def apply(self, c: int, batch: np.ndarray) -> np.ndarray:
        return batch @ self.mats[c].T

    def apply_T(self, c: int, batch: np.ndarray) -> np.ndarray:
        return batch @ self.mats[c]


def _contraction_chain(path: EnvPath, spec: OperatorSpec, z: complex,
                       burn_in: int, n_max: int, pl_size: int):
    """Dense step-matrix chain for contraction runs, plus its grid.

    Chain position ``burn_in`` sits at the path origin; positions extend
    ``burn_in`` steps before it and ``n_max + burn_in`` after, so both the
    eigenfunctions and the eigenvalue factors used inside the measured
    range carry at least ``burn_in`` steps of convergence.
    """
    length = n_max + 2 * burn_in
    mats = []
    cache: dict = {}
    if spec.variant == "transfer":
        grid = _IntervalGrid(pl_size)
        for c in range(length):
            s = path.symbol(c - burn_in)
            if s not in cache:
                cache[s] = _interval_pl_transfer_matrix(spec, s, z, pl_size)
            mats.append(cache[s])
    else:
        grid = spec.grid
        for c in range(length):
            e = burn_in - c - 1
            key = (path.symbol(e), path.symbol(e + 1))
            if key not in cache:
                kernel_sym, u_sym = key
                u = np.asarray(spec.field.u_values(u_sym, grid.nodes),
                               dtype=float)
                cache[key] = (spec.kernels.matrix(kernel_sym)
                              * np.exp(z * u)[None, :])
            mats.append(cache[key])
    return _MatrixChain(mats), grid


def estimate_contraction(path: EnvPath, spec: OperatorSpec, z: complex,
                         n_range, burn_in: int = 40, pl_size: int = 128,
                         floor: float = 1e-12,
                         rho: float = _DEFAULT_RHO) -> ContractionEstimate:
    """Fit the geometric decay constants of the cocycle's mixing action.

    Measures ``residual(n) = sup_g || lambda^{-n} A_z^n g - nu(g) h || /
    ||g||`` over a probe basis and fits ``log residual`` linearly in ``n``.
    The eigendata entering the residual comes from sweeps extended
    ``burn_in`` steps beyond the measured range on both sides, so its own
    error sits far below the measured decay until the ``floor``.

    The transfer variant is measured in an interval piecewise-linear
    representation of size ``pl_size`` (see the module docstring); the
    Markov variant in its native quadrature representation.

    Residuals indistinguishable from round-off are excluded from the fit;
    if every residual collapses at once (rank-one steps) the estimate
    reports the smallest positive float as a ``0+`` sentinel for ``delta``.
    Non-decaying residuals yield ``valid = False`` rather than an error.
    """
    _validate_solver_args(z, None, 0.5, rho)
    n_values = np.unique(np.asarray(list(n_range), dtype=int))
    if n_values.size < 5:
        raise ConfigError("n_range must contain at least 5 distinct values")
    if n_values.min() < 1:
        raise ConfigError("n_range values must be >= 1")
    n_max = int(n_values.max())
    chain, grid = _contraction_chain(path, spec, z, burn_in, n_max, pl_size)
    nodes = grid.nodes
    quad = grid.quad_weights
    wanted = {burn_in + int(n) for n in n_values}

    col_seeds = np.stack([np.ones_like(nodes, dtype=complex),
                          _second_seed(nodes).astype(complex)])
    _, _, col_kept = _column_sweep(chain, quad, col_seeds, keep=wanted)

    row_seeds = np.stack([quad.astype(complex), quad * _second_seed(nodes)])
    _, lam, _, row_kept = _row_sweep(chain, row_seeds,
                                     keep=wanted | {burn_in})

    nu0 = row_kept[burn_in][0]
    nu0 = nu0 / nu0.sum()

    # The slow mode of piecewise-affine maps couples to probes through the
    # boundary jump g(1) - g(0), so periodic probes alone would miss it;
    # add non-periodic fields to the standard probe basis.
    probes = np.stack(_probe_fields(grid)
                      + [nodes - 0.5 + 0j, nodes.astype(complex) ** 2,
                         np.exp(nodes).astype(complex)])
    probe_sup = np.abs(probes).max(axis=1)
    nu_of_probes = probes @ nu0
    states = probes.astype(complex).copy()
    n_set = set(int(n) for n in n_values)
    residuals = {}
    for k in range(n_max):
        c = burn_in + k
        states = chain.apply(c, states) / lam[c, 0]
        n = k + 1
        if n in n_set:
            h_end = col_kept[burn_in + n][0]
            nu_end = row_kept[burn_in + n][0]
            h_end = h_end / (nu_end @ h_end / nu_end.sum())
            gap = np.abs(states - nu_of_probes[:, None] * h_end[None, :])
            residuals[n] = float((gap.max(axis=1) / probe_sup).max())

    res_arr = np.array([residuals[int(n)] for n in n_values])
    usable = res_arr > floor
    tiny = float(np.finfo(float).tiny)
    if usable.sum() < 3:
        if res_arr.max() <= 10 * floor:
            return ContractionEstimate(
                C=0.0, delta=tiny, n_values=n_values, residual_values=res_arr,
                fit_residual=0.0, r_squared=1.0, valid=True,
                note="residuals at machine floor after one step "
                     "(rank-one collapse); delta is a 0+ sentinel")
        return ContractionEstimate(
            C=float(res_arr.max()), delta=tiny, n_values=n_values,
            residual_values=res_arr, fit_residual=0.0, r_squared=0.0,
            valid=False, note="too few residuals above the round-off floor "
                              "for a fit")
    x = n_values[usable].astype(float)
    y = np.log(res_arr[usable])
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(((y - pred) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r_squared = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res < 1e-20 else 0.0)
    fit_residual = float(np.sqrt(((y - pred) ** 2).mean()))
    delta = float(np.exp(slope))
    valid = bool(np.isfinite(delta) and delta < 1.0)
    note = "" if valid else "residuals do not decay over the fitted range"
    return ContractionEstimate(
        C=float(np.exp(intercept)), delta=delta, n_values=n_values,
        residual_values=res_arr, fit_residual=fit_residual,
        r_squared=float(r_squared), valid=valid, note=note)


def reject_small_spectral_gap(spec: OperatorSpec, min_gap: float = 0.05):
    """Validate that every symbol's ``z = 0`` operator has a spectral gap.

    The limit theory presumes uniformly fast loss of memory; a dense-matrix
    spectrum whose two leading moduli are closer than ``min_gap`` for some
    symbol makes the eigendata sweeps unreliable, so the configuration is
    rejected.  Returns the per-symbol gaps.
    """
    spec0 = spec.with_z(0.0)
    alphabet = (spec.family.alphabet_size if spec.variant == "transfer"
                else spec.kernels.alphabet_size)
    gaps = []
    for s in range(alphabet):
        moduli = np.sort(np.abs(np.linalg.eigvals(dense_matrix(spec0, s))))[::-1]
        gap = float(moduli[0] - moduli[1])
        if gap < min_gap:
            raise ConfigError(
                f"symbol {s}: leading spectral moduli {moduli[0]:.4g} and "
                f"{moduli[1]:.4g} are within {min_gap}; the model mixes too "
                f"slowly for reliable eigendata sweeps")
        gaps.append(gap)
    return gaps


# --------------------------------------------------------------------------
# CSV dump
# --------------------------------------------------------------------------

def dump_triplets_csv(entries, file_path: str) -> None:
    """Write eigendata triplets as CSV keyed by fiber index and ``z``.

    ``entries`` is an iterable of ``(fiber_index, RpfTriplet)``; each grid
    node becomes one row carrying the node position, the eigenfunction
    value, the dual weight, and the (constant per triplet) ``log lambda``.
    """
    rows = []
    for fiber, triplet in entries:
        grid = triplet.h.grid
        for j in range(grid.n_points):
            rows.append((
                float(fiber), triplet.z.real, triplet.z.imag, float(j),
                float(grid.nodes[j]),
                triplet.h.values[j].real, triplet.h.values[j].imag,
                triplet.nu_weights[j].real, triplet.nu_weights[j].imag,
                triplet.log_lambda.real, triplet.log_lambda.imag,
            ))
    header = ("fiber,z_re,z_im,node_index,node,h_re,h_im,nu_re,nu_im,"
              "log_lambda_re,log_lambda_im")
    np.savetxt(file_path, np.asarray(rows), delimiter=",", fmt="%.17g",
               header=header, comments="")
