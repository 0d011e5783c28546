"""Tests for path eigendata: solves, pressure, verification, contraction."""

import numpy as np
import numpy.testing as npt
import pytest
from scipy import special

from rpflab.dynamics import MapFamily, ObservablePair, TrigPoly
from rpflab.env import EnvModel, sample_path
from rpflab.errors import (BranchError, ConfigError, ConvergenceError,
                           DegenerateModelError)
from rpflab.operators import KernelFamily, OperatorSpec, dense_matrix
from rpflab.rpf import (dump_triplets_csv, estimate_contraction, gibbs_triplet,
                        lambda_of, pressure, reject_small_spectral_gap,
                        solve_h, solve_nu, solve_triplet,
                        verify_rpf_identities, _interval_pl_transfer_matrix)


@pytest.fixture(scope="module")
def doubling():
    family = MapFamily([2])
    field = ObservablePair([TrigPoly(cos=[1.0])])
    return OperatorSpec.transfer(family, field, grid_size=256)


@pytest.fixture(scope="module")
def wide_path():
    return sample_path(EnvModel(1), seed=0, n_past=150, n_future=150)


@pytest.fixture(scope="module")
def vonmises():
    kernels = KernelFamily([("vonmises", 1.0, 0.0)], doeblin_alpha=0.29,
                           quad_size=48)
    return OperatorSpec.markov(kernels, ObservablePair([TrigPoly(cos=[1.0])]))


# --------------------------------------------------------------------------
# eigendata at z = 0
# --------------------------------------------------------------------------

def test_triplet_is_trivial_at_zero(doubling, wide_path):
    t = solve_triplet(wide_path, doubling, 0.0)
    assert abs(t.lam - 1.0) <= 1e-12
    assert np.abs(t.h.values - 1.0).max() <= 1e-12
    # constant-Jacobian map: the Gibbs measure is Lebesgue
    npt.assert_allclose(t.nu_weights, 1.0 / 256, atol=1e-9)
    assert abs(t.nu_weights.sum() - 1.0) <= 1e-10
    assert abs(t.nu(t.h) - 1.0) <= 1e-9


def test_flat_kernel_nu_is_quadrature_weights():
    kernels = KernelFamily([("flat",)], doeblin_alpha=1.0, quad_size=32)
    spec = OperatorSpec.markov(kernels, ObservablePair([TrigPoly(cos=[1.0])]))
    path = sample_path(EnvModel(1), seed=3, n_past=60, n_future=60)
    weights = solve_nu(path, spec, 0.0, depth=20)
    npt.assert_allclose(weights, spec.grid.quad_weights, atol=1e-12)


def test_gibbs_triplet_weights(doubling, wide_path):
    t = gibbs_triplet(wide_path, doubling)
    w = t.mu_weights
    assert w.min() >= 0.0
    npt.assert_allclose(w.sum(), 1.0, atol=1e-14)
    npt.assert_allclose(w, 1.0 / 256, atol=1e-9)


def test_gibbs_pushforward_invariance(doubling):
    # mu_(next fiber)(g) equals mu_(this fiber)(g o T); on the uniform grid
    # g o T is an exact re-indexing for integer-slope maps.
    family = MapFamily([2, 3])
    field = ObservablePair([TrigPoly(cos=[1.0]), TrigPoly(sin=[0.5])])
    spec = OperatorSpec.transfer(family, field, grid_size=64)
    path = sample_path(EnvModel(2), seed=11, n_past=80, n_future=80)
    t0 = solve_triplet(path, spec, 0.0, depth=50)
    t1 = solve_triplet(path.shift(1), spec, 0.0, depth=57)
    m = family.slope(path.symbol(0))
    idx = (m * np.arange(64)) % 64
    # probes must be band-limited so that g o T is still resolved by the
    # grid quadrature (composition multiplies frequencies by the slope)
    x = np.arange(64) / 64
    rng = np.random.default_rng(0)
    for _ in range(5):
        coef = rng.standard_normal((2, 8))
        ks = 2 * np.pi * np.arange(1, 9)[:, None] * x[None, :]
        g = coef[0] @ np.cos(ks) + coef[1] @ np.sin(ks)
        lhs = t1.mu_weights @ g
        rhs = t0.mu_weights @ g[idx]
        assert abs(lhs - rhs) < 1e-9


# --------------------------------------------------------------------------
# eigendata away from zero: dense oracles
# --------------------------------------------------------------------------

def test_lambda_matches_dense_eigenvalue(doubling, wide_path):
    lam = lambda_of(wide_path, doubling, 0.1, depth=40)
    eigs = np.linalg.eigvals(dense_matrix(doubling.with_z(0.1), 0))
    lead = eigs[np.argmax(np.abs(eigs))]
    assert abs(lam - lead) < 1e-9


def test_solve_h_matches_dense_eigenvector(doubling, wide_path):
    h = solve_h(wide_path, doubling, 0.1, depth=40)
    mat = dense_matrix(doubling.with_z(0.1), 0)
    eigvals, eigvecs = np.linalg.eig(mat)
    vec = eigvecs[:, np.argmax(np.abs(eigvals))]
    vec = vec / (vec.mean())  # same unit-mean normalization as solve_h
    assert np.abs(h.values - vec).max() < 1e-8
    # successive coupling increments decay geometrically
    assert h.info["ratio"] <= 0.55


def test_solve_h_bounded_at_imaginary_z(doubling, wide_path):
    h = solve_h(wide_path, doubling, 0.05j)
    mods = np.abs(h.values)
    assert mods.min() > 0.5 and mods.max() < 2.0


def test_lambda_of_constant_observable(wide_path):
    c = 0.7
    spec = OperatorSpec.transfer(MapFamily([2]),
                                 ObservablePair([TrigPoly(const=c)]),
                                 grid_size=64)
    for z in (0.1, 0.05j, 0.1 * np.exp(1j * np.pi / 4)):
        lam = lambda_of(wide_path, spec, z, depth=25)
        assert abs(lam - np.exp(z * c)) < 1e-10


def test_triplet_positivity_at_real_z(doubling, wide_path):
    t = solve_triplet(wide_path, doubling, 0.1, depth=40)
    assert np.all(t.h.values.real > 0.0)
    assert np.abs(t.h.values.imag).max() < 1e-12
    assert t.nu_weights.real.min() >= -1e-12
    assert t.lam.real > 0.0


def test_conjugation_symmetry(doubling, wide_path):
    # real cocycle, real observable: lambda(it) = conj(lambda(-it))
    for t in (0.05, 0.1, 0.15):
        a = lambda_of(wide_path, doubling, 1j * t, depth=40)
        b = lambda_of(wide_path, doubling, -1j * t, depth=40)
        assert abs(a - np.conj(b)) < 1e-10


def test_cauchy_riemann_stencil(wide_path):
    # Four-point stencil analyticity proxy.  The dynamics commutes with
    # x -> -x, so for the odd observable sin(2 pi x) the weight process is
    # sign-symmetric, every odd cumulant vanishes, and lambda(z) is even:
    # the stencil residual is pure round-off.  For the cos observable the
    # third cumulant is 0.75, so the residual is the |lambda'''| r^2 / 3
    # truncation term and halving r must collapse it by about four (the
    # honest finite-difference analyticity check).
    def cr_residual(spec, r):
        lam = {z: lambda_of(wide_path, spec, z, depth=40)
               for z in (r, -r, 1j * r, -1j * r)}
        dx = (lam[r] - lam[-r]) / (2 * r)
        dy = (lam[1j * r] - lam[-1j * r]) / (2 * r)
        return abs(dy - 1j * dx)

    even = OperatorSpec.transfer(
        MapFamily([2]), ObservablePair([TrigPoly(sin=[1.0])]), grid_size=256)
    assert cr_residual(even, 0.05) < 1e-6

    skewed = OperatorSpec.transfer(
        MapFamily([2]), ObservablePair([TrigPoly(cos=[1.0])]), grid_size=256)
    r1 = cr_residual(skewed, 0.05)
    expected = 0.75 * 0.05 ** 2 / 3  # lambda'''(0) = 0.75 for this model
    assert abs(r1 - expected) < 0.05 * expected
    r2 = cr_residual(skewed, 0.025)
    assert 3.4 < r1 / r2 < 4.6  # collapses like r^2


# --------------------------------------------------------------------------
# pressure
# --------------------------------------------------------------------------

def test_pressure_trivial_values(wide_path, doubling):
    out = pressure(wide_path, doubling, [0.0])
    assert out[0] == 0.0
    c = 0.7
    spec = OperatorSpec.transfer(MapFamily([2]),
                                 ObservablePair([TrigPoly(const=c)]),
                                 grid_size=64)
    zs = np.linspace(0.0, 0.15, 6)
    npt.assert_allclose(pressure(wide_path, spec, zs, depth=25), zs * c,
                        atol=1e-10)


def test_pressure_circle_matches_dense_logs(wide_path, doubling):
    angles = np.linspace(0.0, 2 * np.pi, 17)
    zs = [0.0, 0.025, 0.05, 0.1] + [0.1 * np.exp(1j * a) for a in angles]
    pis = pressure(wide_path, doubling, zs, depth=40)
    for z, p in zip(zs[4:], pis[4:]):
        eigs = np.linalg.eigvals(dense_matrix(doubling.with_z(z), 0))
        lead = eigs[np.argmax(np.abs(eigs))]
        assert abs(np.exp(p) - lead) < 1e-8


def test_pressure_requires_zero_start(wide_path, doubling):
    with pytest.raises(ConfigError):
        pressure(wide_path, doubling, [0.05, 0.1])


def test_pressure_branch_jump_detected(wide_path):
    # constant observable with a large value: the eigenvalue argument
    # rotates by 2 radians between curve points, which is ambiguous
    spec = OperatorSpec.transfer(MapFamily([2]),
                                 ObservablePair([TrigPoly(const=40.0)]),
                                 grid_size=64)
    with pytest.raises(BranchError):
        pressure(wide_path, spec, [0.0, 0.05j, 0.1j], depth=20)


# --------------------------------------------------------------------------
# identity verification
# --------------------------------------------------------------------------

def test_verify_identities_at_zero(doubling, wide_path):
    t0 = solve_triplet(wide_path, doubling, 0.0, depth=40)
    t1 = solve_triplet(wide_path.shift(1), doubling, 0.0, depth=47)
    res = verify_rpf_identities(wide_path, doubling, t0, t1)
    assert max(res) < 1e-10


def test_verify_identities_deep_and_truncated(doubling, wide_path):
    z = 0.05j
    deep0 = solve_triplet(wide_path, doubling, z, depth=60)
    deep1 = solve_triplet(wide_path.shift(1), doubling, z, depth=53)
    deep = verify_rpf_identities(wide_path, doubling, deep0, deep1)
    assert max(deep) < 1e-8

    # deliberately truncated solves leave residuals at the contraction
    # scale; deepening the truncation shrinks them geometrically
    def truncated(depth):
        a = solve_triplet(wide_path, doubling, z, depth=depth, tol=0.9)
        b = solve_triplet(wide_path.shift(1), doubling, z, depth=depth + 1,
                          tol=0.9)
        return verify_rpf_identities(wide_path, doubling, a, b)

    r3 = truncated(3)
    r6 = truncated(6)
    assert max(r3) > 100 * max(deep)
    assert max(r6) < 0.5 * max(r3)


def test_verify_identities_markov_direction(vonmises):
    path = sample_path(EnvModel(1), seed=5, n_past=120, n_future=120)
    t0 = solve_triplet(path, vonmises, 0.05, depth=45)
    t1 = solve_triplet(path.shift(-1), vonmises, 0.05, depth=52)
    res = verify_rpf_identities(path, vonmises, t0, t1)
    assert max(res) < 1e-8


def test_verify_identities_validates_z(doubling, wide_path):
    t0 = solve_triplet(wide_path, doubling, 0.0, depth=30)
    t1 = solve_triplet(wide_path.shift(1), doubling, 0.05, depth=30)
    with pytest.raises(ConfigError):
        verify_rpf_identities(wide_path, doubling, t0, t1)


# --------------------------------------------------------------------------
# contraction estimation
# --------------------------------------------------------------------------

def test_contraction_doubling_matches_dense_second_eigenvalue(doubling,
                                                              wide_path):
    est = estimate_contraction(wide_path, doubling, 0.0, range(4, 25, 4))
    mat = _interval_pl_transfer_matrix(doubling, 0, 0.0, 128)
    second = np.sort(np.abs(np.linalg.eigvals(mat)))[-2]
    assert abs(second - 0.5) < 1e-10  # the slow mode is exact in this basis
    assert est.valid
    assert abs(est.delta - second) < 0.05
    assert est.r_squared > 0.99


def test_contraction_rank_one_sentinel():
    kernels = KernelFamily([("flat",)], doeblin_alpha=1.0, quad_size=32)
    spec = OperatorSpec.markov(kernels, ObservablePair([TrigPoly(cos=[1.0])]))
    path = sample_path(EnvModel(1), seed=1, n_past=120, n_future=120)
    est = estimate_contraction(path, spec, 0.0, [2, 4, 6, 8, 10])
    assert est.valid
    assert est.delta < 1e-300
    assert "rank-one" in est.note


def test_contraction_vonmises_matches_kernel_spectrum(vonmises):
    path = sample_path(EnvModel(1), seed=2, n_past=120, n_future=120)
    est = estimate_contraction(path, vonmises, 0.0, range(4, 25, 4))
    expected = special.iv(1, 1.0) / special.i0(1.0)
    assert est.valid
    assert abs(est.delta - expected) < 0.02
    assert est.r_squared > 0.99


def test_contraction_mixed_environment(wide_path):
    family = MapFamily([2, 3])
    field = ObservablePair([TrigPoly(cos=[1.0]), TrigPoly(sin=[0.5])])
    spec = OperatorSpec.transfer(family, field, grid_size=64)
    path = sample_path(EnvModel(2), seed=7, n_past=150, n_future=150)
    est = estimate_contraction(path, spec, 0.0, range(4, 25, 4))
    assert est.valid
    assert est.delta <= 0.5
    assert est.r_squared > 0.95


def test_contraction_flags_too_deep_range(doubling, wide_path):
    # every residual but the first sits below the round-off floor: no fit
    est = estimate_contraction(wide_path, doubling, 0.0, [35, 50, 55, 60, 65])
    assert not est.valid
    assert "floor" in est.note


def test_contraction_validates_range(doubling, wide_path):
    with pytest.raises(ConfigError):
        estimate_contraction(wide_path, doubling, 0.0, [5, 10, 15, 20])
    with pytest.raises(ConfigError):
        estimate_contraction(wide_path, doubling, 0.0, [0, 5, 10, 15, 20])


def test_solver_rate_matches_contraction_markov(vonmises):
    # In the Markov variant the solver iterates and the contraction run
    # live in the same discretization, so the coupling-decay ratio of the
    # eigenfunction solve matches the fitted delta.
    path = sample_path(EnvModel(1), seed=2, n_past=120, n_future=120)
    h = solve_h(path, vonmises, 0.05, depth=40)
    est = estimate_contraction(path, vonmises, 0.05, range(4, 25, 4))
    assert est.valid
    assert abs(h.info["ratio"] - est.delta) / est.delta < 0.2


# --------------------------------------------------------------------------
# guards and diagnostics
# --------------------------------------------------------------------------

def test_solver_validation(doubling, wide_path):
    with pytest.raises(ConfigError):
        solve_h(wide_path, doubling, 0.5)  # outside the analyticity radius
    with pytest.raises(ConfigError):
        solve_h(wide_path, doubling, 0.1, tol=2.0)
    with pytest.raises(ConfigError):
        solve_h(wide_path, doubling, 0.1, depth=0)
    with pytest.raises(ConvergenceError):
        solve_h(wide_path, doubling, 0.1, depth=3, tol=1e-10)


def test_reject_small_spectral_gap(doubling, vonmises):
    gaps = reject_small_spectral_gap(doubling)
    assert gaps[0] > 0.9
    gaps = reject_small_spectral_gap(vonmises)
    expected = 1.0 - special.iv(1, 1.0) / special.i0(1.0)
    assert abs(gaps[0] - expected) < 1e-6
    # strongly concentrated kernel: second modulus I1/I0 ~ 1 - 1/(2 kappa),
    # so the gap falls under the threshold and the model is rejected
    slow = KernelFamily([("vonmises", 20.0, 0.0)], doeblin_alpha=1e-17,
                        quad_size=64)
    slow_spec = OperatorSpec.markov(slow, ObservablePair([TrigPoly(cos=[1.0])]))
    with pytest.raises(ConfigError):
        reject_small_spectral_gap(slow_spec)


def test_dump_triplets_csv(tmp_path, doubling, wide_path):
    t0 = solve_triplet(wide_path, doubling, 0.05j, depth=40)
    out = tmp_path / "triplets.csv"
    dump_triplets_csv([(0, t0)], str(out))
    data = np.loadtxt(out, delimiter=",", skiprows=1)
    assert data.shape == (256, 11)
    npt.assert_allclose(data[:, 5] + 1j * data[:, 6], t0.h.values, atol=1e-15)
    npt.assert_allclose(data[:, 7] + 1j * data[:, 8], t0.nu_weights,
                        atol=1e-15)
    npt.assert_allclose(data[0, 9] + 1j * data[0, 10], t0.log_lambda,
                        atol=1e-15)
