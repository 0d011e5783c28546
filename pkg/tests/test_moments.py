"""Pressure jets, moment combinatorics, and empirical moment routes.

Frozen oracles:

* doubling map with ``u = cos(2 pi x)``: variance rate 1/2, third-cumulant
  rate 3/4 (hand computation via the two-term autocorrelation of the
  doubling map), ``gamma_{2,n} = 1/2`` and ``E S_n^3 = 0.75 (n-1)``
  exactly at every n, fourth moment ``E S_n^4 = 0.75 n^2 + 1.125 n - 3``
  for n beyond the mixing scale;
* doubling with ``u = cos(2 pi x) + cos(4 pi x)``: variance rate 2,
  boundary correction ``(ln W)'' = -1``, hence ``gamma_{2,n} = 2 - 1/n``
  exactly;
* two-symbol amplitude model ``u_s = a_s cos(2 pi x)``: the per-fiber
  second pressure derivative is ``a^2/2`` for the amplitude at that fiber,
  independent of the rest of the path;
* von Mises Markov kernel with concentration kappa: one-step correlation
  of ``cos(2 pi x)`` is ``rho = I_1(kappa)/I_0(kappa)``, so the variance
  rate is the standard autocorrelation sum ``(1/2)(1+rho)/(1-rho)``;
* the partition formula is checked against Cauchy-circle derivatives of
  an explicitly constructed entire function (FFT oracle, no shared code
  path).
"""

import math

import numpy as np
import pytest
from scipy import special

from rpflab.dynamics import MapFamily, ObservablePair, TrigPoly
from rpflab.env import EnvModel, sample_path
from rpflab.errors import (BranchError, ConfigError, ConvergenceError,
                           DegenerateModelError)
from rpflab.moments import (MomentEstimate, PressureJet, asymptotic_moment,
                            build_moment_report, empirical_moment,
                            empirical_moments, faa_di_bruno_lambda_derivative,
                            gamma_index_sets, jet_at_zero, mc_moments,
                            moment_rate_experiment, write_moment_csv)
from rpflab.operators import KernelFamily, OperatorSpec


@pytest.fixture(scope="module")
def wide_path():
    return sample_path(EnvModel(1), seed=0, n_past=150, n_future=260)


@pytest.fixture(scope="module")
def doubling_spec():
    return OperatorSpec.transfer(
        MapFamily([2]), ObservablePair([TrigPoly(cos=[1.0])]), grid_size=256)


@pytest.fixture(scope="module")
def cos4_spec():
    return OperatorSpec.transfer(
        MapFamily([2]), ObservablePair([TrigPoly(cos=[1.0, 1.0])]),
        grid_size=256)


@pytest.fixture(scope="module")
def doubling_jet(wide_path, doubling_spec):
    return jet_at_zero(wide_path, doubling_spec, order=6, fibers=4)


def synthetic_jet(pi_row, order, w_row=None):
    pi = np.zeros((1, order + 1), dtype=complex)
    pi[0, :len(pi_row)] = pi_row
    w = np.zeros((1, order + 1), dtype=complex)
    if w_row is not None:
        w[0, :len(w_row)] = w_row
    return PressureJet(radius=0.05, points=64, order=order, pi_derivs=pi,
                       w_derivs=w, pi_errors=np.zeros(order + 1),
                       w_errors=np.zeros(order + 1))


# --------------------------------------------------------------------------
# partition index sets
# --------------------------------------------------------------------------

def test_gamma_index_sets_small_tables():
    assert gamma_index_sets(4, 2) == [(2, 0, 0)]
    assert gamma_index_sets(5, 2) == [(1, 1, 0, 0)]
    assert gamma_index_sets(6, 2) == [(0, 2, 0, 0, 0), (1, 0, 1, 0, 0)]
    assert gamma_index_sets(6, 3) == [(3, 0, 0, 0, 0)]
    assert gamma_index_sets(7, 3) == [(2, 1, 0, 0, 0, 0)]
    assert gamma_index_sets(8, 2) == [(0, 0, 2, 0, 0, 0, 0),
                                      (0, 1, 0, 1, 0, 0, 0),
                                      (1, 0, 0, 0, 1, 0, 0)]


def test_gamma_index_sets_structure():
    for j in range(2, 9):
        seen = set()
        for s in range(1, j // 2 + 1):
            sets = gamma_index_sets(j, s)
            assert sets, f"no partitions of {j} into {s} parts"
            for m in sets:
                assert len(m) == j - 1
                assert sum((l + 2) * v for l, v in enumerate(m)) == j
                assert sum(m) == s
                assert m not in seen
                seen.add(m)
        # extreme part counts are unique
        if j % 2 == 0:
            top = gamma_index_sets(j, j // 2)
            assert top == [tuple([j // 2] + [0] * (j - 2))]


def test_gamma_index_sets_validation():
    with pytest.raises(ConfigError):
        gamma_index_sets(1, 1)
    with pytest.raises(ConfigError):
        gamma_index_sets(4, 0)
    with pytest.raises(ConfigError):
        gamma_index_sets(4, 3)


# --------------------------------------------------------------------------
# partition formula vs an independent Cauchy oracle
# --------------------------------------------------------------------------

def test_faa_di_bruno_matches_cauchy_on_synthetic_jet():
    rng = np.random.default_rng(7)
    d = np.zeros(7, dtype=complex)
    d[2:] = rng.normal(size=5)
    d[2] = abs(d[2]) + 1.0
    jet = synthetic_jet(d, order=6)
    n = 37
    m_pts, r = 256, 0.05
    zs = r * np.exp(2j * np.pi * np.arange(m_pts) / m_pts)
    g = sum(d[l] * zs ** l / math.factorial(l) for l in range(2, 7))
    coeffs = np.fft.fft(np.exp(n * g)) / m_pts
    for j in range(7):
        oracle = math.factorial(j) * coeffs[j] / r ** j
        mine = faa_di_bruno_lambda_derivative(jet, n, j)
        assert abs(mine - oracle) <= 1e-10 * max(1.0, abs(oracle))


def test_faa_di_bruno_low_orders_closed_form():
    a, b = 0.8, -0.3
    jet = synthetic_jet([0.0, 0.0, a, 0.6, b], order=4)
    n = 25
    assert faa_di_bruno_lambda_derivative(jet, n, 0) == 1.0
    assert faa_di_bruno_lambda_derivative(jet, n, 1) == 0.0
    assert abs(faa_di_bruno_lambda_derivative(jet, n, 2) - n * a) < 1e-12
    assert abs(faa_di_bruno_lambda_derivative(jet, n, 3) - n * 0.6) < 1e-12
    expect4 = 3 * n ** 2 * a ** 2 + n * b
    assert abs(faa_di_bruno_lambda_derivative(jet, n, 4) - expect4) < 1e-9


def test_faa_di_bruno_requires_centered_jet():
    jet = synthetic_jet([0.0, 0.7, 1.0], order=2)
    with pytest.raises(ConfigError):
        faa_di_bruno_lambda_derivative(jet, 10, 2)
    with pytest.raises(ConfigError):
        faa_di_bruno_lambda_derivative(synthetic_jet([0, 0, 1], 2), 10, 3)


# --------------------------------------------------------------------------
# jet extraction on frozen models
# --------------------------------------------------------------------------

def test_jet_doubling_cos_rates(doubling_jet):
    assert abs(doubling_jet.sigma2 - 0.5) <= 1e-10
    assert abs(doubling_jet.zeta - 0.75) <= 1e-9
    assert abs(doubling_jet.avg_pi(4) - 1.125) <= 1e-6
    # boundary pairing of this observable is flat through second order
    assert abs(doubling_jet.avg_w(1)) <= 1e-12
    assert abs(doubling_jet.avg_w(2)) <= 1e-12
    # two-radius agreement on the strictly checked orders
    assert doubling_jet.pi_errors[:5].max() <= 1e-8
    assert doubling_jet.w_errors[:5].max() <= 1e-8


def test_jet_cos_cos4_boundary(wide_path, cos4_spec):
    jet = jet_at_zero(wide_path, cos4_spec, order=4, fibers=3)
    assert abs(jet.sigma2 - 2.0) <= 1e-10
    assert abs(jet.avg_w(2) - (-1.0)) <= 1e-10


def test_jet_constant_observable(wide_path):
    spec = OperatorSpec.transfer(
        MapFamily([2]), ObservablePair([TrigPoly(const=0.7)]), grid_size=64)
    jet = jet_at_zero(wide_path, spec, order=4)
    assert abs(jet.avg_pi(1) - 0.7) <= 1e-9
    for l in (2, 3, 4):
        assert abs(jet.avg_pi(l)) <= 1e-7
        assert abs(jet.avg_w(l)) <= 1e-7


def test_jet_per_fiber_amplitude_oracle():
    path = sample_path(EnvModel(2), seed=9, n_past=100, n_future=100)
    spec = OperatorSpec.transfer(
        MapFamily([2, 2]),
        ObservablePair([TrigPoly(cos=[1.0]), TrigPoly(cos=[0.6])]),
        grid_size=128)
    jet = jet_at_zero(path, spec, order=3, fibers=12)
    amps = np.array([1.0, 0.6])
    expect = amps[[path.symbol(f) for f in range(12)]] ** 2 / 2
    assert np.abs(jet.pi_derivs[:, 2].real - expect).max() <= 1e-10
    assert np.abs(jet.pi_derivs[:, 2].imag).max() <= 1e-10


def test_jet_vonmises_autocorrelation_oracle():
    path = sample_path(EnvModel(1), seed=0, n_past=120, n_future=120)
    kern = KernelFamily([("vonmises", 1.0, 0.0)], doeblin_alpha=0.29,
                        quad_size=48)
    spec = OperatorSpec.markov(kern, ObservablePair([TrigPoly(cos=[1.0])]))
    jet = jet_at_zero(path, spec, order=3, fibers=4)
    rho = special.i1(1.0) / special.i0(1.0)
    assert abs(jet.sigma2 - 0.5 * (1 + rho) / (1 - rho)) <= 1e-9


def test_jet_validations(wide_path, doubling_spec):
    with pytest.raises(ConfigError):
        jet_at_zero(wide_path, doubling_spec, order=0)
    with pytest.raises(ConfigError):
        jet_at_zero(wide_path, doubling_spec, order=4, points=10)
    with pytest.raises(ConfigError):
        jet_at_zero(wide_path, doubling_spec, fibers=0)
    with pytest.raises(ConfigError):
        jet_at_zero(wide_path, doubling_spec, radius=0.15)  # 2r > rho
    with pytest.raises(ConfigError):
        jet_at_zero(wide_path, doubling_spec, tol=2.0)


def test_jet_shallow_depth_fails_convergence():
    path = sample_path(EnvModel(1), seed=0, n_past=60, n_future=60)
    kern = KernelFamily([("vonmises", 1.0, 0.0)], doeblin_alpha=0.29,
                        quad_size=48)
    spec = OperatorSpec.markov(kern, ObservablePair([TrigPoly(cos=[1.0])]))
    with pytest.raises(ConvergenceError):
        jet_at_zero(path, spec, order=3, depth=3, tol=1e-10)


def test_pressure_jet_validation():
    with pytest.raises(DegenerateModelError):
        synthetic_jet([0.0, 0.0, -1.0], order=2)
    with pytest.raises(DegenerateModelError):
        synthetic_jet([0.0, 0.0, 1.0 + 1e-3j], order=2)
    jet = synthetic_jet([0.0, 0.0, 1.0], order=2)
    with pytest.raises(ConfigError):
        jet.avg_pi(3)
    assert jet.n_fibers == 1


# --------------------------------------------------------------------------
# asymptotic moments: predictions and limits
# --------------------------------------------------------------------------

def test_asymptotic_moment_limit_table():
    sigma2, zeta = 0.7, 0.3
    jet = synthetic_jet([0.0, 0.0, sigma2, zeta] + [0.0] * 5, order=8)
    table = {
        2: sigma2,
        4: 3 * sigma2 ** 2,
        6: 15 * sigma2 ** 3,
        3: zeta,
        5: 10 * sigma2 * zeta,
        7: 105 * sigma2 ** 2 * zeta,
    }
    for k, expect in table.items():
        _, limit = asymptotic_moment(jet, k, 100)
        assert abs(limit - expect) <= 1e-12 * max(1.0, abs(expect))
    with pytest.raises(ConfigError):
        asymptotic_moment(jet, 1, 100)


def test_asymptotic_moment_prediction_matches_exact_law(wide_path, cos4_spec,
                                                        doubling_jet):
    jet4 = jet_at_zero(wide_path, cos4_spec, order=4, fibers=3)
    for n in (1, 5, 50, 500):
        pred, limit = asymptotic_moment(jet4, 2, n)
        assert abs(pred - (2.0 - 1.0 / n)) <= 1e-10
        assert abs(limit - 2.0) <= 1e-10
    for n in (2, 10, 100):
        pred, _ = asymptotic_moment(doubling_jet, 3, n)
        assert abs(pred - 0.75 * (n - 1) / n) <= 1e-9


def test_asymptotic_moment_prediction_matches_sweep(wide_path, doubling_spec,
                                                    doubling_jet):
    # the order-4 prediction needs the fourth boundary derivative too;
    # past the mixing scale it must agree with the measured moment exactly
    vals, _ = empirical_moments(wide_path, doubling_spec, [4], [30, 80])
    for n in (30, 80):
        pred, _ = asymptotic_moment(doubling_jet, 4, n)
        assert abs(pred - vals[(4, n)]) <= 1e-9


def test_asymptotic_moment_validations(doubling_jet):
    with pytest.raises(ConfigError):
        asymptotic_moment(doubling_jet, 2, 0)
    with pytest.raises(ConfigError):
        asymptotic_moment(doubling_jet, 8, 10)  # beyond jet order
    with pytest.raises(ConfigError):
        asymptotic_moment(synthetic_jet([0, 0, 1.0], 2), 3, 10)


# --------------------------------------------------------------------------
# empirical moments: operator route
# --------------------------------------------------------------------------

def test_operator_moments_doubling_exact(wide_path, doubling_spec):
    vals, diag = empirical_moments(wide_path, doubling_spec, [1, 2, 3],
                                   [1, 5, 50, 200])
    for n in (1, 5, 50, 200):
        assert abs(vals[(1, n)]) <= 1e-10          # centered first moment
        assert abs(vals[(2, n)] - 0.5) <= 1e-12    # variance, every n
        expect3 = 0.75 * (n - 1) / n
        assert abs(vals[(3, n)] - expect3) <= 1e-10
        assert diag[(2, n)] <= 1e-10


def test_operator_moments_boundary_correction(wide_path, cos4_spec):
    vals, _ = empirical_moments(wide_path, cos4_spec, [2], [1, 5, 50, 200])
    for n in (1, 5, 50, 200):
        assert abs(vals[(2, n)] - (2.0 - 1.0 / n)) <= 1e-12


def test_operator_moments_markov_flat_kernel():
    path = sample_path(EnvModel(1), seed=0, n_past=120, n_future=20)
    kern = KernelFamily([("vonmises", 0.0, 0.0)], doeblin_alpha=1.0,
                        quad_size=48)
    spec = OperatorSpec.markov(kern, ObservablePair([TrigPoly(cos=[1.0])]))
    vals, _ = empirical_moments(path, spec, [2, 4], [1, 5, 50])
    for n in (1, 5, 50):
        assert abs(vals[(2, n)] - 0.5) <= 1e-10
        expect4 = (3 * n / 8 + 3 * n * (n - 1) / 4) / n ** 2
        assert abs(vals[(4, n)] - expect4) <= 1e-8


def test_operator_moments_markov_jet_consistency():
    # finite-n prediction (eigenvalue product times boundary pairing)
    # against the measured moment, for a genuinely correlated chain
    path = sample_path(EnvModel(1), seed=0, n_past=160, n_future=60)
    kern = KernelFamily([("vonmises", 1.0, 0.0)], doeblin_alpha=0.29,
                        quad_size=48)
    spec = OperatorSpec.markov(kern, ObservablePair([TrigPoly(cos=[1.0])]))
    jet = jet_at_zero(path, spec, order=2, fibers=2)
    vals, _ = empirical_moments(path, spec, [2], [40, 80])
    for n in (40, 80):
        pred, _ = asymptotic_moment(jet, 2, n)
        assert abs(pred - vals[(2, n)]) <= 1e-8


def test_gaussian_moment_ratios_large_n():
    path = sample_path(EnvModel(1), seed=0, n_past=20, n_future=2100)
    spec = OperatorSpec.transfer(
        MapFamily([2]), ObservablePair([TrigPoly(cos=[1.0])]), grid_size=256)
    vals, _ = empirical_moments(path, spec, [2, 4, 6], [2000])
    g2, g4, g6 = (vals[(k, 2000)] for k in (2, 4, 6))
    assert abs(g4 / g2 ** 2 - 3.0) <= 0.1
    assert abs(g6 / g2 ** 3 - 15.0) <= 1.0


def test_zero_observable_gives_zero_moments(wide_path):
    spec = OperatorSpec.transfer(MapFamily([2]), ObservablePair([TrigPoly()]),
                                 grid_size=64)
    vals, _ = empirical_moments(wide_path, spec, [1, 2, 3, 4], [10])
    assert all(v == 0.0 for v in vals.values())
    jet = jet_at_zero(wide_path, spec, order=4)
    assert jet.sigma2 == 0.0


def test_operator_moments_validations(wide_path, doubling_spec):
    with pytest.raises(ConfigError):
        empirical_moments(wide_path, doubling_spec, [0], [10])
    with pytest.raises(ConfigError):
        empirical_moments(wide_path, doubling_spec, [2], [0])
    with pytest.raises(ConfigError):
        empirical_moments(wide_path, doubling_spec, [8], [10], points=16)
    with pytest.raises(ConfigError):
        empirical_moments(wide_path, doubling_spec, [2], [10], radius=0.0)


# --------------------------------------------------------------------------
# Monte-Carlo route and route equivalence
# --------------------------------------------------------------------------

def test_route_equivalence_within_bootstrap_error(wide_path, doubling_spec):
    rng = np.random.default_rng(11)
    est = mc_moments(wide_path, doubling_spec, [2, 3, 4], 50, 50_000, rng)
    vals, _ = empirical_moments(wide_path, doubling_spec, [2, 3, 4], [50])
    for k in (2, 3, 4):
        z = abs(vals[(k, 50)] - est[k].value) / est[k].se
        assert z <= 3.0, f"k={k}: z={z:.2f}"
        assert est[k].ci_lo <= est[k].value <= est[k].ci_hi


def test_mc_small_sample_direct_bootstrap(wide_path, doubling_spec):
    rng = np.random.default_rng(3)
    est = mc_moments(wide_path, doubling_spec, [2], 30, 1000, rng)[2]
    assert est.ci_lo < est.value < est.ci_hi
    assert 0.3 < est.value < 0.7
    assert est.samples == 1000


def test_mc_requires_transfer_variant():
    path = sample_path(EnvModel(1), seed=0, n_past=60, n_future=10)
    kern = KernelFamily([("vonmises", 0.0, 0.0)], doeblin_alpha=1.0,
                        quad_size=32)
    spec = OperatorSpec.markov(kern, ObservablePair([TrigPoly(cos=[1.0])]))
    with pytest.raises(ConfigError):
        mc_moments(path, spec, [2], 10, 1000, np.random.default_rng(0))


def test_empirical_moment_wrapper(wide_path, doubling_spec):
    est = empirical_moment(wide_path, doubling_spec, 2, 100)
    assert est.method == "operator-jet"
    assert abs(est.value - 0.5) <= 1e-10
    assert est.ci_lo <= est.value <= est.ci_hi
    mc = empirical_moment(wide_path, doubling_spec, 2, 100,
                          method="monte-carlo", samples=5000,
                          rng=np.random.default_rng(4))
    assert abs(mc.value - 0.5) <= 0.1
    flagged = empirical_moment(wide_path, doubling_spec, 2, 100,
                               method="monte-carlo", samples=5000,
                               rng=np.random.default_rng(4), tolerance=1e-9)
    assert flagged.inconclusive
    with pytest.raises(ConfigError):
        empirical_moment(wide_path, doubling_spec, 2, 100, method="guess")
    with pytest.raises(ConfigError):
        empirical_moment(wide_path, doubling_spec, 2, 100,
                         method="monte-carlo")


# --------------------------------------------------------------------------
# reports and rate experiments
# --------------------------------------------------------------------------

def test_moment_report_csv_roundtrip_and_stability(tmp_path, wide_path,
                                                   doubling_spec,
                                                   doubling_jet):
    rep = build_moment_report(wide_path, doubling_spec, 2, [10, 50, 100],
                              doubling_jet, mc_samples=5000,
                              rng=np.random.default_rng(5))
    f1, f2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_moment_csv([rep], str(f1))
    write_moment_csv([rep], str(f2))
    assert f1.read_bytes() == f2.read_bytes()
    data = np.genfromtxt(f1, delimiter=",", names=True)
    assert data.dtype.names == ("k", "n", "gamma_kn_operator", "gamma_kn_mc",
                                "mc_ci_lo", "mc_ci_hi", "gamma_k_pred")
    assert np.allclose(data["gamma_kn_operator"], rep.operator_values,
                       rtol=0, atol=0)
    assert np.allclose(data["gamma_k_pred"], 0.5, atol=1e-10)
    assert rep.sigma2 == doubling_jet.sigma2


def test_rate_experiment_deterministic_boundary_term(wide_path, cos4_spec):
    rep = moment_rate_experiment([wide_path], cos4_spec, 2,
                                 [25, 50, 100, 200], gamma_limit=2.0)
    assert abs(rep.slope - (-1.0)) <= 0.02
    assert rep.r_squared > 0.999


def test_rate_experiment_random_environment():
    spec = OperatorSpec.transfer(
        MapFamily([2, 2]),
        ObservablePair([TrigPoly(cos=[1.0]), TrigPoly(cos=[0.6])]),
        grid_size=128)
    paths = [sample_path(EnvModel(2), seed=s, n_past=20, n_future=420)
             for s in range(12)]
    rep = moment_rate_experiment(paths, spec, 2, [25, 50, 100, 200, 400],
                                 gamma_limit=0.34)
    assert -0.65 <= rep.slope <= -0.45
    assert rep.errors.shape == (12, 5)


def test_rate_experiment_auto_limit_is_ensemble_proxy():
    spec = OperatorSpec.transfer(
        MapFamily([2, 2]),
        ObservablePair([TrigPoly(cos=[1.0]), TrigPoly(cos=[0.6])]),
        grid_size=128)
    paths = [sample_path(EnvModel(2), seed=s, n_past=80, n_future=220)
             for s in range(6)]
    rep = moment_rate_experiment(paths, spec, 2, [25, 50, 100, 200])
    assert abs(rep.gamma_limit - 0.34) <= 0.06


def test_rate_experiment_validations(wide_path, doubling_spec):
    with pytest.raises(ConfigError):
        moment_rate_experiment([], doubling_spec, 2, [10, 20, 40])
    with pytest.raises(ConfigError):
        moment_rate_experiment([wide_path], doubling_spec, 1, [10, 20, 40])
    with pytest.raises(ConfigError):
        moment_rate_experiment([wide_path], doubling_spec, 2, [10, 20])
