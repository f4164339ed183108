from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from scipy.linalg import eigh_tridiagonal

from liftlab.model import TestFunction, double_well_potential, quadratic_potential
from liftlab.samplers import circle_chains
from liftlab.spectral import (
    CrossingError,
    DecayCurve,
    GalerkinError,
    PersistenceWarning,
    assemble_galerkin,
    circle_mixing_times,
    critical_langevin_norm,
    eigenvalues,
    empirical_decay,
    estimate_poincare_constant,
    exponential_curve,
    gaussian_decay_curve,
    gaussian_propagator_norm,
    langevin_gap,
    loglog_slope,
    operator_norm_decay,
    relaxation_time,
    scale_relaxation,
    singular_value_gap,
    spectral_gap,
    spectral_report,
    tv_mixing_time,
)

GAUSS = quadratic_potential(1.0)
EPS = math.exp(-1)
GAMMAS = (0.5, 1.0, 2.0, 4.0)


@pytest.fixture(scope="module")
def overdamped():
    return assemble_galerkin("overdamped", GAUSS)


@pytest.fixture(scope="module")
def langevin():
    return {g: assemble_galerkin("langevin", GAUSS, g) for g in GAMMAS}


# ---------------------------------------------------------------------------
# Gaussian closed forms


def test_propagator_norm_examples():
    for g in (0.0, 1.0, 3.0):
        assert gaussian_propagator_norm(g, 0.0) == pytest.approx(1.0, abs=1e-15)
    assert gaussian_propagator_norm(2.0, 1.0) == pytest.approx(math.exp(-1) * (1 + math.sqrt(2)), rel=1e-12)
    assert gaussian_propagator_norm(2.0, 1.0) == pytest.approx(0.888140, abs=5e-7)
    assert gaussian_propagator_norm(2.0, 2.73) <= EPS


def test_propagator_norm_matches_critical_closed_form():
    ts = np.linspace(0, 10, 101)
    got = np.array([gaussian_propagator_norm(2.0, t) for t in ts])
    assert np.max(np.abs(got / critical_langevin_norm(ts) - 1)) < 1e-10


def test_langevin_gap_examples():
    assert langevin_gap(2.0) == 1.0
    assert langevin_gap(1.0) == 0.5
    assert langevin_gap(4.0) == pytest.approx(2 - math.sqrt(3), abs=1e-15)
    with pytest.raises(ValueError):
        langevin_gap(-1.0)


@pytest.mark.parametrize("g", [0.3, 1.0, 2.0, 2.5, 6.0])
def test_langevin_gap_matches_drift_eigenvalues(g):
    lam = np.linalg.eigvals(np.array([[0.0, -1.0], [1.0, g]]))
    assert langevin_gap(g) == pytest.approx(lam.real.min(), abs=1e-7)


def test_scale_relaxation_examples():
    assert scale_relaxation(2.5, 1.0) == 2.5
    assert scale_relaxation(2.5, 4.0) == 1.25
    assert scale_relaxation(2.5, 0.25) == 5.0
    with pytest.raises(ValueError):
        scale_relaxation(1.0, 0.0)


@pytest.mark.parametrize("m", [0.25, 4.0, 9.0])
def test_scale_relaxation_against_rescaled_drift(m):
    grid = np.arange(0, 12, 0.01)
    base = relaxation_time(gaussian_decay_curve(2.0, grid), EPS)
    direct = relaxation_time(gaussian_decay_curve(2 * math.sqrt(m), grid / math.sqrt(m), m), EPS)
    assert direct == pytest.approx(scale_relaxation(base, m), abs=1e-8)


# ---------------------------------------------------------------------------
# Galerkin assembly


def _index(G, elem):
    return G.basis.index(elem)


@pytest.mark.parametrize("g", [0.0, 0.7, 2.0])
def test_langevin_two_by_two_block(g):
    G = assemble_galerkin("langevin", GAUSS, g)
    ix, iv = _index(G, (1, 0)), _index(G, (0, 1))
    block = G.matrix[np.ix_([ix, iv], [ix, iv])]
    # L x = v, L v = -x - g v
    assert np.max(np.abs(block - np.array([[0.0, -1.0], [1.0, -g]]))) < 1e-12
    others = np.delete(G.matrix[:, [ix, iv]], [ix, iv], axis=0)
    assert np.max(np.abs(others)) < 1e-12
    assert np.allclose(np.sort_complex(np.linalg.eigvals(-block)), np.sort_complex(np.roots([1, -g, 1])), atol=1e-7)


def test_overdamped_gaussian_is_diagonal(overdamped):
    M = overdamped.matrix
    assert np.max(np.abs(M - np.diag(np.diag(M)))) < 1e-12
    assert np.allclose(np.diag(M), -np.arange(1, 17) / 2, atol=1e-12)


def test_rhmc_refresh_entry():
    a = assemble_galerkin("rhmc", GAUSS, 3.0)
    b = assemble_galerkin("rhmc", GAUSS, 0.0)
    diff = a.matrix - b.matrix
    i = _index(a, (0, 1))
    assert diff[i, i] == pytest.approx(-3.0, abs=1e-15)
    v_degree = np.array([k for _, k in a.basis])
    assert np.array_equal(np.diag(diff), np.where(v_degree >= 1, -3.0, 0.0))
    assert np.count_nonzero(diff - np.diag(np.diag(diff))) == 0


def test_constants_excluded(langevin):
    G = langevin[1.0]
    assert (0, 0) not in G.basis and G.size == 17 * 17 - 1


def test_parity_blocks_found(langevin):
    assert sorted(len(b) for b in langevin[2.0].blocks) == [144, 144]


def test_assembly_rejects_bad_input():
    with pytest.raises(ValueError):
        assemble_galerkin("bps", GAUSS)
    with pytest.raises(ValueError):
        assemble_galerkin("langevin", GAUSS, 1.0, degree=1)
    with pytest.raises(ValueError):
        assemble_galerkin("langevin", GAUSS, -1.0)
    with pytest.raises(ValueError):
        assemble_galerkin("langevin", quadratic_potential(1.0, d=2), 1.0)


def test_ill_conditioned_basis_rejected():
    with pytest.raises(GalerkinError):
        assemble_galerkin("overdamped", double_well_potential(0.5), degree=40, quadrature_nodes=30)


# ---------------------------------------------------------------------------
# decay curves and relaxation times


def test_decay_curve_invariants():
    with pytest.raises(ValueError):
        DecayCurve(np.array([0.0, 0.0]), np.array([1.0, 0.5]), "galerkin")
    with pytest.raises(ValueError):
        DecayCurve(np.array([0.0, 1.0]), np.array([1.0, -0.5]), "galerkin")


def test_galerkin_curve_starts_at_one(langevin):
    curve = operator_norm_decay(langevin[1.0], np.linspace(0, 1, 11), check_convergence=False)
    assert abs(curve.values[0] - 1) < 1e-10
    with pytest.raises(ValueError):
        operator_norm_decay(langevin[1.0], np.linspace(0.1, 1, 10))


def test_overdamped_decay_is_exponential(overdamped):
    grid = np.arange(0, 5.001, 0.05)
    curve = operator_norm_decay(overdamped, grid)
    assert np.max(np.abs(curve.values - np.exp(-grid / 2))) < 1e-12
    assert curve.converged


def test_critical_langevin_galerkin_matches_closed_form(langevin):
    grid = np.arange(0, 5.001, 0.01)
    curve = operator_norm_decay(langevin[2.0], grid)
    assert np.max(np.abs(curve.values - critical_langevin_norm(grid))) < 1e-6
    assert curve.converged


def test_relaxation_time_examples(overdamped, langevin):
    grid = np.arange(0, 10, 0.01)
    assert relaxation_time(operator_norm_decay(overdamped, grid, False), EPS) == pytest.approx(2.0, abs=1e-6)
    crit = relaxation_time(operator_norm_decay(langevin[2.0], grid, False), EPS)
    assert crit == pytest.approx(2.7296, abs=1e-3) and crit <= 2.73
    assert relaxation_time(gaussian_decay_curve(2.0, grid), 1.0) == 0.0


def test_relaxation_time_errors_and_persistence():
    grid = np.arange(0, 1, 0.1)
    with pytest.raises(CrossingError):
        relaxation_time(exponential_curve(0.1, grid), 0.5)
    with pytest.raises(ValueError):
        relaxation_time(exponential_curve(1.0, grid), 0.0)
    bumpy = DecayCurve(np.array([0.0, 1.0, 2.0, 3.0]), np.array([1.0, 0.3, 0.5, 0.2]), "empirical")
    with pytest.warns(PersistenceWarning):
        t = relaxation_time(bumpy, 0.4)
    assert 0 < t < 1


def test_relaxation_times_non_increasing_in_eps():
    grid = np.arange(0, 20, 0.02)
    curve = gaussian_decay_curve(1.0, grid)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PersistenceWarning)
        times = [relaxation_time(curve, e) for e in (0.05, 0.1, 0.2, EPS, 0.6, 0.9, 1.0)]
    assert all(a >= b for a, b in zip(times, times[1:]))


@pytest.mark.parametrize("g", [1.0, 2.0, 4.0])
def test_submultiplicativity(langevin, g):
    grid = np.arange(0, 4.001, 0.1)
    v = operator_norm_decay(langevin[g], grid, False).values
    n = grid.size
    for i in range(n):
        for j in range(n - i):
            assert v[i + j] <= v[i] * v[j] + 1e-8


# ---------------------------------------------------------------------------
# gaps


def test_overdamped_reversible_identities(overdamped):
    assert singular_value_gap(overdamped) == pytest.approx(0.5, abs=1e-10)
    assert spectral_gap(overdamped) == pytest.approx(0.5, abs=1e-10)
    curve = operator_norm_decay(overdamped, np.arange(0, 15, 0.01), False)
    for eps in (0.05, 0.2, EPS, 0.8):
        assert relaxation_time(curve, eps) == pytest.approx(2 * math.log(1 / eps), abs=1e-6)


@pytest.mark.parametrize("g", GAMMAS)
def test_langevin_sing_bounded_by_sqrt_two_gap(langevin, g):
    assert singular_value_gap(langevin[g]) <= 1 + 1e-6


@pytest.mark.parametrize("g", GAMMAS)
def test_gap_matches_eigenvalues(langevin, g):
    assert abs(spectral_gap(langevin[g]) - langevin_gap(g)) < 1e-8


@pytest.mark.parametrize("g", GAMMAS)
def test_sing_below_every_eigenvalue_modulus(langevin, g):
    lam = eigenvalues(langevin[g])
    assert singular_value_gap(langevin[g]) <= np.min(np.abs(lam)) + 1e-8


@pytest.mark.parametrize("c", [2.0, -0.5, 3.7])
def test_sing_homogeneous(langevin, c):
    G = langevin[1.0]
    assert singular_value_gap(G.scaled(c)) == pytest.approx(abs(c) * singular_value_gap(G), rel=1e-12)


def _finite_volume_gap(beta: float, n: int = 4000, half_width: float = 4.0) -> float:
    # independent oracle: -1/2 e^U (e^-U f')' on a uniform grid with no-flux ends,
    # symmetrised by the Gibbs weights into a tridiagonal matrix
    x = np.linspace(-half_width, half_width, n)
    h = x[1] - x[0]
    U = lambda y: beta * (y * y - 1) ** 2
    pi = np.exp(-U(x))
    w = np.exp(-U(0.5 * (x[1:] + x[:-1])))
    diag = np.zeros(n)
    diag[:-1] += w
    diag[1:] += w
    diag = diag / (2 * h * h * pi)
    off = -w / (2 * h * h * np.sqrt(pi[1:] * pi[:-1]))
    vals = eigh_tridiagonal(diag, off, select="i", select_range=(0, 1), eigvals_only=True)
    return float(vals[1])


def test_double_well_poincare_constant_against_finite_volumes():
    m, converged = estimate_poincare_constant(double_well_potential(0.5))
    assert converged
    assert m == pytest.approx(2 * _finite_volume_gap(0.5), rel=1e-4)
    assert m == pytest.approx(0.84589, abs=1e-4)


def test_double_well_langevin_report_converges():
    report = spectral_report("langevin", double_well_potential(0.5), 1.0, np.arange(0, 20, 0.05))
    assert report.converged
    assert report.sing <= np.min(np.abs(eigenvalues(assemble_galerkin("langevin", double_well_potential(0.5), 1.0)))) + 1e-8


# ---------------------------------------------------------------------------
# Monte Carlo decay


def test_empirical_decay_overdamped_ou():
    grid = np.array([0.0, 0.5, 1.0])
    curve = empirical_decay("overdamped", GAUSS, 0.0, TestFunction.from_1d([0, 1]), grid, outer=1000, inner=20, seed=4)
    assert np.all(np.abs(curve.values - np.exp(-grid / 2)) <= 4 * curve.errors)
    assert curve.provenance == "empirical"


def test_empirical_decay_rejects_constant():
    with pytest.raises(ValueError):
        empirical_decay("langevin", GAUSS, 1.0, TestFunction.constant(2.0), np.array([0.0, 1.0]))


# ---------------------------------------------------------------------------
# finite chains


def test_tv_mixing_examples():
    target = np.array([0.2, 0.3, 0.5])
    assert tv_mixing_time(np.tile(target, (3, 1)), target) == 1
    base, _ = circle_chains(4, 0.25)
    assert tv_mixing_time(base) is None
    with pytest.raises(ValueError):
        tv_mixing_time(np.eye(3), np.array([0.5, 0.6, -0.1]))
    with pytest.raises(ValueError):
        tv_mixing_time(np.array([[0.5, 0.6], [0.5, 0.5]]))


def test_tv_mixing_time_is_first_crossing():
    base, lift = circle_chains(9, 1 / 9)
    for P in (base, lift):
        k = tv_mixing_time(P)
        n = P.shape[0]
        u = np.full(n, 1 / n)
        tv = lambda j: 0.5 * np.max(np.abs(np.linalg.matrix_power(P, j) - u).sum(axis=1))
        assert tv(k) <= 0.25 < tv(k - 1)


def test_circle_scaling_slopes():
    rows = circle_mixing_times([9, 17, 33, 65])
    ns = [r["n"] for r in rows]
    assert loglog_slope(ns, [r["base"] for r in rows]) == pytest.approx(2.0, abs=0.3)
    assert loglog_slope(ns, [r["lifted"] for r in rows]) == pytest.approx(1.0, abs=0.3)
