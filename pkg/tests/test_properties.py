"""Property-based checks of invariants that hold for every admissible input."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from liftlab.bounds import (
    contraction_rate,
    divergence_constants,
    lift_lower_bound,
    optimal_gamma,
    optimality_constant,
    rhmc_optimal_gamma,
    trel_lower_from_sing,
)
from liftlab.model import TargetMeasure, TestFunction, dirichlet_form, double_well_potential, quadratic_potential
from liftlab.samplers import PhaseState, circle_chains, hamiltonian_flow, reflect
from liftlab.spectral import (
    _drift_matrix,
    assemble_galerkin,
    gaussian_propagator_norm,
    langevin_gap,
    tv_mixing_time,
)

PROPS = settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
finite = st.floats(-5, 5, allow_nan=False)
positive = st.floats(0.05, 20, allow_nan=False)
coeffs = st.lists(st.floats(-3, 3, allow_nan=False), min_size=1, max_size=5)
vec2 = st.tuples(finite, finite).map(np.array)

GAUSS_MU = TargetMeasure(quadratic_potential(1.0), phase_space=False)
DW_MU = TargetMeasure(double_well_potential(0.5), phase_space=False)


@PROPS
@given(coeffs, coeffs, coeffs, st.floats(-2, 2, allow_nan=False))
def test_dirichlet_form_symmetric_and_bilinear(a, b, c, s):
    f, g, h = (TestFunction.from_1d(x) for x in (a, b, c))
    for mu in (GAUSS_MU, DW_MU):
        assert dirichlet_form(f, g, mu) == dirichlet_form(g, f, mu)
        assert dirichlet_form(f, f, mu) >= 0
        lhs = dirichlet_form(f + s * g, h, mu)
        rhs = dirichlet_form(f, h, mu) + s * dirichlet_form(g, h, mu)
        assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


@PROPS
@given(vec2, vec2)
def test_reflection_is_norm_preserving_involution(v, grad):
    w = reflect(v, grad)
    assert np.linalg.norm(w) == pytest.approx(np.linalg.norm(v), rel=1e-12, abs=1e-12)
    assert np.allclose(reflect(w, grad), v, atol=1e-12)
    assert np.dot(w, grad) == pytest.approx(-np.dot(v, grad), rel=1e-9, abs=1e-9)


@PROPS
@given(vec2, vec2, positive, st.floats(0, 20, allow_nan=False))
def test_exact_flow_energy_and_reversibility(x, v, m, t):
    pot = quadratic_potential(m, d=2)
    s = PhaseState(x, v)
    out = hamiltonian_flow(s, pot, t)
    scale = max(1.0, float(s.energy(pot)))
    assert abs(float(out.energy(pot) - s.energy(pot))) <= 1e-11 * scale
    back = hamiltonian_flow(PhaseState(out.x, -out.v), pot, t)
    assert np.allclose(back.x, x, atol=1e-9 * scale) and np.allclose(-back.v, v, atol=1e-9 * scale)


@PROPS
@given(st.floats(0, 8, allow_nan=False), st.floats(0, 10, allow_nan=False), st.floats(0, 3, allow_nan=False))
def test_propagator_norm_contracts_and_decreases(gamma, t, dt):
    a = gaussian_propagator_norm(gamma, t)
    b = gaussian_propagator_norm(gamma, t + dt)
    assert a <= 1 + 1e-12 and b <= a + 1e-12


@PROPS
@given(st.floats(0, 10, allow_nan=False), positive)
def test_langevin_gap_matches_drift_spectrum(gamma, m):
    lam = np.linalg.eigvals(_drift_matrix(gamma, m))
    assert langevin_gap(gamma, m) == pytest.approx(lam.real.min(), abs=1e-6 * max(1.0, math.sqrt(m)))
    assert langevin_gap(gamma, m) <= gamma / 2 + 1e-12


@settings(max_examples=10, deadline=None)
@given(st.floats(0, 5, allow_nan=False), positive)
def test_two_by_two_galerkin_block_is_drift_oracle(gamma, m):
    # the {x, v} sector of the Galerkin generator is -A^T: same spectrum and propagator norm as -A
    G = assemble_galerkin("langevin", quadratic_potential(m), gamma, degree=4)
    idx = [G.basis.index((1, 0)), G.basis.index((0, 1))]
    block = G.matrix[np.ix_(idx, idx)]
    assert np.allclose(block, -_drift_matrix(gamma, m).T, atol=1e-10 * max(1.0, m))
    t = 1.3
    assert np.linalg.norm(expm(t * block), 2) == pytest.approx(gaussian_propagator_norm(gamma, t, m), rel=1e-10)


@PROPS
@given(positive, positive, st.floats(0, 10, allow_nan=False))
def test_divergence_constants_positive(T, m, kappa):
    c = divergence_constants(T, m, kappa).as_float()
    assert c["c0"] > 0 and c["c1"] > 0 and math.isfinite(c["c0"]) and math.isfinite(c["c1"])


@PROPS
@given(positive, positive, st.floats(0.01, 100, allow_nan=False))
def test_optimal_gamma_maximises_rate(C0, C1, scale):
    g = optimal_gamma(C0, C1)
    assert contraction_rate(g, C0, C1) >= contraction_rate(g * scale, C0, C1) * (1 - 1e-12)
    assert contraction_rate(g, C0, C1) == pytest.approx(1 / (2 * math.sqrt(C0 * C1)), rel=1e-10)


@PROPS
@given(st.floats(1e-3, 1e3), st.floats(0, 1e3))
def test_rhmc_inverse_rate_below_closed_bound(m, kappa):
    _, inv = rhmc_optimal_gamma(m, kappa)
    assert inv < 2024 / math.sqrt(m) * math.sqrt(1 + kappa / (7 * m))


@PROPS
@given(positive, positive, positive)
def test_lower_bounds_homogeneous(t_base, t_lift, m):
    assert lift_lower_bound(t_base / m) == pytest.approx(lift_lower_bound(t_base) / math.sqrt(m), rel=1e-12)
    assert optimality_constant(t_lift / math.sqrt(m), t_base / m) == pytest.approx(
        optimality_constant(t_lift, t_base), rel=1e-12
    )
    assert trel_lower_from_sing(2 * m) == pytest.approx(trel_lower_from_sing(m) / 2, rel=1e-14)


@PROPS
@given(st.integers(2, 40), st.floats(0, 1, allow_nan=False))
def test_circle_chains_stochastic_with_uniform_invariant(n, eps):
    base, lift = circle_chains(n, eps)
    for P in (base, lift):
        assert np.all(P >= 0)
        assert np.max(np.abs(P.sum(axis=1) - 1)) < 1e-14
        u = np.full(P.shape[0], 1 / P.shape[0])
        assert np.max(np.abs(u @ P - u)) < 1e-14


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_tv_mixing_time_matches_brute_force(n, seed):
    g = np.random.default_rng(seed)
    P = g.random((n, n)) + 0.05
    P /= P.sum(axis=1, keepdims=True)
    w, vecs = np.linalg.eig(P.T)
    pi = np.real(vecs[:, np.argmin(np.abs(w - 1))])
    pi /= pi.sum()
    pi = np.clip(pi, 0, None)
    pi /= pi.sum()
    k = tv_mixing_time(P, pi)
    tv = lambda j: 0.5 * np.max(np.abs(np.linalg.matrix_power(P, j) - pi).sum(axis=1))
    assert tv(k) <= 0.25 and (k == 1 or tv(k - 1) > 0.25)
