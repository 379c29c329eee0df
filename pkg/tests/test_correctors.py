"""Tests for the quadratic-functional calculus and the corrector pipeline."""

import numpy as np
import pytest

from sfns.correctors import (
    QuadraticFunctional,
    assemble_psi_u,
    center,
    effective_generator,
    fit_mixing_rate,
    functional_mean,
    monte_carlo_functional_mean,
    ou_generator_apply,
    phi1_as_functional,
    phi1_eval,
    phi1_grad_u,
    phi1_grad_y,
    phi2_solve,
    poisson_solve,
    psi_u_eval,
    psi_u_mean,
)
from sfns.errors import InvalidParameterError
from sfns.limits import ito_stokes_drift, make_limit_coefficients, strat_corrector_apply
from sfns.operators import (
    c_epsilon,
    diagonal_covariance,
    invariant_covariance,
    make_dissipation,
    zero_covariance,
)
from sfns.ou import ou_update_diagonal
from sfns.spectral import SpectralField, make_basis, nonlinear_b, unit_field


@pytest.fixture(scope="module")
def lab():
    basis = make_basis(3)
    A = make_dissipation("laplacian", basis, nu=1.0)
    C = make_dissipation("friction", basis, chi=1.0)
    Q = diagonal_covariance(
        basis, [((1, 0), "cos", 1.0), ((0, 1), "sin", 0.6), ((1, 1), "cos", 0.3)])
    return basis, A, C, Q


def rand_field(basis, seed):
    return SpectralField(basis, np.random.default_rng(seed).standard_normal(basis.size))


def rand_quadratic(basis, seed, centered_for=None):
    rng = np.random.default_rng(seed)
    a1 = rng.standard_normal(basis.size)
    raw = rng.standard_normal((basis.size, basis.size))
    A2 = 0.5 * (raw + raw.T)
    psi = QuadraticFunctional(basis, rng.standard_normal(), a1, A2)
    if centered_for is not None:
        psi = center(psi, centered_for)
    return psi


class TestGenerator:
    def test_constant_maps_to_zero(self, lab):
        basis, _, C, Q = lab
        psi = QuadraticFunctional(basis, 3.7, None, None)
        for seed in range(5):
            assert ou_generator_apply(C, Q, psi, rand_field(basis, seed)) == 0.0

    def test_linear_functional(self, lab):
        basis, _, C, Q = lab
        rng = np.random.default_rng(1)
        a = rng.standard_normal(basis.size)
        psi = QuadraticFunctional(basis, 0.0, a, None)
        y = rand_field(basis, 2)
        expected = float(np.dot(C.eigenvalues * y.coeffs, a))
        assert ou_generator_apply(C, Q, psi, y) == pytest.approx(expected, rel=1e-14)

    def test_energy_functional_semigroup_derivative(self, lab):
        # L ||y||^2 = 2 <C y, y> + Tr(Q), cross-checked against the Monte Carlo
        # derivative of E[psi(Y_t)] at small t
        basis, _, C, Q = lab
        psi = QuadraticFunctional(basis, 0.0, None, np.eye(basis.size))
        y = rand_field(basis, 3)
        exact = ou_generator_apply(C, Q, psi, y)
        assert exact == pytest.approx(
            2 * float(np.dot(C.eigenvalues * y.coeffs, y.coeffs)) + Q.trace(), rel=1e-13)
        t = 1e-3
        n = 200_000
        rng = np.random.default_rng(4)
        start = np.tile(y.coeffs, (n, 1))
        yt = ou_update_diagonal(start, t, C.eigenvalues, Q.diagonal, rng)
        vals = np.einsum("ij,ij->i", yt, yt)
        deriv = (vals.mean() - psi(y)) / t
        se = vals.std(ddof=1) / np.sqrt(n) / t
        assert abs(deriv - exact) <= 4 * se + 50 * t  # O(t) expansion bias


class TestCentering:
    def test_subtracted_constant_is_trace(self, lab):
        basis, _, C, Q = lab
        mu = invariant_covariance(C, Q)
        psi = QuadraticFunctional(basis, 0.0, None, np.eye(basis.size))
        centered = center(psi, mu)
        assert centered.a0 == pytest.approx(-mu.trace(), rel=1e-14)

    def test_linear_unchanged(self, lab):
        basis, _, C, Q = lab
        mu = invariant_covariance(C, Q)
        psi = QuadraticFunctional(basis, 0.0, np.ones(basis.size), None)
        assert center(psi, mu).a0 == 0.0

    def test_monte_carlo_mean_near_zero(self, lab):
        basis, _, C, Q = lab
        mu = invariant_covariance(C, Q)
        psi = center(rand_quadratic(basis, 5), mu)

        def batch_eval(w):
            quad = np.einsum("ij,jk,ik->i", w, psi.A2, w)
            return psi.a0 + w @ psi.a1 + quad

        mean, se = monte_carlo_functional_mean(batch_eval, mu, 100_000,
                                               np.random.default_rng(6))
        assert abs(mean) <= 4 * se


class TestPoissonSolve:
    def test_linear_case_closed_form(self, lab):
        basis, _, C, Q = lab
        rng = np.random.default_rng(7)
        a = rng.standard_normal(basis.size)
        psi = QuadraticFunctional(basis, 0.0, a, None)
        phi = poisson_solve(C, Q, psi)
        assert np.allclose(phi.a1, a / C.rates, rtol=1e-14)

    def test_friction_quadratic_damping(self, lab):
        basis, _, _, Q = lab
        chi = 2.0
        C2 = make_dissipation("friction", basis, chi=chi)
        mu = invariant_covariance(C2, Q)
        psi = center(rand_quadratic(basis, 8), mu)
        phi = poisson_solve(C2, Q, psi)
        assert np.allclose(phi.A2, psi.A2 / (2 * chi), rtol=1e-13)

    def test_trace_identity(self, lab):
        # Tr(Q A2_phi) = Tr(Q_inf A2), both sides computed independently
        basis, _, C, Q = lab
        Cf = make_dissipation("fractional", basis, nu=1.0, gamma=0.5)
        mu = invariant_covariance(Cf, Q)
        psi = center(rand_quadratic(basis, 9), mu)
        phi = poisson_solve(Cf, Q, psi)
        lhs = float(np.sum(Q.diagonal * np.diag(phi.A2)))
        rhs = float(np.sum(mu.diagonal * np.diag(psi.A2)))
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_uncentered_rejected(self, lab):
        basis, _, C, Q = lab
        psi = QuadraticFunctional(basis, 1.0, None, np.eye(basis.size))
        with pytest.raises(InvalidParameterError):
            poisson_solve(C, Q, psi)

    def test_residual_property_hundred_functionals(self, lab):
        basis, _, C, Q = lab
        Cf = make_dissipation("fractional", basis, nu=0.8, gamma=0.6)
        mu = invariant_covariance(Cf, Q)
        rng = np.random.default_rng(10)
        for trial in range(100):
            psi = rand_quadratic(basis, 1000 + trial, centered_for=mu)
            phi = poisson_solve(Cf, Q, psi)
            for _ in range(5):
                y = rng.standard_normal(basis.size)
                res = ou_generator_apply(Cf, Q, phi, y) + psi(y)
                assert abs(res) <= 1e-10 * (1 + abs(psi(y)))


class TestPhi1:
    def test_zero_fast_state(self, lab):
        basis, _, C, _ = lab
        u, h = rand_field(basis, 11), rand_field(basis, 12)
        zero = SpectralField(basis, np.zeros(basis.size))
        assert phi1_eval(C, u, h, zero) == 0.0

    def test_poisson_witness(self, lab):
        # L_y phi1 = -<b(y, u), h> for the linear-in-y functional
        basis, A, C, Q = lab
        Ce = c_epsilon(C, A, 0.1)
        u, h = rand_field(basis, 13), rand_field(basis, 14)
        functional = phi1_as_functional(Ce, u, h)
        for seed in range(20):
            y = rand_field(basis, 300 + seed)
            lhs = ou_generator_apply(Ce, Q, functional, y)
            rhs = -nonlinear_b(y, u).inner(h)
            assert abs(lhs - rhs) <= 1e-10 * (1 + abs(rhs))

    def test_functional_matches_eval(self, lab):
        basis, A, C, _ = lab
        Ce = c_epsilon(C, A, 0.2)
        u, h = rand_field(basis, 15), rand_field(basis, 16)
        functional = phi1_as_functional(Ce, u, h)
        for seed in range(5):
            y = rand_field(basis, 400 + seed)
            assert functional(y) == pytest.approx(phi1_eval(Ce, u, h, y), rel=1e-12)

    def test_gradients(self, lab):
        basis, A, C, _ = lab
        Ce = c_epsilon(C, A, 0.3)
        u, h, y, v = (rand_field(basis, s) for s in (17, 18, 19, 20))
        dy = phi1_grad_y(Ce, u, h)
        assert dy.inner(v) == pytest.approx(phi1_eval(Ce, u, h, v), rel=1e-12)
        du = phi1_grad_u(Ce, y, h)
        yc = SpectralField(basis, y.coeffs / Ce.rates)
        assert du.inner(v) == pytest.approx(nonlinear_b(yc, v).inner(h), rel=1e-12)

    def test_bilinearity_in_u_h(self, lab):
        basis, _, C, _ = lab
        u1, u2, h, y = (rand_field(basis, s) for s in (21, 22, 23, 24))
        val = phi1_eval(C, u1 + 2.0 * u2, h, y)
        parts = phi1_eval(C, u1, h, y) + 2.0 * phi1_eval(C, u2, h, y)
        assert val == pytest.approx(parts, rel=1e-11)


class TestPsiUAndEffectiveGenerator:
    def test_assembled_matrix_matches_eval(self, lab):
        basis, A, C, _ = lab
        Ce = c_epsilon(C, A, 0.15)
        u, h = rand_field(basis, 25), rand_field(basis, 26)
        psi = assemble_psi_u(Ce, u, h)
        for seed in range(10):
            w = rand_field(basis, 500 + seed)
            assert psi(w) == pytest.approx(psi_u_eval(Ce, u, h, w), rel=1e-10, abs=1e-12)

    def test_decomposition_identity(self, lab):
        # int psi_u dmu = <S(u) + b(r, u), h>
        basis, _, C, Q = lab
        u, h = rand_field(basis, 27), rand_field(basis, 28)
        lhs = psi_u_mean(C, Q, u, h)
        coeffs = make_limit_coefficients(C, Q)
        s_u = strat_corrector_apply(coeffs, u)
        r = ito_stokes_drift(C, Q)
        rhs = (s_u + nonlinear_b(r, u)).inner(h)
        assert abs(lhs - rhs) <= 1e-10 * (1 + abs(lhs))

    def test_zero_noise_reduces_to_drift(self, lab):
        basis, A, C, _ = lab
        Q0 = zero_covariance(basis)
        u, h = rand_field(basis, 29), rand_field(basis, 30)
        val = effective_generator(A, C, Q0, u, h)
        expected = (A.apply(u) + nonlinear_b(u, u)).inner(h)
        assert val == pytest.approx(expected, rel=1e-13)

    def test_mean_matches_monte_carlo(self, lab):
        basis, _, C, Q = lab
        u, h = rand_field(basis, 31), rand_field(basis, 32)
        exact = psi_u_mean(C, Q, u, h)
        mu = invariant_covariance(C, Q)
        psi = assemble_psi_u(C, u, h)

        def batch_eval(w):
            return np.einsum("ij,jk,ik->i", w, psi.A2, w)

        mean, se = monte_carlo_functional_mean(batch_eval, mu, 400_000,
                                               np.random.default_rng(33))
        assert abs(mean - exact) <= 4 * se


class TestPhi2:
    def test_poisson_residual_on_random_states(self, lab):
        basis, A, C, Q = lab
        Ce = c_epsilon(C, A, 0.1)
        u, h = rand_field(basis, 34), rand_field(basis, 35)
        phi2 = phi2_solve(Ce, Q, u, h)
        mu = invariant_covariance(Ce, Q)
        psi_c = center(assemble_psi_u(Ce, u, h), mu)
        rng = np.random.default_rng(36)
        for _ in range(100):
            w = rng.standard_normal(basis.size)
            res = ou_generator_apply(Ce, Q, phi2, w) + psi_c(w)
            assert abs(res) <= 1e-10 * (1 + abs(psi_c(w)))

    def test_vanishes_at_zero_slow_state(self, lab):
        basis, A, C, Q = lab
        Ce = c_epsilon(C, A, 0.1)
        h = rand_field(basis, 37)
        zero = SpectralField(basis, np.zeros(basis.size))
        phi2 = phi2_solve(Ce, Q, zero, h)
        assert phi2.a0 == 0.0
        assert np.max(np.abs(phi2.A2)) < 1e-14

    def test_linear_in_slow_state(self, lab):
        basis, A, C, Q = lab
        Ce = c_epsilon(C, A, 0.1)
        h = rand_field(basis, 38)
        u1, u2 = rand_field(basis, 39), rand_field(basis, 40)
        p1 = phi2_solve(Ce, Q, u1, h)
        p2 = phi2_solve(Ce, Q, u2, h)
        p12 = phi2_solve(Ce, Q, u1 + 2.0 * u2, h)
        assert np.allclose(p12.A2, p1.A2 + 2.0 * p2.A2, atol=1e-11)
        assert p12.a0 == pytest.approx(p1.a0 + 2.0 * p2.a0, abs=1e-11)


class TestMixing:
    def test_semigroup_commutation_monte_carlo(self, lab):
        # E[psi(Y_t)] - psi(y) = int_0^t E[(L psi)(Y_s)] ds within MC error
        basis, _, C, Q = lab
        psi = rand_quadratic(basis, 41)
        y0 = rand_field(basis, 42)
        t, n_sub, n_paths = 0.5, 50, 4000
        dt = t / n_sub
        rng = np.random.default_rng(43)
        states = np.tile(y0.coeffs, (n_paths, 1))
        gen_vals = np.empty((n_sub + 1, n_paths))
        A2y = lambda s: np.array([ou_generator_apply(C, Q, psi, row) for row in s])
        gen_vals[0] = A2y(states)
        for i in range(n_sub):
            states = ou_update_diagonal(states, dt, C.eigenvalues, Q.diagonal, rng)
            gen_vals[i + 1] = A2y(states)
        end_vals = np.array([psi(row) for row in states])
        lhs = end_vals.mean() - psi(y0)
        weights = np.full(n_sub + 1, dt)
        weights[0] = weights[-1] = dt / 2
        integral_paths = weights @ gen_vals
        rhs = integral_paths.mean()
        spread = np.sqrt(end_vals.var() + integral_paths.var()) / np.sqrt(n_paths)
        assert abs(lhs - rhs) <= 4 * spread + 0.3 * dt

    def test_fitted_rate_matches_gap(self, lab):
        basis, _, C, Q = lab
        a = np.zeros(basis.size)
        a[0] = 1.0
        psi = QuadraticFunctional(basis, 0.0, a, None)
        y0 = SpectralField(basis, 5.0 * a)
        times = np.linspace(0.2, 2.0, 8)
        rate, _, _ = fit_mixing_rate(C, Q, psi, y0, times, 40_000,
                                     np.random.default_rng(44))
        assert abs(rate - C.spectral_gap) <= 0.15 * C.spectral_gap
