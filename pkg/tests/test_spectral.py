"""Tests for the truncated divergence-free spectral core."""

import numpy as np
import pytest

from sfns.errors import BasisMismatchError, InvalidOperatorError, InvalidParameterError
from sfns.operators import make_dissipation
from sfns.spectral import (
    SpectralField,
    advect_modes,
    double_advect_sum,
    field_from_entries,
    grid_inner,
    leray_project,
    make_basis,
    nonlinear_b,
    nonlinear_b_many,
    pair_products,
    sobolev_inner,
    sobolev_norm2,
    spectral_divergence,
    unit_field,
    zero_field,
)

RNG = np.random.default_rng(20240817)


def random_field(basis, rng=RNG, scale=1.0):
    return SpectralField(basis, scale * rng.standard_normal(basis.size))


@pytest.fixture(scope="module")
def basis4():
    return make_basis(4)


class TestBasis:
    def test_half_lattice_count_bruteforce(self):
        # oracle: enumerate the full lattice and dedupe +/-k by brute force
        for K in (1, 2, 3, 5):
            seen = set()
            for kx in range(-K, K + 1):
                for ky in range(-K, K + 1):
                    if (kx, ky) == (0, 0):
                        continue
                    rep = (kx, ky) if (kx > 0 or (kx == 0 and ky > 0)) else (-kx, -ky)
                    seen.add(rep)
            basis = make_basis(K)
            assert basis.size == 2 * len(seen)

    def test_k1_has_eight_elements(self):
        # |k|_inf <= 1 admits (0,1), (1,0), (1,1), (1,-1): four wavevectors
        assert make_basis(1).size == 8

    def test_invalid_truncation(self):
        with pytest.raises(InvalidParameterError):
            make_basis(0)
        with pytest.raises(InvalidParameterError):
            make_basis(1000)

    def test_orthonormality_by_quadrature(self):
        basis = make_basis(2)
        n = basis.grid_n
        phys = np.stack([basis.to_physical(row) for row in np.eye(basis.size)])
        gram = np.einsum("mcxy,lcxy->ml", phys, phys) / n**2
        assert np.max(np.abs(gram - np.eye(basis.size))) < 1e-12

    def test_elements_divergence_free(self, basis4):
        for m in range(basis4.size):
            f = SpectralField(basis4, np.eye(basis4.size)[m])
            assert np.max(np.abs(spectral_divergence(basis4, f))) < 1e-12

    def test_perp_convention(self, basis4):
        # a_k is unit, orthogonal to k, and a_{-k} = -a_k under the formula
        k = basis4.kvecs.astype(float)
        a = basis4.perp
        assert np.allclose(np.einsum("ij,ij->i", k, a), 0.0, atol=1e-15)
        assert np.allclose(np.einsum("ij,ij->i", a, a), 1.0, atol=1e-15)

    def test_index_of_rejects_noncanonical(self, basis4):
        with pytest.raises(InvalidParameterError):
            basis4.index_of((-1, 0), "cos")
        with pytest.raises(InvalidParameterError):
            basis4.index_of((0, 9), "sin")


class TestField:
    def test_immutable(self, basis4):
        f = random_field(basis4)
        with pytest.raises(ValueError):
            f.coeffs[0] = 1.0

    def test_rejects_nonfinite(self, basis4):
        c = np.zeros(basis4.size)
        c[3] = np.inf
        with pytest.raises(InvalidParameterError):
            SpectralField(basis4, c)

    def test_arithmetic(self, basis4):
        u, v = random_field(basis4), random_field(basis4)
        w = 2.0 * u - v
        assert np.allclose(w.coeffs, 2 * u.coeffs - v.coeffs)

    def test_basis_mismatch(self, basis4):
        other = make_basis(3)
        with pytest.raises(BasisMismatchError):
            random_field(basis4).inner(random_field(other))


class TestLeray:
    def test_gradient_mode_projects_to_zero(self, basis4):
        # vector coefficient parallel to k is a gradient mode
        n = basis4.grid_n
        raw = np.zeros((2, n, n), dtype=complex)
        raw[0, 1 % n, 0] = 1.0
        raw[0, -1 % n, 0] = 1.0
        f = leray_project(basis4, raw)
        assert f.norm() == 0.0

    def test_perpendicular_mode_unchanged(self, basis4):
        f = unit_field(basis4, (1, 0), "cos")
        grid = basis4.to_grid_coeffs(f.coeffs)
        g = leray_project(basis4, grid)
        assert np.allclose(g.coeffs, f.coeffs, atol=1e-14)

    def test_random_raw_divfree_idempotent_orthogonal(self, basis4):
        n = basis4.grid_n
        rng = np.random.default_rng(7)
        # random Hermitian-symmetric raw modes within the truncation
        raw = np.zeros((2, n, n), dtype=complex)
        for kx in range(-basis4.K, basis4.K + 1):
            for ky in range(-basis4.K, basis4.K + 1):
                z = rng.standard_normal(2) + 1j * rng.standard_normal(2)
                raw[:, kx % n, ky % n] += z
                raw[:, -kx % n, -ky % n] += np.conj(z)
        f = leray_project(basis4, raw)
        assert np.max(np.abs(spectral_divergence(basis4, f))) < 1e-12
        # idempotence
        g = leray_project(basis4, basis4.to_grid_coeffs(f.coeffs))
        assert np.max(np.abs(g.coeffs - f.coeffs)) < 1e-12
        # orthogonality of the projection
        proj = basis4.to_grid_coeffs(f.coeffs)
        assert abs(grid_inner(raw - proj, proj)) < 1e-10 * max(1.0, grid_inner(proj, proj))

    def test_zero_mode_removed(self, basis4):
        n = basis4.grid_n
        raw = np.zeros((2, n, n), dtype=complex)
        raw[:, 0, 0] = 3.0
        assert leray_project(basis4, raw).norm() == 0.0


class TestNonlinearB:
    def test_b_ee_vanishes_exactly(self, basis4):
        for m in range(basis4.size):
            e = SpectralField(basis4, np.eye(basis4.size)[m])
            assert np.max(np.abs(nonlinear_b(e, e).coeffs)) < 1e-14

    def test_energy_conservation_hundred_pairs(self, basis4):
        rng = np.random.default_rng(3)
        for _ in range(100):
            u, v = random_field(basis4, rng), random_field(basis4, rng)
            val = nonlinear_b(u, v).inner(v)
            assert abs(val) < 1e-12 * max(1.0, u.norm() * v.norm() ** 2)

    def test_antisymmetry_triples(self, basis4):
        rng = np.random.default_rng(4)
        for _ in range(50):
            x1, x2, x3 = (random_field(basis4, rng) for _ in range(3))
            lhs = nonlinear_b(x1, x2).inner(x3)
            rhs = -nonlinear_b(x1, x3).inner(x2)
            assert abs(lhs - rhs) < 1e-12 * max(1.0, abs(lhs), abs(rhs))

    def test_bilinearity(self, basis4):
        rng = np.random.default_rng(5)
        u, v, w = (random_field(basis4, rng) for _ in range(3))
        left = nonlinear_b(u, 2.0 * v + w)
        right = 2.0 * nonlinear_b(u, v) + nonlinear_b(u, w)
        assert np.allclose(left.coeffs, right.coeffs, atol=1e-12)
        left2 = nonlinear_b(2.0 * u + w, v)
        right2 = 2.0 * nonlinear_b(u, v) + nonlinear_b(w, v)
        assert np.allclose(left2.coeffs, right2.coeffs, atol=1e-12)

    def test_basis_mismatch(self, basis4):
        with pytest.raises(BasisMismatchError):
            nonlinear_b(random_field(basis4), random_field(make_basis(3)))

    def test_two_mode_support(self, basis4):
        # b(e_{(1,0),cos}, e_{(0,1),cos}) lives exactly on wavevectors (1,1), (1,-1)
        u = unit_field(basis4, (1, 0), "cos")
        v = unit_field(basis4, (0, 1), "cos")
        w = nonlinear_b(u, v)
        labels = basis4.element_labels()
        support = {labels[m] for m in np.flatnonzero(np.abs(w.coeffs) > 1e-13)}
        assert support == {"(1,1)sin", "(1,-1)sin"}

    def test_pair_products_match_fft(self):
        basis = make_basis(3)
        M = basis.size
        for i in range(M):
            ref = nonlinear_b_many(basis, np.tile(np.eye(M)[i], (M, 1)), np.eye(M))
            for j in range(M):
                out = advect_modes(basis, [i], [1.0], np.eye(M)[j])
                assert np.max(np.abs(ref[j] - out)) < 1e-12

    def test_double_advect_matches_composition(self):
        basis = make_basis(3)
        M = basis.size
        rng = np.random.default_rng(6)
        v = rng.standard_normal(M)
        idx = np.arange(0, M, 5)
        w = rng.random(idx.size)
        ref = np.zeros(M)
        for i, wi in zip(idx, w):
            inner = nonlinear_b_many(basis, np.eye(M)[i], v)
            ref += wi * nonlinear_b_many(basis, np.eye(M)[i], inner)
        out = double_advect_sum(basis, idx, w, v)
        assert np.max(np.abs(ref - out)) < 1e-11


class TestSymbolicOracle:
    """Two-mode products against an exact symbolic trig expansion.

    The torus average of a trigonometric polynomial is its constant Fourier
    term; rewriting products in exponentials and extracting the DC term is
    exact and avoids slow symbolic quadrature.
    """

    CASES = [
        ((1, 0), "cos", (0, 1), "cos"),
        ((1, 0), "cos", (0, 1), "sin"),
        ((1, 0), "sin", (0, 1), "cos"),
        ((1, 0), "sin", (0, 1), "sin"),
        ((0, 1), "cos", (1, 0), "cos"),   # exercises k-l canonicalization
        ((1, 1), "cos", (1, -1), "sin"),
        ((2, 1), "sin", (1, -2), "cos"),
        ((1, -1), "sin", (0, 1), "sin"),
        ((2, 0), "cos", (1, 1), "cos"),
    ]

    @staticmethod
    def _torus_average(sp, expr, x, y):
        terms = sp.Add.make_args(sp.expand(expr.rewrite(sp.exp)))
        dc = sp.Integer(0)
        for term in terms:
            if term.has(x) or term.has(y):
                continue
            dc += term
        return sp.simplify(dc)

    @pytest.mark.parametrize("k,pu,l,pv", CASES)
    def test_against_sympy(self, k, pu, l, pv):
        sp = pytest.importorskip("sympy")
        x, y = sp.symbols("x y", real=True)

        def element(kvec, parity):
            kx, ky = kvec
            norm = sp.sqrt(sp.Integer(kx) ** 2 + sp.Integer(ky) ** 2)
            a = (sp.Rational(-ky) / norm, sp.Rational(kx) / norm)
            theta = 2 * sp.pi * (kx * x + ky * y)
            trig = sp.cos(theta) if parity == "cos" else sp.sin(theta)
            return (sp.sqrt(2) * a[0] * trig, sp.sqrt(2) * a[1] * trig)

        u = element(k, pu)
        v = element(l, pv)
        adv = tuple(u[0] * sp.diff(vc, x) + u[1] * sp.diff(vc, y) for vc in v)

        basis = make_basis(3)
        w = nonlinear_b(unit_field(basis, k, pu), unit_field(basis, l, pv))
        checked = 0
        for m in range(basis.size):
            if abs(w.coeffs[m]) < 1e-13 and checked > 4:
                continue
            row, parity = divmod(m, 2)
            em = element(tuple(basis.kvecs[row]), "cos" if parity == 0 else "sin")
            integrand = -(adv[0] * em[0] + adv[1] * em[1])
            coef = self._torus_average(sp, integrand, x, y)
            assert abs(complex(coef).real - w.coeffs[m]) < 1e-12
            assert abs(complex(coef).imag) < 1e-12
            checked += 1


class TestSobolev:
    def test_s0_reduces_to_plain_inner(self, basis4):
        A = make_dissipation("laplacian", basis4, nu=1.0)
        e = unit_field(basis4, (1, 0), "cos")
        assert sobolev_inner(e, e, 0.0, A) == pytest.approx(1.0, abs=1e-14)

    def test_laplacian_eigenvalue_h1(self, basis4):
        A = make_dissipation("laplacian", basis4, nu=1.0)
        e = unit_field(basis4, (1, 0), "cos")
        assert sobolev_inner(e, e, 1.0, A) == pytest.approx(4 * np.pi**2, rel=1e-14)

    def test_interpolation_inequality(self, basis4):
        A = make_dissipation("laplacian", basis4, nu=1.0)
        rng = np.random.default_rng(8)
        for _ in range(50):
            u = random_field(basis4, rng)
            half = sobolev_norm2(u, 0.5, A)
            bound = np.sqrt(sobolev_norm2(u, 0.0, A) * sobolev_norm2(u, 1.0, A))
            assert half <= bound * (1 + 1e-12)

    def test_rejects_nonnegative_operator(self, basis4):
        A = make_dissipation("laplacian", basis4, nu=1.0)
        bad = object.__new__(type(A))
        for field_name, value in A.__dict__.items():
            object.__setattr__(bad, field_name, value)
        object.__setattr__(bad, "eigenvalues", -A.eigenvalues)
        u = random_field(basis4)
        with pytest.raises(InvalidOperatorError):
            sobolev_inner(u, u, 1.0, bad)


def test_field_from_entries(basis4):
    f = field_from_entries(basis4, [((1, 0), "cos", 2.0), ((0, 1), "sin", -1.0)])
    assert f.coeffs[basis4.index_of((1, 0), "cos")] == 2.0
    assert f.coeffs[basis4.index_of((0, 1), "sin")] == -1.0
    assert zero_field(basis4).norm() == 0.0
