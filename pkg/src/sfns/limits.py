"""Ingredients of the limiting slow dynamics.

Three objects built from (C, Q) through the stationary law mu = N(0, Q_inf):

* the mean advection velocity r = int (-C)^{-1} b(w, w) dmu(w), which
  vanishes identically when Q is diagonal on the trigonometric basis;
* the drift correction S(u) = int b((-C)^{-1} w, b(w, u)) dmu(w) that turns
  the transport integral from Stratonovich into Ito form ("representation A",
  a sum over Q_inf eigenpairs), together with the quadratic-covariation form
  "representation B" = 1/2 sum_k b(g_k, b(g_k, u)) with
  g_k = (-C)^{-1} Q^{1/2} e_k; the two coincide exactly when [C, Q] = 0;
* the Ito noise increment sum_k b(g_k, u) dW_k.

The shell-covariance dissipation kappa_N(u) = sum_k q_k / (2 lambda_k^2)
b(e_k, b(e_k, u)) shares the double-advection kernel of representation A.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    BasisMismatchError,
    InvalidParameterError,
    UnsupportedConfigurationError,
)
from .operators import (
    CovarianceSpec,
    DiagonalOperator,
    InvariantMeasure,
    check_commute,
    invariant_covariance,
    sqrt_columns,
)
from .spectral import (
    SpectralField,
    advect_modes,
    double_advect_sum,
    nonlinear_b_many,
    nonlinear_b_pairwise,
)


@dataclass(frozen=True)
class LimitCoefficients:
    """Precomputed noise directions and drift of the limiting dynamics."""

    C: DiagonalOperator
    Q: CovarianceSpec
    mu: InvariantMeasure
    active: np.ndarray            # element indices carrying noise
    g: np.ndarray                 # (n_active, size) rows (-C)^{-1} Q^{1/2} e_k
    r: SpectralField              # mean advection velocity
    commutes: bool
    commute_residual: float

    @property
    def basis(self):
        return self.C.basis

    def g_field(self, j):
        return SpectralField(self.basis, self.g[j])


def make_limit_coefficients(C: DiagonalOperator, Q: CovarianceSpec) -> LimitCoefficients:
    if C.basis is not Q.basis:
        raise BasisMismatchError("C and Q on different bases")
    commutes, residual = check_commute(C, Q)
    mu = invariant_covariance(C, Q)
    active, cols = sqrt_columns(Q)
    g = cols / C.rates
    return LimitCoefficients(
        C=C, Q=Q, mu=mu, active=active, g=g, r=ito_stokes_drift(C, Q),
        commutes=commutes, commute_residual=residual,
    )


def ito_stokes_drift(C: DiagonalOperator, Q: CovarianceSpec) -> SpectralField:
    """r = sum_m sigma_m (-C)^{-1} b(f_m, f_m) over eigenpairs of Q_inf.

    Exact in the truncated space.  For any diagonal Q the eigendirections are
    single basis elements and b(e, e) = 0, so r vanishes identically.
    """
    if C.basis is not Q.basis:
        raise BasisMismatchError("C and Q on different bases")
    basis = C.basis
    mu = invariant_covariance(C, Q)
    acc = np.zeros(basis.size)
    for sigma, vec in mu.eigenpairs():
        acc += sigma * nonlinear_b_pairwise(basis, vec, vec)
    return SpectralField(basis, acc / C.rates)


def monte_carlo_drift(C, Q, n_samples, rng, chunk=8192):
    """Monte Carlo oracle for the drift: mean of (-C)^{-1} b(w, w) over mu.

    Returns (mean coefficients, standard error per coefficient).  Samples
    with small support are advected through a precomputed support-pair table;
    larger supports fall back to the transform path.
    """
    from .operators import sample_invariant_many
    from .spectral import pair_products

    basis = C.basis
    mu = invariant_covariance(C, Q)
    active = Q.active_indices()
    table = None
    if active.size <= 8:
        ii = np.repeat(active, active.size)
        jj = np.tile(active, active.size)
        out_idx, coef = pair_products(basis, ii, jj)
        table = (ii, jj, out_idx, coef)

    def advect_self(w):
        if table is None:
            return nonlinear_b_many(basis, w, w)
        ii, jj, out_idx, coef = table
        out = np.zeros((w.shape[0], basis.size))
        ww = w[:, ii] * w[:, jj]
        for slot in range(2):
            for p in range(ii.size):
                m = out_idx[slot, p]
                if m >= 0:
                    out[:, m] += coef[slot, p] * ww[:, p]
        return out

    total = np.zeros(basis.size)
    total_sq = np.zeros(basis.size)
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        w = sample_invariant_many(mu, rng, m)
        vals = advect_self(w) / C.rates
        total += vals.sum(axis=0)
        total_sq += (vals**2).sum(axis=0)
        done += m
    mean = total / n_samples
    var = total_sq / n_samples - mean**2
    se = np.sqrt(np.clip(var, 0.0, None) / n_samples)
    return mean, se


def strat_corrector_apply(coeffs: LimitCoefficients, u: SpectralField) -> SpectralField:
    """S(u) in representation A; requires the commuting case."""
    if not coeffs.commutes:
        raise UnsupportedConfigurationError(
            f"Stratonovich reading requires [C, Q] = 0 "
            f"(commutator residual {coeffs.commute_residual:.3e})")
    return _representation_a(coeffs, u)


def strat_corrector_representations(coeffs: LimitCoefficients, u: SpectralField):
    """(representation A, representation B) of the corrector applied to u.

    They agree whenever [C, Q] = 0; for non-commuting dense covariances the
    gap is returned for reporting, never asserted.
    """
    return _representation_a(coeffs, u), _representation_b(coeffs, u)


def _representation_a(coeffs, u):
    basis = coeffs.basis
    if u.basis is not basis:
        raise BasisMismatchError("field on a different basis")
    if coeffs.mu.is_diagonal:
        idx = np.flatnonzero(coeffs.mu.diagonal)
        weights = coeffs.mu.diagonal[idx] / coeffs.C.rates[idx]
        return SpectralField(basis, double_advect_sum(basis, idx, weights, u.coeffs))
    acc = np.zeros(basis.size)
    for sigma, vec in coeffs.mu.eigenpairs():
        inner = nonlinear_b_pairwise(basis, vec, u.coeffs)
        acc += sigma * nonlinear_b_pairwise(basis, vec / coeffs.C.rates, inner)
    return SpectralField(basis, acc)


def _representation_b(coeffs, u):
    basis = coeffs.basis
    if u.basis is not basis:
        raise BasisMismatchError("field on a different basis")
    if coeffs.Q.is_diagonal:
        idx = coeffs.active
        weights = 0.5 * coeffs.Q.diagonal[idx] / coeffs.C.rates[idx] ** 2
        return SpectralField(basis, double_advect_sum(basis, idx, weights, u.coeffs))
    acc = np.zeros(basis.size)
    for row in coeffs.g:
        inner = nonlinear_b_pairwise(basis, row, u.coeffs)
        acc += 0.5 * nonlinear_b_pairwise(basis, row, inner)
    return SpectralField(basis, acc)


def transport_noise_increment(coeffs: LimitCoefficients, u: SpectralField,
                              dW) -> SpectralField:
    """sum_k b(g_k, u) dW_k for per-active-mode Gaussian increments dW."""
    dW = np.asarray(dW, dtype=float)
    if dW.shape != (coeffs.active.size,):
        raise InvalidParameterError(
            f"expected {coeffs.active.size} increments, got shape {dW.shape}")
    basis = coeffs.basis
    if u.basis is not basis:
        raise BasisMismatchError("field on a different basis")
    if coeffs.Q.is_diagonal:
        idx = coeffs.active
        scale = np.sqrt(coeffs.Q.diagonal[idx]) / coeffs.C.rates[idx]
        return SpectralField(basis, advect_modes(basis, idx, scale * dW, u.coeffs))
    acc = np.zeros(basis.size)
    for j in range(coeffs.active.size):
        acc += dW[j] * nonlinear_b_many(basis, coeffs.g[j], u.coeffs)
    return SpectralField(basis, acc)


def eddy_kappa_apply(QN: CovarianceSpec, C: DiagonalOperator,
                     u: SpectralField) -> SpectralField:
    """kappa_N(u) = sum_k q_k / (2 lambda_k^2) b(e_k, b(e_k, u))."""
    if not QN.is_diagonal:
        raise UnsupportedConfigurationError("eddy dissipation requires a diagonal covariance")
    if QN.basis is not C.basis or u.basis is not C.basis:
        raise BasisMismatchError("components on different bases")
    idx = np.flatnonzero(QN.diagonal)
    weights = QN.diagonal[idx] / (2.0 * C.rates[idx] ** 2)
    return SpectralField(u.basis, double_advect_sum(u.basis, idx, weights, u.coeffs))


def eddy_kappa_quadratic_form(QN, C, u):
    """<kappa_N(u), u> together with -sum_k q_k/(2 lambda_k^2) ||b(e_k, u)||^2."""
    if not QN.is_diagonal:
        raise UnsupportedConfigurationError("eddy dissipation requires a diagonal covariance")
    idx = np.flatnonzero(QN.diagonal)
    weights = QN.diagonal[idx] / (2.0 * C.rates[idx] ** 2)
    lhs = eddy_kappa_apply(QN, C, u).inner(u)
    rhs = 0.0
    for i, w in zip(idx, weights):
        adv = advect_modes(u.basis, [i], [1.0], u.coeffs)
        rhs -= w * float(np.dot(adv, adv))
    return lhs, rhs


def eddy_to_laplacian_ratios(QN, C, u, n_modes=8):
    """Per-mode ratios <kappa_N(u), e_m> / <Lap u, e_m> over the lowest modes.

    The reference Laplacian here is the plain geometric -4 pi^2 |k|^2 (no
    viscosity factor); only modes where the denominator is nonzero enter.
    """
    basis = u.basis
    kappa_u = eddy_kappa_apply(QN, C, u)
    lap = -4.0 * np.pi**2 * basis.k_norm2() * u.coeffs
    out = []
    for m in range(min(n_modes, basis.size)):
        if abs(lap[m]) < 1e-12:
            continue
        out.append((m, kappa_u.coeffs[m] / lap[m]))
    return out
