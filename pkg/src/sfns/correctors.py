"""Quadratic functionals, the fast generator and the corrector calculus.

Quadratic functionals psi(y) = a0 + <a1, y> + <y, A2 y> form an invariant
class for the fast generator

    L psi (y) = <C y, a1 + 2 A2 y> + Tr(Q A2),

and the equation L phi = -psi is solvable in closed form whenever psi has
zero mean under the stationary law N(0, Q_inf):

    a1_phi = (-C)^{-1} a1,
    (A2_phi)_{ij} = (A2)_{ij} / (lambda_i + lambda_j),
    a0_phi chosen so phi is centered.

On top of this the two correctors of the slow-fast expansion are built for
test functionals u -> <u, h>:

    phi1(u, y)  = <b((-C)^{-1} y, u), h>                (linear in y),
    psi_u(w)    = <b((-C)^{-1} w, b(w, u)), h>
                  + <b((-C)^{-1} b(w, w), u), h>        (quadratic in w),
    phi2(u, .)  = solution of L phi = -(psi_u - mean),

and the effective drift functional <A u + b(u,u), h> + int psi_u dmu.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    BasisMismatchError,
    InvalidParameterError,
    NumericFailureError,
)
from .operators import (
    CovarianceSpec,
    DiagonalOperator,
    invariant_covariance,
)
from .spectral import (
    ModeBasis,
    SpectralField,
    advect_modes,
    nonlinear_b,
    nonlinear_b_many,
    pair_products,
)

POISSON_TOL = 1e-10
CENTERING_TOL = 1e-10


@dataclass(frozen=True)
class QuadraticFunctional:
    """psi(y) = a0 + <a1, y> + <y, A2 y> over the truncated space."""

    basis: ModeBasis
    a0: float = 0.0
    a1: np.ndarray | None = None
    A2: np.ndarray | None = None

    def __post_init__(self):
        if self.a1 is not None:
            a1 = np.asarray(self.a1, dtype=float)
            if a1.shape != (self.basis.size,):
                raise InvalidParameterError("a1 must match the basis size")
            object.__setattr__(self, "a1", a1)
        if self.A2 is not None:
            A2 = np.asarray(self.A2, dtype=float)
            if A2.shape != (self.basis.size, self.basis.size):
                raise InvalidParameterError("A2 must be square over the basis")
            if np.max(np.abs(A2 - A2.T)) > 1e-12 * max(1.0, np.max(np.abs(A2))):
                raise InvalidParameterError("A2 must be symmetric")
            A2 = 0.5 * (A2 + A2.T)
            object.__setattr__(self, "A2", A2)

    def __call__(self, y):
        c = y.coeffs if isinstance(y, SpectralField) else np.asarray(y, dtype=float)
        val = self.a0
        if self.a1 is not None:
            val += float(np.dot(self.a1, c))
        if self.A2 is not None:
            val += float(c @ self.A2 @ c)
        return val

    def gradient(self, y):
        c = y.coeffs if isinstance(y, SpectralField) else np.asarray(y, dtype=float)
        g = np.zeros(self.basis.size)
        if self.a1 is not None:
            g += self.a1
        if self.A2 is not None:
            g += 2.0 * (self.A2 @ c)
        return g

    def shifted(self, delta_a0):
        return QuadraticFunctional(self.basis, self.a0 + delta_a0, self.a1, self.A2)

    def scaled(self, factor):
        return QuadraticFunctional(
            self.basis,
            factor * self.a0,
            None if self.a1 is None else factor * self.a1,
            None if self.A2 is None else factor * self.A2,
        )


def trace_q_a2(Q: CovarianceSpec, A2):
    if A2 is None:
        return 0.0
    if Q.is_diagonal:
        return float(np.sum(Q.diagonal * np.diag(A2)))
    idx = Q.block_indices
    return float(np.sum(Q.block * A2[np.ix_(idx, idx)]))


def ou_generator_apply(C_eff: DiagonalOperator, Q: CovarianceSpec,
                       psi: QuadraticFunctional, y) -> float:
    """L psi (y) = <C_eff y, a1 + 2 A2 y> + Tr(Q A2), exactly."""
    if psi.basis is not C_eff.basis or Q.basis is not C_eff.basis:
        raise BasisMismatchError("generator components on different bases")
    c = y.coeffs if isinstance(y, SpectralField) else np.asarray(y, dtype=float)
    val = trace_q_a2(Q, psi.A2)
    grad = np.zeros(C_eff.basis.size)
    if psi.a1 is not None:
        grad += psi.a1
    if psi.A2 is not None:
        grad += 2.0 * (psi.A2 @ c)
    val += float(np.dot(C_eff.eigenvalues * c, grad))
    return val


def functional_mean(psi: QuadraticFunctional, mu) -> float:
    """int psi dmu for the Gaussian mu = N(0, Q_inf)."""
    val = psi.a0
    if psi.A2 is not None:
        if mu.is_diagonal:
            val += float(np.sum(mu.diagonal * np.diag(psi.A2)))
        else:
            idx = mu.block_indices
            val += float(np.sum(mu.block * psi.A2[np.ix_(idx, idx)]))
    return val


def center(psi: QuadraticFunctional, mu) -> QuadraticFunctional:
    """Subtract the stationary mean so the result integrates to zero."""
    return psi.shifted(-functional_mean(psi, mu))


def poisson_solve(C_eff: DiagonalOperator, Q: CovarianceSpec,
                  psi: QuadraticFunctional, *, residual_checks=100) -> QuadraticFunctional:
    """Solve L phi = -psi for a centered quadratic functional psi.

    The returned phi is itself centered.  The residual |L phi + psi| is
    verified on random states before returning.
    """
    if psi.basis is not C_eff.basis:
        raise BasisMismatchError("functional and operator on different bases")
    mu = invariant_covariance(C_eff, Q)
    mean = functional_mean(psi, mu)
    scale = abs(psi.a0) + (np.max(np.abs(psi.a1)) if psi.a1 is not None else 0.0) \
        + (np.max(np.abs(psi.A2)) if psi.A2 is not None else 0.0)
    if abs(mean) > CENTERING_TOL * max(1.0, scale):
        raise InvalidParameterError(
            f"poisson_solve requires a centered functional (mean {mean:.3e})")
    lam = C_eff.rates
    a1_phi = None if psi.a1 is None else psi.a1 / lam
    A2_phi = None if psi.A2 is None else psi.A2 / (lam[:, None] + lam[None, :])
    phi = QuadraticFunctional(C_eff.basis, 0.0, a1_phi, A2_phi)
    phi = phi.shifted(-functional_mean(phi, mu))
    rng = np.random.default_rng(0x5F3_0)
    for _ in range(residual_checks):
        y = rng.standard_normal(C_eff.basis.size)
        res = ou_generator_apply(C_eff, Q, phi, y) + psi(y)
        if abs(res) > POISSON_TOL * (1.0 + abs(psi(y))):
            raise NumericFailureError(
                f"Poisson residual {res:.3e} exceeds tolerance {POISSON_TOL:.0e}")
    return phi


# -- correctors for pairing test functionals ---------------------------------

def phi1_eval(C_eps: DiagonalOperator, u: SpectralField, h: SpectralField,
              y: SpectralField) -> float:
    """phi1(u, y) = <b((-C_eps)^{-1} y, u), h>."""
    yc = y.coeffs / C_eps.rates
    return nonlinear_b(SpectralField(u.basis, yc), u).inner(h)


def phi1_as_functional(C_eps, u, h) -> QuadraticFunctional:
    """phi1(u, .) as a linear functional of the fast variable.

    a1[i] = <b((-C_eps)^{-1} e_i, u), h> = -<b(e_i, h), u> / lambda_i.
    """
    basis = u.basis
    a1 = -_pairings_with_all_modes(basis, h.coeffs, u.coeffs) / C_eps.rates
    return QuadraticFunctional(basis, 0.0, a1, None)


def phi1_grad_y(C_eps, u, h) -> SpectralField:
    """Field d with <d, v> = <b((-C_eps)^{-1} v, u), h> for all v."""
    return SpectralField(u.basis, phi1_as_functional(C_eps, u, h).a1)


def phi1_grad_u(C_eps, y, h) -> SpectralField:
    """Field d with <d, v> = <b((-C_eps)^{-1} y, v), h> = -<b((-C_eps)^{-1} y, h), v>."""
    yc = y.coeffs / C_eps.rates
    return -nonlinear_b(SpectralField(y.basis, yc), h)


def _pairings_with_all_modes(basis, h_coeffs, u_coeffs):
    """beta[i] = <b(e_i, h), u> for every basis element, via pair products."""
    M = basis.size
    support = np.flatnonzero(h_coeffs)
    beta = np.zeros(M)
    if support.size == 0:
        return beta
    ii = np.repeat(np.arange(M), support.size)
    jj = np.tile(support, M)
    out_idx, coef = pair_products(basis, ii, jj)
    for slot in range(2):
        good = out_idx[slot] >= 0
        vals = coef[slot][good] * h_coeffs[jj[good]] * u_coeffs[out_idx[slot][good]]
        np.add.at(beta, ii[good], vals)
    return beta


def psi_u_eval(C_eps: DiagonalOperator, u: SpectralField, h: SpectralField,
               w: SpectralField) -> float:
    """psi_u(w) = <b((-C)^{-1} w, b(w, u)), h> + <b((-C)^{-1} b(w, w), u), h>."""
    basis = u.basis
    winv = SpectralField(basis, w.coeffs / C_eps.rates)
    first = nonlinear_b(winv, nonlinear_b(w, u)).inner(h)
    bww = nonlinear_b(w, w)
    second = nonlinear_b(SpectralField(basis, bww.coeffs / C_eps.rates), u).inner(h)
    return first + second


def assemble_psi_u(C_eps: DiagonalOperator, u: SpectralField,
                   h: SpectralField) -> QuadraticFunctional:
    """psi_u as an explicit QuadraticFunctional of the fast variable.

    Both contributions are bilinear forms in (w, w); their matrices are
    assembled column-by-column on basis elements and symmetrized.
    """
    basis = u.basis
    M = basis.size
    lam = C_eps.rates
    # P1[i, j] = <b((-C)^{-1} e_i, b(e_j, u)), h> = -<G_i, b(e_j, u)>
    G = np.stack([
        advect_modes(basis, [i], [1.0 / lam[i]], h.coeffs) for i in range(M)
    ])
    Z = np.stack([advect_modes(basis, [j], [1.0], u.coeffs) for j in range(M)])
    P1 = -G @ Z.T
    # P2[i, j] = <b((-C)^{-1} b(e_i, e_j), u), h> = sum_m T[i,j,m] beta_m / lambda_m
    beta = -_pairings_with_all_modes(basis, h.coeffs, u.coeffs)   # <b(e_m, u), h>
    weight = beta / lam
    ii = np.repeat(np.arange(M), M)
    jj = np.tile(np.arange(M), M)
    out_idx, coef = pair_products(basis, ii, jj)
    P2 = np.zeros(M * M)
    for slot in range(2):
        good = out_idx[slot] >= 0
        P2[good] += coef[slot][good] * weight[out_idx[slot][good]]
    P2 = P2.reshape(M, M)
    A2 = 0.5 * (P1 + P1.T) + 0.5 * (P2 + P2.T)
    return QuadraticFunctional(basis, 0.0, None, A2)


def psi_u_mean(C: DiagonalOperator, Q: CovarianceSpec, u: SpectralField,
               h: SpectralField) -> float:
    """int psi_u dmu = sum_m sigma_m psi_u(f_m) over eigenpairs of Q_inf."""
    mu = invariant_covariance(C, Q)
    total = 0.0
    for sigma, vec in mu.eigenpairs():
        total += sigma * psi_u_eval(C, u, h, SpectralField(u.basis, vec))
    return total


def effective_generator(A: DiagonalOperator, C: DiagonalOperator,
                        Q: CovarianceSpec, u: SpectralField,
                        h: SpectralField) -> float:
    """<A u + b(u, u), h> + int psi_u dmu, the closed drift functional."""
    drift = A.apply(u) + nonlinear_b(u, u)
    return drift.inner(h) + psi_u_mean(C, Q, u, h)


def phi2_solve(C_eps: DiagonalOperator, Q: CovarianceSpec, u: SpectralField,
               h: SpectralField) -> QuadraticFunctional:
    """Second corrector: solve L phi = -(psi_u - int psi_u dmu)."""
    psi = assemble_psi_u(C_eps, u, h)
    mu = invariant_covariance(C_eps, Q)
    return poisson_solve(C_eps, Q, center(psi, mu))


def monte_carlo_functional_mean(psi_eval, mu, n_samples, rng, chunk=4096):
    """MC oracle for int psi dmu; psi_eval maps an (n, size) batch to values."""
    from .operators import sample_invariant_many

    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        w = sample_invariant_many(mu, rng, m)
        vals = psi_eval(w)
        total += float(np.sum(vals))
        total_sq += float(np.sum(vals**2))
        done += m
    mean = total / n_samples
    var = total_sq / n_samples - mean**2
    return mean, float(np.sqrt(max(var, 0.0) / n_samples))


def fit_mixing_rate(C_eff: DiagonalOperator, Q: CovarianceSpec,
                    psi: QuadraticFunctional, y0: SpectralField, times,
                    n_samples, rng):
    """Fitted exponential decay rate of |E psi(Y_t) - int psi dmu|.

    Y follows dY = C_eff Y dt + Q^{1/2} dW from y0; each time point is
    reached in a single exact step.  Only diagonal Q is supported.  Points
    whose signal falls below five standard errors are dropped from the fit.
    """
    from .ou import ou_update_diagonal

    if not Q.is_diagonal:
        raise InvalidParameterError("mixing fit requires diagonal noise")
    mu_meas = invariant_covariance(C_eff, Q)
    target = functional_mean(psi, mu_meas)
    times = np.asarray(times, dtype=float)
    gaps = np.empty(times.size)
    errs = np.empty(times.size)
    for i, t in enumerate(times):
        start = np.tile(y0.coeffs, (n_samples, 1))
        yt = ou_update_diagonal(start, t, C_eff.eigenvalues, Q.diagonal, rng)
        vals = np.array([psi(row) for row in yt]) if psi.A2 is not None \
            else psi.a0 + yt @ psi.a1
        gaps[i] = abs(vals.mean() - target)
        errs[i] = vals.std(ddof=1) / np.sqrt(n_samples)
    keep = gaps > 5 * errs
    if keep.sum() < 3:
        raise NumericFailureError("too few resolved points for a mixing-rate fit")
    slope, _ = np.polyfit(times[keep], np.log(gaps[keep]), 1)
    return -float(slope), times[keep], gaps[keep]
