"""Exact simulation of the linearised fast process and its noise increments.

The fast linear dynamics is, per mode,

    dY = mu Y dt + sqrt(q / eps) dW,      mu = (lambda^C + eps lambda^A) / eps < 0,

whose transition law is Gaussian with mean e^{mu dt} Y and variance

    v(dt) = (q / eps) (1 - e^{2 mu dt}) / (-2 mu).

All moment formulas are written through expm1 so that the stiff regime
(|mu| dt large) and the near-degenerate regime (|mu| dt -> 0) are both
handled without cancellation.  The step is stable for every dt > 0 since
|e^{mu dt}| < 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    BasisMismatchError,
    InvalidParameterError,
    UnsupportedConfigurationError,
)
from .operators import CovarianceSpec, DiagonalOperator, check_commute
from .spectral import SpectralField


@dataclass(frozen=True)
class OUParams:
    """Scale separation, dissipation pair and noise of the fast process."""

    epsilon: float
    C: DiagonalOperator
    A: DiagonalOperator
    Q: CovarianceSpec

    def __post_init__(self):
        if not (0 < self.epsilon <= 1):
            raise InvalidParameterError("epsilon must lie in (0, 1]")
        if self.C.basis is not self.A.basis or self.C.basis is not self.Q.basis:
            raise BasisMismatchError("OU components on different bases")
        if np.any(self.drift_eigenvalues >= 0):
            raise InvalidParameterError("effective drift eigenvalues must be negative")

    @property
    def basis(self):
        return self.C.basis

    @property
    def drift_eigenvalues(self):
        """mu_k = (lambda_k^C + eps lambda_k^A) / eps, all < 0."""
        return (self.C.eigenvalues + self.epsilon * self.A.eigenvalues) / self.epsilon


def decay_factor(mu, dt):
    return np.exp(mu * dt)


def convolution_variance(mu, q_over_eps, dt):
    """Variance of int_0^dt e^{mu (dt-s)} sqrt(q/eps) dW_s, exact."""
    return q_over_eps * np.expm1(2.0 * mu * dt) / (2.0 * mu)


def convolution_plain_cross(mu, q, eps, dt):
    """Cross-moment of the convolution increment with sqrt(q) (W_dt - W_0)."""
    return (q / np.sqrt(eps)) * np.expm1(mu * dt) / mu


def ou_exact_step(Y: SpectralField, dt, params: OUParams, rng) -> SpectralField:
    """One exact-in-law step of the fast linear dynamics.

    Diagonal noise advances every mode independently.  A dense noise block is
    supported when [C, Q] = 0 (the joint Gaussian over the block is then
    formed from the entrywise mild-solution covariance); otherwise an
    UnsupportedConfigurationError is raised.
    """
    if Y.basis is not params.basis:
        raise BasisMismatchError("state and parameters on different bases")
    if dt <= 0:
        raise InvalidParameterError("dt must be positive")
    mu = params.drift_eigenvalues
    decay = decay_factor(mu, dt)
    if params.Q.is_diagonal:
        v = convolution_variance(mu, params.Q.diagonal / params.epsilon, dt)
        noise = np.sqrt(v) * rng.standard_normal(params.basis.size)
        return Y.with_coeffs(decay * Y.coeffs + noise)
    ok, residual = check_commute(params.C, params.Q)
    if not ok:
        raise UnsupportedConfigurationError(
            f"exact OU stepping requires [C, Q] = 0 for dense noise "
            f"(commutator residual {residual:.3e})")
    idx = params.Q.block_indices
    mu_b = mu[idx]
    msum = mu_b[:, None] + mu_b[None, :]
    V = (params.Q.block / params.epsilon) * np.expm1(msum * dt) / msum
    w, U = np.linalg.eigh(V)
    root = (U * np.sqrt(np.clip(w, 0.0, None))) @ U.T
    noise = np.zeros(params.basis.size)
    noise[idx] = root @ rng.standard_normal(idx.size)
    return Y.with_coeffs(decay * Y.coeffs + noise)


def convolution_increment_coeffs(dt, params: OUParams, rng):
    """Coefficients of the exact stochastic convolution increment (diagonal Q)."""
    if not params.Q.is_diagonal:
        raise UnsupportedConfigurationError("convolution increments require diagonal Q")
    mu = params.drift_eigenvalues
    v = convolution_variance(mu, params.Q.diagonal / params.epsilon, dt)
    return np.sqrt(v) * rng.standard_normal(params.basis.size)


def stochastic_convolution_increment(dt, params: OUParams, rng):
    """Jointly Gaussian (convolution increment, plain Brownian increment).

    Returns the pair (int_0^dt e^{mu (dt-s)} eps^{-1/2} Q^{1/2} dW_s,
    Q^{1/2} (W_dt - W_0)) with the exact 2x2 per-mode covariance; the plain
    increment has variance q dt per mode.
    """
    if not params.Q.is_diagonal:
        raise UnsupportedConfigurationError("convolution increments require diagonal Q")
    if dt <= 0:
        raise InvalidParameterError("dt must be positive")
    mu = params.drift_eigenvalues
    q = params.Q.diagonal
    v11 = convolution_variance(mu, q / params.epsilon, dt)
    v22 = q * dt
    v12 = convolution_plain_cross(mu, q, params.epsilon, dt)
    xi1 = rng.standard_normal(params.basis.size)
    xi2 = rng.standard_normal(params.basis.size)
    conv = np.sqrt(v11) * xi1
    active = v11 > 0
    slope = np.zeros_like(v12)
    slope[active] = v12[active] / np.sqrt(v11[active])
    resid = np.sqrt(np.clip(v22 - slope**2, 0.0, None))
    plain = slope * xi1 + resid * xi2
    return (SpectralField(params.basis, conv), SpectralField(params.basis, plain))


def ou_update_diagonal(coeffs, dt, drift_eigs, noise_rate, rng):
    """Low-level exact OU update for plain drift eigenvalues and noise rate.

    Advances dX = drift X dt + sqrt(noise_rate) dW exactly; used by the
    corrector laboratory where the unscaled semigroup is needed.
    """
    mu = np.asarray(drift_eigs, dtype=float)
    v = noise_rate * np.expm1(2.0 * mu * dt) / (2.0 * mu)
    shape = np.shape(coeffs)
    return np.exp(mu * dt) * coeffs + np.sqrt(v) * rng.standard_normal(shape)
