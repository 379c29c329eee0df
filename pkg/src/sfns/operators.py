"""Dissipation operators, noise covariances and the stationary Gaussian law.

Both dissipation operators A and C are diagonal on the trigonometric basis
with eigenvalues depending only on |k|.  Covariances are either diagonal on
the same basis or dense symmetric PSD blocks over a small declared mode
subset (all other modes carry zero noise).  The invariant covariance of the
damped linear dynamics solves the Lyapunov identity C Q_inf + Q_inf C = -Q,
which reduces entrywise to Q_ij / (lambda_i + lambda_j) for diagonal C.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BasisMismatchError, InvalidParameterError, NumericFailureError
from .spectral import ModeBasis, SpectralField, _frozen_array

TWO_PI_SQ = 4.0 * np.pi**2

#: dense covariance blocks beyond this size are refused
MAX_DENSE_BLOCK = 64

LYAPUNOV_TOL = 1e-8
PSD_EIG_FLOOR = -1e-12


@dataclass(frozen=True)
class DiagonalOperator:
    """Negative-definite operator diagonal on the mode basis."""

    basis: ModeBasis
    eigenvalues: np.ndarray     # (size,), strictly negative, units 1/time
    kind: str
    params: tuple = ()

    def __post_init__(self):
        eig = _frozen_array(self.eigenvalues, dtype=float)
        if eig.shape != (self.basis.size,):
            raise InvalidParameterError("eigenvalue array does not match basis size")
        if np.any(eig >= 0):
            raise InvalidParameterError("dissipation eigenvalues must be strictly negative")
        object.__setattr__(self, "eigenvalues", eig)

    @property
    def spectral_gap(self):
        """lambda_0 > 0, the distance of the spectrum from zero."""
        return float(-np.max(self.eigenvalues))

    @property
    def rates(self):
        """lambda_k = -eigenvalue_k > 0 per basis element."""
        return -self.eigenvalues

    def apply(self, u: SpectralField) -> SpectralField:
        if u.basis is not self.basis:
            raise BasisMismatchError("operator and field on different bases")
        return u.with_coeffs(self.eigenvalues * u.coeffs)

    def inv_neg_apply_coeffs(self, coeffs):
        """(-op)^{-1} applied to a coefficient array."""
        return coeffs / self.rates


def make_dissipation(kind, basis, *, nu=None, chi=None, gamma=None):
    """Construct A or C: 'laplacian' (nu Lap), 'friction' (-chi Id) or
    'fractional' (-(nu 4 pi^2 |k|^2)^gamma, gamma in (1/4, 1])."""
    k2 = basis.k_norm2()
    if kind == "laplacian":
        if nu is None or nu <= 0:
            raise InvalidParameterError("laplacian dissipation requires nu > 0")
        eig = -float(nu) * TWO_PI_SQ * k2
        params = (float(nu),)
    elif kind == "friction":
        if chi is None or chi <= 0:
            raise InvalidParameterError("friction dissipation requires chi > 0")
        eig = -float(chi) * np.ones(basis.size)
        params = (float(chi),)
    elif kind == "fractional":
        if nu is None or nu <= 0:
            raise InvalidParameterError("fractional dissipation requires nu > 0")
        if gamma is None or not (0.25 < gamma <= 1.0):
            raise InvalidParameterError("fractional exponent must lie in (1/4, 1]")
        eig = -((float(nu) * TWO_PI_SQ * k2) ** float(gamma))
        params = (float(nu), float(gamma))
    else:
        raise InvalidParameterError(f"unknown dissipation kind {kind!r}")
    return DiagonalOperator(basis=basis, eigenvalues=eig, kind=kind, params=params)


def c_epsilon(C, A, epsilon):
    """The epsilon-modified operator C + eps A as an ordinary DiagonalOperator."""
    if C.basis is not A.basis:
        raise BasisMismatchError("C and A on different bases")
    if not (0 < epsilon <= 1):
        raise InvalidParameterError("epsilon must lie in (0, 1]")
    return DiagonalOperator(
        basis=C.basis,
        eigenvalues=C.eigenvalues + epsilon * A.eigenvalues,
        kind="shifted",
        params=(C.kind, A.kind, float(epsilon)),
    )


@dataclass(frozen=True)
class CovarianceSpec:
    """Noise covariance: diagonal per mode or a dense PSD block on a subset."""

    basis: ModeBasis
    diagonal: np.ndarray | None = None          # (size,), >= 0
    block_indices: np.ndarray | None = None     # (nb,) basis element indices
    block: np.ndarray | None = None             # (nb, nb) symmetric PSD

    def __post_init__(self):
        if (self.diagonal is None) == (self.block is None):
            raise InvalidParameterError("specify exactly one of diagonal / dense block")
        if self.diagonal is not None:
            q = _frozen_array(self.diagonal, dtype=float)
            if q.shape != (self.basis.size,):
                raise InvalidParameterError("diagonal covariance does not match basis size")
            if np.any(q < 0):
                raise InvalidParameterError("diagonal covariance entries must be >= 0")
            object.__setattr__(self, "diagonal", q)
        else:
            idx = _frozen_array(self.block_indices, dtype=np.int64)
            blk = _frozen_array(self.block, dtype=float)
            nb = idx.shape[0]
            if nb == 0 or nb > MAX_DENSE_BLOCK:
                raise InvalidParameterError(
                    f"dense block size must be in [1, {MAX_DENSE_BLOCK}]")
            if len(np.unique(idx)) != nb or np.any(idx < 0) or np.any(idx >= self.basis.size):
                raise InvalidParameterError("block indices must be distinct valid element indices")
            if blk.shape != (nb, nb):
                raise InvalidParameterError("block matrix shape does not match index set")
            if np.max(np.abs(blk - blk.T)) > 1e-12:
                raise InvalidParameterError("dense covariance block must be symmetric")
            w = np.linalg.eigvalsh(blk)
            if w.min() < PSD_EIG_FLOOR:
                raise InvalidParameterError(
                    f"dense covariance block is not PSD (min eigenvalue {w.min():.3e})")
            object.__setattr__(self, "block_indices", idx)
            object.__setattr__(self, "block", blk)

    @property
    def is_diagonal(self):
        return self.diagonal is not None

    def trace(self):
        if self.is_diagonal:
            return float(self.diagonal.sum())
        return float(np.trace(self.block))

    def active_indices(self):
        """Element indices carrying noise."""
        if self.is_diagonal:
            return np.flatnonzero(self.diagonal)
        return np.asarray(self.block_indices)

    def dense_on(self, indices):
        """The covariance restricted to ``indices`` as a dense matrix."""
        indices = np.asarray(indices)
        if self.is_diagonal:
            return np.diag(self.diagonal[indices])
        out = np.zeros((indices.size, indices.size))
        pos = {int(b): i for i, b in enumerate(self.block_indices)}
        for a, ia in enumerate(indices):
            for c, ic in enumerate(indices):
                if int(ia) in pos and int(ic) in pos:
                    out[a, c] = self.block[pos[int(ia)], pos[int(ic)]]
        return out

    def scaled(self, factor):
        if factor < 0:
            raise InvalidParameterError("covariance scaling must be >= 0")
        if self.is_diagonal:
            return CovarianceSpec(self.basis, diagonal=self.diagonal * factor)
        return CovarianceSpec(self.basis, block_indices=self.block_indices,
                              block=self.block * factor)


def diagonal_covariance(basis, entries):
    """Diagonal covariance from (k, parity, q) triples; unlisted modes get 0."""
    q = np.zeros(basis.size)
    for k, parity, value in entries:
        if value < 0:
            raise InvalidParameterError("variance entries must be >= 0")
        q[basis.index_of(k, parity)] += float(value)
    return CovarianceSpec(basis, diagonal=q)


def zero_covariance(basis):
    return CovarianceSpec(basis, diagonal=np.zeros(basis.size))


def dense_covariance(basis, entries, matrix):
    """Dense covariance block over the declared (k, parity) mode subset."""
    idx = np.array([basis.index_of(k, p) for k, p in entries], dtype=np.int64)
    return CovarianceSpec(basis, block_indices=idx, block=np.asarray(matrix, dtype=float))


def make_QN(N, delta, c_kappa, basis):
    """Shell covariance supported on N <= |k| <= 2N with |k|^{-delta} weights.

    The normalization makes trace(Q_N) = 2 c_kappa^2 (one factor per parity)
    independently of N.
    """
    if N < 1:
        raise InvalidParameterError("shell index N must be >= 1")
    if delta < 0:
        raise InvalidParameterError("delta must be >= 0")
    if c_kappa <= 0:
        raise InvalidParameterError("c_kappa must be > 0")
    k2 = (basis.kvecs**2).sum(axis=1).astype(float)
    shell = (k2 >= N * N) & (k2 <= 4 * N * N)
    if not np.any(shell):
        raise InvalidParameterError(
            f"shell N={N} does not intersect the truncated lattice (K={basis.K})")
    weights = np.zeros(basis.nk)
    weights[shell] = k2[shell] ** (-delta)
    weights /= weights.sum()
    q = np.repeat(c_kappa**2 * weights, 2)
    return CovarianceSpec(basis, diagonal=q)


def check_commute(C: DiagonalOperator, Q: CovarianceSpec):
    """Return (commutes, residual) for the commutator [C, Q].

    Diagonal Q commutes with any diagonal C; a dense block commutes iff its
    off-diagonal couplings only connect modes with equal C-eigenvalue.
    """
    if C.basis is not Q.basis:
        raise BasisMismatchError("operator and covariance on different bases")
    if Q.is_diagonal:
        return True, 0.0
    lam = C.eigenvalues[Q.block_indices]
    comm = (lam[:, None] - lam[None, :]) * Q.block
    residual = float(np.max(np.abs(comm)))
    return residual <= 1e-12, residual


@dataclass(frozen=True)
class InvariantMeasure:
    """The stationary Gaussian law N(0, Q_inf) of the damped linear dynamics."""

    basis: ModeBasis
    diagonal: np.ndarray | None = None
    block_indices: np.ndarray | None = None
    block: np.ndarray | None = None
    lyapunov_residual: float = 0.0
    _sqrt_block: np.ndarray | None = field(default=None, repr=False)

    @property
    def is_diagonal(self):
        return self.diagonal is not None

    def trace(self):
        if self.is_diagonal:
            return float(self.diagonal.sum())
        return float(np.trace(self.block))

    def variance_of(self, elem_idx):
        if self.is_diagonal:
            return float(self.diagonal[elem_idx])
        pos = np.flatnonzero(self.block_indices == elem_idx)
        return float(self.block[pos[0], pos[0]]) if pos.size else 0.0

    def quadratic_mean(self, A2, indices=None):
        """Tr(Q_inf A2) for a symmetric matrix over the full basis."""
        if self.is_diagonal:
            return float(np.sum(self.diagonal * np.diag(A2)))
        idx = self.block_indices
        sub = A2[np.ix_(idx, idx)]
        return float(np.sum(self.block * sub))

    def eigenpairs(self):
        """(sigma_m, field coefficient vector) pairs spanning Q_inf.

        Only strictly positive directions are returned.
        """
        out = []
        if self.is_diagonal:
            for m in np.flatnonzero(self.diagonal > 0):
                vec = np.zeros(self.basis.size)
                vec[m] = 1.0
                out.append((float(self.diagonal[m]), vec))
            return out
        w, V = np.linalg.eigh(self.block)
        for i in range(w.size):
            if w[i] > 1e-14 * max(1.0, w.max()):
                vec = np.zeros(self.basis.size)
                vec[self.block_indices] = V[:, i]
                out.append((float(w[i]), vec))
        return out


def invariant_covariance(C: DiagonalOperator, Q: CovarianceSpec) -> InvariantMeasure:
    """Solve C Q_inf + Q_inf C = -Q for the stationary covariance.

    Diagonal case: sigma_k = q_k / (2 lambda_k).  Dense case: entrywise
    division by (lambda_i + lambda_j) over the block.
    """
    if C.basis is not Q.basis:
        raise BasisMismatchError("operator and covariance on different bases")
    lam = C.rates
    if Q.is_diagonal:
        sigma = Q.diagonal / (2.0 * lam)
        return InvariantMeasure(C.basis, diagonal=_frozen_array(sigma))
    idx = Q.block_indices
    lam_b = lam[idx]
    X = Q.block / (lam_b[:, None] + lam_b[None, :])
    residual = float(np.max(np.abs(-lam_b[:, None] * X - X * lam_b[None, :] + Q.block)))
    if residual > LYAPUNOV_TOL:
        raise NumericFailureError(f"Lyapunov residual {residual:.3e} exceeds {LYAPUNOV_TOL:.0e}")
    if np.max(np.abs(X - X.T)) > 1e-12:
        raise NumericFailureError("invariant covariance lost symmetry")
    w, V = np.linalg.eigh(X)
    if w.min() < PSD_EIG_FLOOR:
        raise NumericFailureError("invariant covariance is not PSD")
    w = np.clip(w, 0.0, None)
    sqrt_block = (V * np.sqrt(w)) @ V.T
    return InvariantMeasure(
        C.basis,
        block_indices=idx,
        block=_frozen_array(X),
        lyapunov_residual=residual,
        _sqrt_block=_frozen_array(sqrt_block),
    )


def sample_invariant(mu: InvariantMeasure, rng) -> SpectralField:
    """Draw w = Q_inf^{1/2} xi with xi i.i.d. standard normal per mode."""
    coeffs = sample_invariant_many(mu, rng, 1)[0]
    return SpectralField(mu.basis, coeffs)


def sample_invariant_many(mu: InvariantMeasure, rng, n) -> np.ndarray:
    """n independent samples as an (n, size) coefficient array."""
    if mu.is_diagonal:
        xi = rng.standard_normal((n, mu.basis.size))
        return xi * np.sqrt(mu.diagonal)
    xi = rng.standard_normal((n, mu.block_indices.size))
    out = np.zeros((n, mu.basis.size))
    out[:, mu.block_indices] = xi @ mu._sqrt_block.T
    return out


def sqrt_columns(Q: CovarianceSpec):
    """Columns of Q^{1/2} over the active modes, as (n_active, size) coefficients.

    For a diagonal covariance these are sqrt(q_k) e_k; for a dense block the
    symmetric square root columns embedded in the full coefficient space.
    """
    idx = Q.active_indices()
    cols = np.zeros((idx.size, Q.basis.size))
    if Q.is_diagonal:
        cols[np.arange(idx.size), idx] = np.sqrt(Q.diagonal[idx])
        return idx, cols
    w, V = np.linalg.eigh(Q.block)
    w = np.clip(w, 0.0, None)
    root = (V * np.sqrt(w)) @ V.T
    for j in range(idx.size):
        cols[j, Q.block_indices] = root[:, j]
    return idx, cols


def quadrature_invariant_oracle(C, Q, horizon=40.0, steps=200_000):
    """Brute-force Q_inf = int_0^T e^{Ct} Q e^{Ct} dt by composite trapezoid.

    Test oracle only; dense blocks and diagonal covariances both supported.
    """
    lam = C.rates
    if Q.is_diagonal:
        idx = np.flatnonzero(Q.diagonal)
        qmat = np.diag(Q.diagonal[idx])
    else:
        idx = np.asarray(Q.block_indices)
        qmat = np.asarray(Q.block)
    lam_b = lam[idx]
    ts = np.linspace(0.0, horizon, steps + 1)
    w = np.ones(steps + 1)
    w[0] = w[-1] = 0.5
    decay = np.exp(-np.outer(ts, lam_b))                    # (steps+1, nb)
    acc = np.einsum("t,ti,ij,tj->ij", w, decay, qmat, decay)
    return idx, acc * (horizon / steps)
