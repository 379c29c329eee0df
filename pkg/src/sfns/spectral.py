"""Truncated Fourier representation of divergence-free velocity fields on T².

Conventions
-----------
The torus is [0,1)² and the basis elements are

    e_{k,cos}(x) = sqrt(2) a_k cos(2 pi k.x),
    e_{k,sin}(x) = sqrt(2) a_k sin(2 pi k.x),

with k ranging over a half-lattice of integer wavevectors (kx > 0, or
kx == 0 and ky > 0), |k|_inf <= K, and a_k = (-ky, kx)/|k| the unit vector
perpendicular to k (so a_{-k} = -a_k).  Every element is zero-mean,
divergence-free and the family is orthonormal in L².

Fields are stored as real coefficient vectors over this basis, ordered by
(|k|², kx, ky) with the cos element preceding the sin element of each
wavevector.  The advection bilinearity b(u,v) = -P (u.grad) v (P = Leray
projection) is computed alias-free on a padded grid (N >= 3K+1), so the
antisymmetry identities hold to rounding.  A closed-form two-mode product
path is used for the mode-indexed operator sums built on top of b.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    BasisMismatchError,
    InvalidOperatorError,
    InvalidParameterError,
    NumericFailureError,
)

TWO_PI = 2.0 * np.pi
SQRT2 = np.sqrt(2.0)

#: hard cap on the truncation level (guards against accidental huge grids)
MAX_TRUNCATION = 64

COS, SIN = 0, 1


def _next_fast_len(n):
    """Smallest 5-smooth integer >= n (keeps FFT sizes cheap)."""
    while True:
        m = n
        for p in (2, 3, 5):
            while m % p == 0:
                m //= p
        if m == 1:
            return n
        n += 1


def _frozen_array(a, dtype=None):
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ModeBasis:
    """Ordered divergence-free trigonometric basis at truncation level K."""

    K: int
    kvecs: np.ndarray          # (nk, 2) int, half-lattice representatives
    perp: np.ndarray           # (nk, 2) float, unit a_k
    grid_n: int                # padded grid size for alias-free products

    def __post_init__(self):
        # lookup table (kx, ky+K) -> half-lattice row, -1 if absent
        lut = np.full((self.K + 1, 2 * self.K + 1), -1, dtype=np.int64)
        lut[self.kvecs[:, 0], self.kvecs[:, 1] + self.K] = np.arange(self.nk)
        object.__setattr__(self, "_lut", _frozen_array(lut))
        n = self.grid_n
        object.__setattr__(self, "_ix", _frozen_array(self.kvecs[:, 0] % n))
        object.__setattr__(self, "_iy", _frozen_array(self.kvecs[:, 1] % n))
        object.__setattr__(self, "_ixm", _frozen_array((-self.kvecs[:, 0]) % n))
        object.__setattr__(self, "_iym", _frozen_array((-self.kvecs[:, 1]) % n))
        freq = np.fft.fftfreq(n, d=1.0 / n)
        object.__setattr__(self, "_mx", _frozen_array(freq[:, None]))
        object.__setattr__(self, "_my", _frozen_array(freq[None, :]))

    @property
    def nk(self):
        return self.kvecs.shape[0]

    @property
    def size(self):
        """Number of basis elements (two parities per wavevector)."""
        return 2 * self.nk

    def k_norm2(self):
        """|k|² per basis element."""
        n2 = (self.kvecs ** 2).sum(axis=1).astype(float)
        return np.repeat(n2, 2)

    def element_labels(self):
        """Human-readable labels, e.g. '(1,0)cos', in basis order."""
        out = []
        for kx, ky in self.kvecs:
            out.append(f"({kx},{ky})cos")
            out.append(f"({kx},{ky})sin")
        return out

    def index_of(self, k, parity):
        """Basis index of element (k, parity); parity is 'cos'/'sin' or 0/1.

        Only canonical half-lattice representatives are accepted.
        """
        kx, ky = int(k[0]), int(k[1])
        p = {"cos": COS, "sin": SIN}.get(parity, parity)
        if kx < 0 or (kx == 0 and ky < 0):
            raise InvalidParameterError(
                f"({kx},{ky}) is not a half-lattice representative; use ({-kx},{-ky})")
        if not (0 <= kx <= self.K and abs(ky) <= self.K):
            raise InvalidParameterError(f"wavevector ({kx},{ky}) outside truncation K={self.K}")
        row = self._lut[kx, ky + self.K]
        if row < 0:
            raise InvalidParameterError(f"wavevector ({kx},{ky}) not in half-lattice")
        return 2 * int(row) + int(p)

    # -- grid transforms ---------------------------------------------------

    def to_grid_coeffs(self, coeffs):
        """Complex Fourier coefficients on the padded grid, shape (..., 2, n, n)."""
        c = np.asarray(coeffs, dtype=float)
        batch = c.shape[:-1]
        n = self.grid_n
        z = (c[..., 0::2] - 1j * c[..., 1::2]) / SQRT2     # (..., nk)
        za = z[..., None, :] * self.perp.T                 # (..., 2, nk)
        grid = np.zeros(batch + (2, n, n), dtype=complex)
        grid[..., :, self._ix, self._iy] = za
        grid[..., :, self._ixm, self._iym] = np.conj(za)
        return grid

    def from_grid_coeffs(self, grid):
        """Read basis coefficients back off a complex coefficient grid.

        Dotting with a_k both Leray-projects and truncates, so this is the
        orthogonal projection onto the basis span.
        """
        fk = grid[..., :, self._ix, self._iy]              # (..., 2, nk)
        proj = np.einsum("...ck,kc->...k", fk, self.perp)
        out = np.empty(grid.shape[:-3] + (self.size,), dtype=float)
        out[..., 0::2] = SQRT2 * proj.real
        out[..., 1::2] = -SQRT2 * proj.imag
        return out

    def to_physical(self, coeffs):
        """Sample the velocity field on the padded grid, shape (..., 2, n, n)."""
        grid = self.to_grid_coeffs(coeffs)
        return np.fft.ifft2(grid, axes=(-2, -1)).real * self.grid_n ** 2


def make_basis(K, hard_cap=MAX_TRUNCATION):
    """Build the divergence-free basis for the truncation |k|_inf <= K."""
    if not isinstance(K, (int, np.integer)) or K < 1:
        raise InvalidParameterError(f"truncation level must be a positive integer, got {K!r}")
    if K > hard_cap:
        raise InvalidParameterError(f"truncation level {K} exceeds hard cap {hard_cap}")
    ks = []
    for kx in range(0, K + 1):
        for ky in range(-K, K + 1):
            if (kx, ky) == (0, 0):
                continue
            if kx > 0 or ky > 0:
                ks.append((kx, ky))
    ks.sort(key=lambda k: (k[0] ** 2 + k[1] ** 2, k[0], k[1]))
    kvecs = np.array(ks, dtype=np.int64)
    norm = np.sqrt((kvecs ** 2).sum(axis=1))
    perp = np.stack([-kvecs[:, 1], kvecs[:, 0]], axis=1) / norm[:, None]
    return ModeBasis(
        K=int(K),
        kvecs=_frozen_array(kvecs),
        perp=_frozen_array(perp),
        grid_n=_next_fast_len(3 * K + 1),
    )


@dataclass(frozen=True)
class SpectralField:
    """Immutable real coefficient vector over a ModeBasis."""

    basis: ModeBasis
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape != (self.basis.size,):
            raise InvalidParameterError(
                f"coefficient vector has shape {c.shape}, expected ({self.basis.size},)")
        if not np.all(np.isfinite(c)):
            raise InvalidParameterError("non-finite coefficient in spectral field")
        if c is self.coeffs and c.flags.writeable:
            c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    def __add__(self, other):
        self._check(other)
        return SpectralField(self.basis, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._check(other)
        return SpectralField(self.basis, self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        return SpectralField(self.basis, self.coeffs * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralField(self.basis, -self.coeffs)

    def _check(self, other):
        if other.basis is not self.basis:
            raise BasisMismatchError("fields live on different bases")

    def inner(self, other):
        """L² inner product (the basis is orthonormal)."""
        self._check(other)
        return float(np.dot(self.coeffs, other.coeffs))

    def norm(self):
        return float(np.linalg.norm(self.coeffs))

    def with_coeffs(self, coeffs):
        return SpectralField(self.basis, coeffs)


def zero_field(basis):
    return SpectralField(basis, np.zeros(basis.size))


def unit_field(basis, k, parity):
    """The basis element (k, parity) as a SpectralField."""
    c = np.zeros(basis.size)
    c[basis.index_of(k, parity)] = 1.0
    return SpectralField(basis, c)


def field_from_entries(basis, entries):
    """Field from a list of (k, parity, value) triples."""
    c = np.zeros(basis.size)
    for k, parity, value in entries:
        c[basis.index_of(k, parity)] += float(value)
    return SpectralField(basis, c)


# -- Leray projection -------------------------------------------------------

def leray_project(basis, raw_grid):
    """Project raw vector Fourier coefficients onto the divergence-free span.

    ``raw_grid`` is a complex array of shape (2, n, n) in numpy fft2 layout on
    the basis grid (n = basis.grid_n).  A zero mode in the input is allowed
    and removed.  Returns a SpectralField.
    """
    raw_grid = np.asarray(raw_grid, dtype=complex)
    n = basis.grid_n
    if raw_grid.shape != (2, n, n):
        raise InvalidParameterError(f"raw grid must have shape (2, {n}, {n})")
    if not np.all(np.isfinite(raw_grid.view(float))):
        raise NumericFailureError("non-finite entry in raw coefficient grid")
    return SpectralField(basis, basis.from_grid_coeffs(raw_grid))


def grid_inner(a, b):
    """Parseval inner product of two coefficient grids (real fields)."""
    return float(np.real(np.sum(np.conj(a) * b)))


def spectral_divergence(basis, field):
    """Complex coefficients of div(field) on the grid (should vanish)."""
    grid = basis.to_grid_coeffs(field.coeffs)
    return TWO_PI * 1j * (basis._mx * grid[0] + basis._my * grid[1])


# -- nonlinear advection ----------------------------------------------------

def nonlinear_b_many(basis, U, V):
    """Alias-free b(u,v) = -P (u.grad) v for batched coefficient arrays.

    U, V have shape (..., size); broadcasting batch dimensions must match.
    """
    n = basis.grid_n
    gu = basis.to_grid_coeffs(U)
    gv = basis.to_grid_coeffs(V)
    u_phys = np.fft.ifft2(gu, axes=(-2, -1)).real * n * n
    dx = TWO_PI * 1j * basis._mx * gv
    dy = TWO_PI * 1j * basis._my * gv
    dvx = np.fft.ifft2(dx, axes=(-2, -1)).real * n * n
    dvy = np.fft.ifft2(dy, axes=(-2, -1)).real * n * n
    adv = u_phys[..., 0:1, :, :] * dvx + u_phys[..., 1:2, :, :] * dvy
    ghat = np.fft.fft2(adv, axes=(-2, -1)) / (n * n)
    return basis.from_grid_coeffs(-ghat)


def nonlinear_b(u, v):
    """Galerkin-projected advection b(u,v) of two fields on the same basis."""
    if u.basis is not v.basis:
        raise BasisMismatchError("b(u, v) requires both fields on the same basis")
    return SpectralField(u.basis, nonlinear_b_many(u.basis, u.coeffs, v.coeffs))


# -- closed-form two-mode products ------------------------------------------

def _canonical(basis, mx, my, parity_sin):
    """Map integer wavevectors to (basis row, sign); row -1 where dropped.

    The caller dots against the perp vector of the *unflipped* wavevector;
    with a_{-k} = -a_k, the element identities e_{-k,cos} = -e_{k,cos} and
    e_{-k,sin} = +e_{k,sin} then require sign -1 on flipped cos outputs and
    +1 on flipped sin outputs.
    """
    K = basis.K
    flip = (mx < 0) | ((mx == 0) & (my < 0))
    cx = np.where(flip, -mx, mx)
    cy = np.where(flip, -my, my)
    sign = np.where(flip & ~parity_sin, -1.0, 1.0)
    ok = (cx <= K) & (np.abs(cy) <= K) & ((cx != 0) | (cy != 0))
    row = np.full(mx.shape, -1, dtype=np.int64)
    lut = basis._lut
    safe_x = np.where(ok, cx, 0)
    safe_y = np.where(ok, cy, 0)
    row[ok] = lut[safe_x[ok], safe_y[ok] + K]
    row = np.where(row >= 0, row, -1)
    return row, sign


# sign of the coefficient on k+l / k-l per (parity_u, parity_v); the output
# parity is sin when the parities agree and cos otherwise
_SIGN_PLUS = np.array([[1.0, -1.0], [-1.0, -1.0]])
_SIGN_MINUS = np.array([[-1.0, -1.0], [1.0, -1.0]])


def pair_products(basis, elem_i, elem_j):
    """Closed-form b(e_i, e_j) for arrays of basis-element index pairs.

    Returns (out_idx, coef), each of shape (2, n): the two candidate output
    elements (wavevectors k±l) with their coefficients; out_idx is -1 where
    the output falls outside the truncation or on the zero mode.
    """
    elem_i = np.asarray(elem_i, dtype=np.int64)
    elem_j = np.asarray(elem_j, dtype=np.int64)
    ri, pi = elem_i // 2, elem_i % 2
    rj, pj = elem_j // 2, elem_j % 2
    k = basis.kvecs[ri]
    l = basis.kvecs[rj]
    ak = basis.perp[ri]
    al = basis.perp[rj]
    kappa = TWO_PI * (ak[..., 0] * l[..., 0] + ak[..., 1] * l[..., 1])
    out_idx = np.empty((2,) + elem_i.shape, dtype=np.int64)
    coef = np.empty((2,) + elem_i.shape, dtype=float)
    p_out = np.where(pi == pj, SIN, COS)
    parity_sin = p_out == SIN
    for slot, (msign, table) in enumerate(((1, _SIGN_PLUS), (-1, _SIGN_MINUS))):
        mx = k[..., 0] + msign * l[..., 0]
        my = k[..., 1] + msign * l[..., 1]
        row, csign = _canonical(basis, mx, my, parity_sin)
        norm = np.sqrt(mx.astype(float) ** 2 + my.astype(float) ** 2)
        norm = np.where(norm == 0, 1.0, norm)
        am_x = -my / norm
        am_y = mx / norm
        al_dot_am = al[..., 0] * am_x + al[..., 1] * am_y
        s = table[pi, pj]
        coef[slot] = s * kappa * al_dot_am / SQRT2 * csign
        out_idx[slot] = np.where(row >= 0, 2 * row + p_out, -1)
    coef[out_idx < 0] = 0.0
    return out_idx, coef


def advect_modes(basis, elem_idx, weights, v_coeffs):
    """Vectorized sum_i weights[i] * b(e_{elem_idx[i]}, v) via pair products."""
    elem_idx = np.asarray(elem_idx, dtype=np.int64)
    weights = np.asarray(weights, dtype=float)
    support = np.flatnonzero(v_coeffs)
    out = np.zeros(basis.size)
    if support.size == 0 or elem_idx.size == 0:
        return out
    ii = np.repeat(elem_idx, support.size)
    ww = np.repeat(weights, support.size)
    jj = np.tile(support, elem_idx.size)
    out_idx, coef = pair_products(basis, ii, jj)
    vals = coef * (ww * v_coeffs[jj])
    for slot in range(2):
        good = out_idx[slot] >= 0
        np.add.at(out, out_idx[slot][good], vals[slot][good])
    return out


def nonlinear_b_pairwise(basis, x_coeffs, y_coeffs):
    """b(x, y) through the closed-form two-mode table, expanding supports.

    Identical to the transform path up to rounding, but structural zeros stay
    exactly zero; intended for small-support operands (noise directions,
    invariant-measure eigenfields).
    """
    sx = np.flatnonzero(x_coeffs)
    sy = np.flatnonzero(y_coeffs)
    out = np.zeros(basis.size)
    if sx.size == 0 or sy.size == 0:
        return out
    ii = np.repeat(sx, sy.size)
    jj = np.tile(sy, sx.size)
    out_idx, coef = pair_products(basis, ii, jj)
    vals = coef * (x_coeffs[ii] * y_coeffs[jj])
    for slot in range(2):
        good = out_idx[slot] >= 0
        np.add.at(out, out_idx[slot][good], vals[slot][good])
    return out


def double_advect_sum(basis, elem_idx, weights, v_coeffs):
    """sum_i weights[i] * b(e_i, b(e_i, v)), the building block of the
    corrector and eddy-viscosity sums; exact through the closed-form path."""
    elem_idx = np.asarray(elem_idx, dtype=np.int64)
    weights = np.asarray(weights, dtype=float)
    support = np.flatnonzero(v_coeffs)
    out = np.zeros(basis.size)
    if support.size == 0 or elem_idx.size == 0:
        return out
    ii = np.repeat(elem_idx, support.size)
    ww = np.repeat(weights, support.size)
    jj = np.tile(support, elem_idx.size)
    out_idx, coef = pair_products(basis, ii, jj)
    # intermediate entries (i, m) with value coef * v_m, advected once more by e_i
    for slot in range(2):
        good = out_idx[slot] >= 0
        mi = ii[good]
        mm = out_idx[slot][good]
        mv = coef[slot][good] * v_coeffs[jj[good]] * ww[good]
        oi, oc = pair_products(basis, mi, mm)
        for s2 in range(2):
            g2 = oi[s2] >= 0
            np.add.at(out, oi[s2][g2], oc[s2][g2] * mv[g2])
    return out


# -- Sobolev inner products --------------------------------------------------

def sobolev_inner(u, v, s, A):
    """H^s inner product sum_m (-alpha_m)^s u_m v_m through the operator A."""
    if u.basis is not v.basis or A.basis is not u.basis:
        raise BasisMismatchError("sobolev_inner requires a shared basis")
    eig = A.eigenvalues
    if np.any(eig >= 0):
        raise InvalidOperatorError("operator must be negative definite")
    w = (-eig) ** s if s != 0 else 1.0
    return float(np.sum(w * u.coeffs * v.coeffs))


def sobolev_norm2(u, s, A):
    return sobolev_inner(u, u, s, A)
