"""Time stepping for the coupled system, the limit dynamics and the eddy model.

All schemes are Lie splittings: the nonlinear drift is applied explicitly,
then the stiff linear part exactly through its diagonal exponential.  The
fast component and its linearised companion consume the *same* stochastic
convolution increment each step, which makes their difference a pathwise
quantity rather than a statistical one.  Steps are stable for every dt > 0
because the linear factors satisfy |e^{mu dt}| < 1.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    BasisMismatchError,
    DivergenceError,
    InvalidParameterError,
    UnsupportedConfigurationError,
)
from .limits import (
    LimitCoefficients,
    eddy_kappa_apply,
    strat_corrector_apply,
    transport_noise_increment,
)
from .operators import CovarianceSpec, DiagonalOperator, check_commute
from .ou import OUParams, convolution_variance
from .spectral import SpectralField, nonlinear_b, nonlinear_b_many, sobolev_norm2

DEFAULT_BLOWUP_CAP = 1e6


@dataclass(frozen=True)
class SlowFastParams:
    """Configuration of one coupled slow-fast trajectory."""

    epsilon: float
    A: DiagonalOperator
    C: DiagonalOperator
    Q: CovarianceSpec
    dt: float
    T: float
    u0: SpectralField
    y0: SpectralField
    seed: int = 0
    nonlinear: bool = True
    blowup_cap: float = DEFAULT_BLOWUP_CAP

    def __post_init__(self):
        if not (0 < self.epsilon <= 1):
            raise InvalidParameterError("epsilon must lie in (0, 1]")
        if self.dt <= 0 or self.T < self.dt:
            raise InvalidParameterError("require dt > 0 and T >= dt")
        basis = self.A.basis
        for obj in (self.C, self.Q, self.u0, self.y0):
            if obj.basis is not basis:
                raise BasisMismatchError("slow-fast components on different bases")

    @property
    def basis(self):
        return self.A.basis

    def ou_params(self):
        return OUParams(epsilon=self.epsilon, C=self.C, A=self.A, Q=self.Q)


@dataclass(frozen=True)
class SlowFastState:
    t: float
    u: SpectralField
    y: SpectralField
    Y: SpectralField


@dataclass(frozen=True)
class LimitParams:
    """Configuration of one limit-dynamics trajectory (Ito form)."""

    A: DiagonalOperator
    coeffs: LimitCoefficients
    dt: float
    T: float
    u0: SpectralField
    seed: int = 0
    nonlinear: bool = True
    blowup_cap: float = DEFAULT_BLOWUP_CAP

    def __post_init__(self):
        if self.dt <= 0 or self.T < self.dt:
            raise InvalidParameterError("require dt > 0 and T >= dt")
        if self.A.basis is not self.coeffs.basis or self.u0.basis is not self.A.basis:
            raise BasisMismatchError("limit components on different bases")

    @property
    def basis(self):
        return self.A.basis


@dataclass(frozen=True)
class EddyParams:
    """Configuration of the deterministic eddy-dissipation trajectory."""

    A: DiagonalOperator
    C: DiagonalOperator
    QN: CovarianceSpec
    dt: float
    T: float
    u0: SpectralField
    seed: int = 0
    nonlinear: bool = True
    blowup_cap: float = DEFAULT_BLOWUP_CAP

    def __post_init__(self):
        if self.dt <= 0 or self.T < self.dt:
            raise InvalidParameterError("require dt > 0 and T >= dt")
        basis = self.A.basis
        for obj in (self.C, self.QN, self.u0):
            if obj.basis is not basis:
                raise BasisMismatchError("eddy components on different bases")

    @property
    def basis(self):
        return self.A.basis


class _SharedNoise:
    """Per-step convolution increment shared by the fast state and its
    linearisation; diagonal noise or a commuting dense block."""

    def __init__(self, p: SlowFastParams, dt):
        ou = p.ou_params()
        mu = ou.drift_eigenvalues
        self.decay = np.exp(mu * dt)
        self.basis = p.basis
        if p.Q.is_diagonal:
            self.std = np.sqrt(convolution_variance(mu, p.Q.diagonal / p.epsilon, dt))
            self.block = None
        else:
            ok, residual = check_commute(p.C, p.Q)
            if not ok:
                raise UnsupportedConfigurationError(
                    f"slow-fast stepping requires [C, Q] = 0 for dense noise "
                    f"(residual {residual:.3e})")
            idx = p.Q.block_indices
            mu_b = mu[idx]
            msum = mu_b[:, None] + mu_b[None, :]
            V = (p.Q.block / p.epsilon) * np.expm1(msum * dt) / msum
            w, U = np.linalg.eigh(V)
            self.block = (U * np.sqrt(np.clip(w, 0.0, None))) @ U.T
            self.block_indices = idx

    def draw(self, rng):
        if self.block is None:
            return self.std * rng.standard_normal(self.basis.size)
        eta = np.zeros(self.basis.size)
        eta[self.block_indices] = self.block @ rng.standard_normal(
            self.block_indices.size)
        return eta


def _guard(coeffs, cap, label, step=None, t=None):
    norm = float(np.linalg.norm(coeffs))
    if not np.isfinite(norm) or norm > cap:
        raise DivergenceError(
            f"{label} norm {norm:.3e} exceeded blow-up cap {cap:.1e}", step=step, time=t)


def step_slowfast(state: SlowFastState, p: SlowFastParams, rng,
                  _noise: _SharedNoise | None = None) -> SlowFastState:
    """One splitting step of the coupled system.

    Slow: u' = e^{A dt} (u + dt [b(u,u) + eps^{-1/2} b(y,u)]).
    Fast: y' = e^{eps^{-1} C_eps dt} (y + dt [b(u,y) + eps^{-1/2} b(y,y)]) + eta.
    Linearised: Y' = e^{eps^{-1} C_eps dt} Y + eta, same eta.
    """
    noise = _noise if _noise is not None else _SharedNoise(p, p.dt)
    dt = p.dt
    u, y, Y = state.u.coeffs, state.y.coeffs, state.Y.coeffs
    basis = p.basis
    root_eps = np.sqrt(p.epsilon)
    exp_a = np.exp(p.A.eigenvalues * dt)
    if p.nonlinear:
        buu = nonlinear_b_many(basis, u, u)
        byu = nonlinear_b_many(basis, y, u)
        buy = nonlinear_b_many(basis, u, y)
        byy = nonlinear_b_many(basis, y, y)
        u_new = exp_a * (u + dt * (buu + byu / root_eps))
        y_mid = y + dt * (buy + byy / root_eps)
    else:
        u_new = exp_a * u
        y_mid = y
    eta = noise.draw(rng)
    y_new = noise.decay * y_mid + eta
    Y_new = noise.decay * Y + eta
    t_new = state.t + dt
    _guard(u_new, p.blowup_cap, "slow field", t=t_new)
    _guard(y_new, p.blowup_cap, "fast field", t=t_new)
    return SlowFastState(
        t=t_new,
        u=SpectralField(basis, u_new),
        y=SpectralField(basis, y_new),
        Y=SpectralField(basis, Y_new),
    )


def step_limit(u: SpectralField, coeffs: LimitCoefficients, A: DiagonalOperator,
               dt, rng, *, nonlinear=True, blowup_cap=DEFAULT_BLOWUP_CAP) -> SpectralField:
    """Exponential Euler-Maruyama step of the Ito-form limit dynamics.

    Drift: b(u,u) + S(u) + b(r,u); noise: sum_k b(g_k, u) dW_k with
    Var(dW_k) = dt; linear part exact.
    """
    if dt <= 0:
        raise InvalidParameterError("dt must be positive")
    drift = strat_corrector_apply(coeffs, u)
    if nonlinear:
        drift = drift + nonlinear_b(u, u)
    if coeffs.r.norm() > 0:
        drift = drift + nonlinear_b(coeffs.r, u)
    dW = np.sqrt(dt) * rng.standard_normal(coeffs.active.size)
    noise = transport_noise_increment(coeffs, u, dW)
    exp_a = np.exp(A.eigenvalues * dt)
    out = exp_a * (u.coeffs + dt * drift.coeffs + noise.coeffs)
    _guard(out, blowup_cap, "limit field")
    return SpectralField(u.basis, out)


def step_eddy_deterministic(u: SpectralField, QN: CovarianceSpec,
                            C: DiagonalOperator, A: DiagonalOperator, dt, *,
                            nonlinear=True,
                            blowup_cap=DEFAULT_BLOWUP_CAP) -> SpectralField:
    """Deterministic exponential Euler step with drift b(u,u) + kappa_N(u)."""
    if dt <= 0:
        raise InvalidParameterError("dt must be positive")
    drift = eddy_kappa_apply(QN, C, u)
    if nonlinear:
        drift = drift + nonlinear_b(u, u)
    exp_a = np.exp(A.eigenvalues * dt)
    out = exp_a * (u.coeffs + dt * drift.coeffs)
    _guard(out, blowup_cap, "eddy field")
    return SpectralField(u.basis, out)


# -- observables and trajectory records ---------------------------------------

SLOWFAST_ONLY = {"fast_energy", "linearisation_gap", "fast_diss_c", "fast_diss_h1"}
OBSERVABLE_KINDS = {"pairing", "energy"} | SLOWFAST_ONLY


@dataclass(frozen=True)
class ObservableSpec:
    """What to record along a trajectory.

    kinds: 'pairing' (<u, h>), 'energy' (||u||^2), 'fast_energy' (||y||^2),
    'linearisation_gap' (eps^{-1} int ||y - Y||^2 dt, cumulative),
    'fast_diss_c' (int ||(-C)^{1/2} y||^2 dt), 'fast_diss_h1'
    (int ||y||_{H^1}^2 dt).
    """

    kind: str
    h: SpectralField | None = None
    stride: int = 1
    name: str | None = None

    def __post_init__(self):
        if self.kind not in OBSERVABLE_KINDS:
            raise InvalidParameterError(f"unknown observable kind {self.kind!r}")
        if self.kind == "pairing" and self.h is None:
            raise InvalidParameterError("pairing observable requires a test field h")
        if self.stride < 1:
            raise InvalidParameterError("stride must be >= 1")
        if self.name is None:
            object.__setattr__(self, "name", self.kind)

    def validate_for(self, kind, basis):
        if self.kind in SLOWFAST_ONLY and kind != "slowfast":
            raise InvalidParameterError(
                f"observable {self.kind!r} requires a slow-fast trajectory")
        if self.h is not None and self.h.basis is not basis:
            raise BasisMismatchError("observable test field on a different basis")


@dataclass
class TrajectoryRecord:
    kind: str
    dt: float
    n_steps: int
    times: dict
    values: dict
    final_state: object = None


class _Accumulators:
    """Trapezoidal accumulators for the cumulative slow-fast observables."""

    def __init__(self, p: SlowFastParams):
        self.p = p
        self.gap = 0.0
        self.diss_c = 0.0
        self.diss_h1 = 0.0
        self._prev = None

    def _pointwise(self, state):
        p = self.p
        zeta = state.y - state.Y
        return (
            zeta.norm() ** 2 / p.epsilon,
            sobolev_norm2(state.y, 1.0, p.C),
            sobolev_norm2(state.y, 1.0, p.A),
        )

    def start(self, state):
        self._prev = self._pointwise(state)

    def advance(self, state, dt):
        cur = self._pointwise(state)
        self.gap += 0.5 * dt * (self._prev[0] + cur[0])
        self.diss_c += 0.5 * dt * (self._prev[1] + cur[1])
        self.diss_h1 += 0.5 * dt * (self._prev[2] + cur[2])
        self._prev = cur


def _observe(obs, kind, state, acc):
    if obs.kind == "pairing":
        u = state.u if kind == "slowfast" else state
        return u.inner(obs.h)
    if obs.kind == "energy":
        u = state.u if kind == "slowfast" else state
        return u.norm() ** 2
    if obs.kind == "fast_energy":
        return state.y.norm() ** 2
    if obs.kind == "linearisation_gap":
        return acc.gap
    if obs.kind == "fast_diss_c":
        return acc.diss_c
    if obs.kind == "fast_diss_h1":
        return acc.diss_h1
    raise InvalidParameterError(obs.kind)


def resolve_steps(T, dt):
    """Number of steps and the effective dt; warns when T/dt is not integral."""
    n = max(1, int(round(T / dt)))
    if abs(n * dt - T) > 1e-9 * max(T, 1.0):
        warnings.warn(
            f"horizon T={T} is not an integer multiple of dt={dt}; "
            f"using {n} steps of dt={T / n}",
            stacklevel=3,
        )
    return n, T / n


def run_trajectory(kind, params, observables, rng=None) -> TrajectoryRecord:
    """Step to the horizon, sampling observables at their strides.

    Deterministic given (params, rng); the record's values are keyed by
    observable name.
    """
    if kind not in ("slowfast", "limit", "eddy"):
        raise InvalidParameterError(f"unknown trajectory kind {kind!r}")
    basis = params.basis
    for obs in observables:
        obs.validate_for(kind, basis)
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(params.seed))
    n_steps, dt = resolve_steps(params.T, params.dt)
    if dt != params.dt:
        params = replace(params, dt=dt)

    times = {obs.name: [] for obs in observables}
    values = {obs.name: [] for obs in observables}

    if kind == "slowfast":
        state = SlowFastState(0.0, params.u0, params.y0,
                              params.y0.with_coeffs(np.zeros(basis.size)))
        acc = _Accumulators(params)
        acc.start(state)
        noise = _SharedNoise(params, dt)
    elif kind == "limit":
        state = params.u0
        acc = None
    else:
        state = params.u0
        acc = None

    def record(step_idx, t):
        for obs in observables:
            if step_idx % obs.stride == 0 or step_idx == n_steps:
                times[obs.name].append(t)
                values[obs.name].append(_observe(obs, kind, state, acc))

    record(0, 0.0)
    for step_idx in range(1, n_steps + 1):
        try:
            if kind == "slowfast":
                state = step_slowfast(state, params, rng, _noise=noise)
                acc.advance(state, dt)
            elif kind == "limit":
                state = step_limit(state, params.coeffs, params.A, dt, rng,
                                   nonlinear=params.nonlinear,
                                   blowup_cap=params.blowup_cap)
            else:
                state = step_eddy_deterministic(
                    state, params.QN, params.C, params.A, dt,
                    nonlinear=params.nonlinear, blowup_cap=params.blowup_cap)
        except DivergenceError as err:
            raise DivergenceError(str(err), step=step_idx,
                                  time=step_idx * dt) from None
        record(step_idx, step_idx * dt)

    return TrajectoryRecord(
        kind=kind,
        dt=dt,
        n_steps=n_steps,
        times={k: np.asarray(v) for k, v in times.items()},
        values={k: np.asarray(v) for k, v in values.items()},
        final_state=state,
    )
