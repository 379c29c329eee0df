"""Ensemble execution, estimators and distributional comparisons.

Replica seeds are derived deterministically from the master seed and the
replica index, so results are independent of execution order.  Convergence
in law is probed through finitely many pairing observables <u_T, h>: the
two-sample Kolmogorov-Smirnov distance between ensembles is the falsifiable
surrogate for the path-space statement.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import (
    DivergenceError,
    EnsembleDivergenceError,
    InsufficientSamplesError,
    InvalidParameterError,
)
from .integrators import run_trajectory

MIN_COMPARE_SAMPLES = 30


def replica_rng(master_seed, replica_index):
    """Deterministic per-replica generator: hash of (master seed, index)."""
    ss = np.random.SeedSequence(entropy=int(master_seed),
                                spawn_key=(int(replica_index),))
    return np.random.default_rng(ss)


def params_fingerprint(kind, params):
    """Stable hex digest of a trajectory configuration."""
    h = hashlib.sha256()
    h.update(kind.encode())

    def feed(x):
        if isinstance(x, np.ndarray):
            h.update(np.ascontiguousarray(x).tobytes())
        elif isinstance(x, (int, float, bool, str)):
            h.update(repr(x).encode())

    for name in sorted(vars(params)):
        value = getattr(params, name)
        h.update(name.encode())
        if hasattr(value, "coeffs"):
            feed(value.coeffs)
        elif hasattr(value, "eigenvalues"):
            feed(value.eigenvalues)
        elif hasattr(value, "diagonal") and value.diagonal is not None:
            feed(value.diagonal)
        elif hasattr(value, "block") and getattr(value, "block", None) is not None:
            feed(value.block_indices)
            feed(value.block)
        elif hasattr(value, "Q"):       # LimitCoefficients
            feed(value.C.eigenvalues)
            if value.Q.is_diagonal:
                feed(value.Q.diagonal)
            else:
                feed(value.Q.block_indices)
                feed(value.Q.block)
        else:
            feed(value)
    return h.hexdigest()[:16]


@dataclass
class EnsembleResult:
    """Per-observable sample matrices (replica x time) with their time grids."""

    kind: str
    fingerprint: str
    master_seed: int
    n_replicas: int
    times: dict
    samples: dict
    meta: dict

    def at_time(self, observable, t):
        if observable not in self.samples:
            raise InvalidParameterError(f"observable {observable!r} not recorded")
        grid = self.times[observable]
        idx = int(np.argmin(np.abs(grid - t)))
        if abs(grid[idx] - t) > 1e-9 * max(1.0, abs(t)) + 1e-12:
            raise InvalidParameterError(
                f"time {t} not on the recorded grid for {observable!r}")
        return self.samples[observable][:, idx]

    def final(self, observable):
        return self.samples[observable][:, -1]


def ensemble_meta(kind, params):
    meta = {"dt": params.dt, "T": params.T}
    if kind == "slowfast":
        meta.update(
            epsilon=params.epsilon,
            trace_q=params.Q.trace(),
            y0_norm2=params.y0.norm() ** 2,
        )
    return meta


def assemble_result(kind, params, master_seed, times, rows_by_index) -> EnsembleResult:
    """Build an EnsembleResult from per-replica value dicts keyed by index."""
    return EnsembleResult(
        kind=kind,
        fingerprint=params_fingerprint(kind, params),
        master_seed=int(master_seed),
        n_replicas=len(rows_by_index),
        times=times or {},
        samples={
            name: np.stack([rows_by_index[i][name] for i in sorted(rows_by_index)])
            for name in (times or {})
        },
        meta=ensemble_meta(kind, params),
    )


def run_ensemble(kind, params, observables, n_replicas, master_seed,
                 replica_indices=None) -> EnsembleResult:
    """Run independent replicas with derived seeds; aggregation is
    order-independent because samples are keyed by replica index."""
    if n_replicas < 2:
        raise InvalidParameterError("an ensemble needs at least 2 replicas")
    indices = range(n_replicas) if replica_indices is None else replica_indices
    rows = {}
    failures = []
    times = None
    for i in indices:
        try:
            rec = run_trajectory(kind, params, observables, rng=replica_rng(master_seed, i))
        except DivergenceError as err:
            failures.append((i, str(err)))
            continue
        rows[i] = rec.values
        if times is None:
            times = rec.times
    result = assemble_result(kind, params, master_seed, times, rows)
    if failures:
        raise EnsembleDivergenceError(
            f"{len(failures)} replica(s) diverged: "
            + ", ".join(f"#{i} ({msg})" for i, msg in failures),
            failed_replicas=[i for i, _ in failures],
            partial=result,
        )
    return result


# -- two-sample statistics ----------------------------------------------------

def ks_distance(x, y):
    """sup |F_x - F_y| over the pooled sample points."""
    x = np.sort(np.asarray(x, dtype=float))
    y = np.sort(np.asarray(y, dtype=float))
    pooled = np.concatenate([x, y])
    cdf_x = np.searchsorted(x, pooled, side="right") / x.size
    cdf_y = np.searchsorted(y, pooled, side="right") / y.size
    return float(np.max(np.abs(cdf_x - cdf_y)))


def ks_critical_value(n, m, alpha=0.01):
    """Asymptotic two-sample critical value c(alpha) sqrt((n+m)/(n m))."""
    c = np.sqrt(-0.5 * np.log(alpha / 2.0))
    return float(c * np.sqrt((n + m) / (n * m)))


@dataclass
class LawComparison:
    observable: str
    t: float
    mean_diff: float
    var_diff: float
    ks_distance: float
    se_mean: float
    n_a: int
    n_b: int


def compare_laws(a: EnsembleResult, b: EnsembleResult, observable, t) -> LawComparison:
    """Distributional comparison of one observable at one time."""
    xa = a.at_time(observable, t)
    xb = b.at_time(observable, t)
    if min(xa.size, xb.size) < MIN_COMPARE_SAMPLES:
        raise InsufficientSamplesError(
            f"need at least {MIN_COMPARE_SAMPLES} samples per side, "
            f"got {xa.size} and {xb.size}")
    va = xa.var(ddof=1)
    vb = xb.var(ddof=1)
    return LawComparison(
        observable=observable,
        t=float(t),
        mean_diff=float(xa.mean() - xb.mean()),
        var_diff=float(va - vb),
        ks_distance=ks_distance(xa, xb),
        se_mean=float(np.sqrt(va / xa.size + vb / xb.size)),
        n_a=int(xa.size),
        n_b=int(xb.size),
    )


# -- fast-component energy balance --------------------------------------------

@dataclass
class EnergyBalanceReport:
    """Residual of E||y_T||^2 + 2 eps^{-1} I_C + 2 I_{H1} - ||y_0||^2
    - eps^{-1} Tr(Q) T, with its standard error and term ledger."""

    residual_mean: float
    residual_se: float
    terms: dict
    dt: float
    bias_budget: float | None = None

    @property
    def within(self):
        budget = 3.0 * self.residual_se + (self.bias_budget or 0.0)
        return abs(self.residual_mean) <= budget


def energy_balance_report(res: EnsembleResult, res_half_dt=None) -> EnergyBalanceReport:
    """Check the expectation identity of the fast energy on a slow-fast ensemble.

    When a dt-halved companion ensemble is supplied, the first-order bias of
    the coarse run is estimated by Richardson extrapolation as
    2 |mean(dt) - mean(dt/2)|.
    """
    if res.kind != "slowfast":
        raise InvalidParameterError("energy balance applies to slow-fast ensembles")
    for needed in ("fast_energy", "fast_diss_c", "fast_diss_h1"):
        if needed not in res.samples:
            raise InvalidParameterError(f"missing observable {needed!r}")
    eps = res.meta["epsilon"]
    trq = res.meta["trace_q"]
    y0n2 = res.meta["y0_norm2"]
    T = res.meta["T"]
    residuals = (
        res.final("fast_energy")
        + 2.0 / eps * res.final("fast_diss_c")
        + 2.0 * res.final("fast_diss_h1")
        - y0n2
        - trq * T / eps
    )
    mean = float(residuals.mean())
    se = float(residuals.std(ddof=1) / np.sqrt(residuals.size))
    terms = {
        "E_fast_energy_T": float(res.final("fast_energy").mean()),
        "friction_dissipation": float((2.0 / eps) * res.final("fast_diss_c").mean()),
        "viscous_dissipation": float(2.0 * res.final("fast_diss_h1").mean()),
        "initial_energy": float(y0n2),
        "injection": float(trq * T / eps),
    }
    bias = None
    if res_half_dt is not None:
        half = energy_balance_report(res_half_dt)
        bias = 2.0 * abs(mean - half.residual_mean) + 3.0 * half.residual_se
    return EnergyBalanceReport(
        residual_mean=mean,
        residual_se=se,
        terms=terms,
        dt=res.meta["dt"],
        bias_budget=bias,
    )
