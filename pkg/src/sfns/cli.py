"""Command-line experiment runner.

Exit codes: 0 success, 2 configuration error, 3 numeric failure or
divergence, 4 check failure (poisson-check and friends).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from .config import load_config
from .correctors import (
    QuadraticFunctional,
    center,
    ou_generator_apply,
    poisson_solve,
)
from .ensemble import (
    assemble_result,
    compare_laws,
    energy_balance_report,
    replica_rng,
    run_ensemble,
)
from .errors import (
    ConfigError,
    DivergenceError,
    EnsembleDivergenceError,
    NumericFailureError,
    SfnsError,
)
from .integrators import (
    EddyParams,
    LimitParams,
    SlowFastParams,
    run_trajectory,
)
from .io import (
    read_eddy_checkpoint,
    read_ensemble_checkpoint,
    write_comparison_csv,
    write_eddy_checkpoint,
    write_ensemble_checkpoint,
    write_manifest,
    write_snapshot,
    write_stats_csv,
    write_table_csv,
)
from .limits import (
    eddy_to_laplacian_ratios,
    ito_stokes_drift,
    make_limit_coefficients,
    monte_carlo_drift,
    strat_corrector_representations,
)
from .operators import invariant_covariance, make_QN


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sfns",
        description="slow-fast spectral fluid laboratory on the 2D torus",
    )
    parser.add_argument("--version", action="version", version=f"sfns {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("simulate-slowfast", "ensemble of coupled slow-fast trajectories"),
        ("simulate-limit", "ensemble of limit-dynamics trajectories (Ito form)"),
        ("simulate-eddy", "deterministic eddy-dissipation run over a shell sweep"),
        ("compute-drift", "analytic mean advection velocity, optional MC check"),
        ("compute-corrector", "both corrector representations applied to u0"),
        ("poisson-check", "random-functional Poisson residual suite"),
        ("epsilon-sweep", "slow-fast ensembles across epsilon vs one limit ensemble"),
        ("eddy-ratio", "shell-dissipation to Laplacian proportionality table"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON configuration file")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--replicas", type=int, default=None, help="replica count override")
        p.add_argument("--resume", default=None, help="checkpoint file to resume from")
        if name == "compute-drift":
            p.add_argument("--mc-samples", type=int, default=0,
                           help="Monte Carlo cross-check sample count")
        if name == "poisson-check":
            p.add_argument("--functionals", type=int, default=100)
            p.add_argument("--states", type=int, default=100)
    return parser


def _prepare(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.master_seed = int(args.seed)
    if args.replicas is not None:
        cfg.replicas = int(args.replicas)
    out_dir = args.out or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    return cfg, out_dir


def _emit_summary_rows(result):
    rows = []
    for name in sorted(result.samples):
        grid = result.times[name]
        data = result.samples[name]
        for j, t in enumerate(grid):
            col = data[:, j]
            se = col.std(ddof=1) / np.sqrt(col.size) if col.size > 1 else 0.0
            rows.append((float(t), name, float(col.mean()), float(se), col.size))
    return rows


def _checkpointed_ensemble(kind, params, observables, cfg, out_dir, resume,
                           label):
    """Replica-level checkpointing; resumed runs are bitwise identical."""
    from .ensemble import params_fingerprint

    fp = params_fingerprint(kind, params)
    ckpt_path = os.path.join(out_dir, f"{label}.checkpoint.json")
    done = {}
    times = None
    if resume:
        _, seed, times, done = read_ensemble_checkpoint(resume, fp)
        if seed != cfg.master_seed:
            raise ConfigError(["checkpoint master seed does not match configuration"])
    every = cfg.checkpoint_every
    failures = []
    for i in range(cfg.replicas):
        if i in done:
            continue
        try:
            rec = run_trajectory(kind, params, observables,
                                 rng=replica_rng(cfg.master_seed, i))
        except DivergenceError as err:
            failures.append((i, str(err)))
            continue
        done[i] = rec.values
        times = rec.times
        if every and len(done) % every == 0:
            write_ensemble_checkpoint(ckpt_path, fp, kind, cfg.master_seed,
                                      times, done)
    if every:
        write_ensemble_checkpoint(ckpt_path, fp, kind, cfg.master_seed, times, done)
    result = assemble_result(kind, params, cfg.master_seed, times, done)
    if failures:
        raise EnsembleDivergenceError(
            f"{len(failures)} replica(s) diverged: "
            + ", ".join(f"#{i} ({msg})" for i, msg in failures),
            failed_replicas=[i for i, _ in failures],
            partial=result,
        )
    return result


def _emit_ensemble_outputs(cfg, out_dir, label, run):
    """Run an ensemble command body; on divergence keep partial outputs and a
    MANIFEST noting incompleteness."""
    note = None
    status = "complete"
    try:
        result = run()
    except EnsembleDivergenceError as err:
        result = err.partial
        status = "incomplete"
        note = str(err)
    files = []
    traj = os.path.join(out_dir, f"{label}_trajectories.csv")
    write_stats_csv(traj, cfg.fingerprint, __version__, result)
    files.append(os.path.basename(traj))
    stats = os.path.join(out_dir, f"{label}_stats.csv")
    write_table_csv(stats, cfg.fingerprint, __version__,
                    "t,observable,mean,se,n", _emit_summary_rows(result))
    files.append(os.path.basename(stats))
    write_manifest(os.path.join(out_dir, "MANIFEST.json"), cfg.fingerprint,
                   __version__, status, files, note=note)
    if note:
        print(f"divergence: {note}", file=sys.stderr)
    print(f"wrote {len(files)} file(s) to {out_dir} ({status})")
    return result, (0 if status == "complete" else 3)


def cmd_simulate_slowfast(args):
    cfg, out_dir = _prepare(args)
    if cfg.epsilon is None:
        raise ConfigError(["run.epsilon required for simulate-slowfast"])
    params = SlowFastParams(
        epsilon=cfg.epsilon, A=cfg.A, C=cfg.C, Q=cfg.Q, dt=cfg.dt, T=cfg.T,
        u0=cfg.u0, y0=cfg.y0, seed=cfg.master_seed)
    result, code = _emit_ensemble_outputs(
        cfg, out_dir, "slowfast",
        lambda: _checkpointed_ensemble("slowfast", params, cfg.observables,
                                       cfg, out_dir, args.resume, "slowfast"))
    if code == 0 and all(
            k in result.samples for k in ("fast_energy", "fast_diss_c", "fast_diss_h1")):
        report = energy_balance_report(result)
        print(f"energy balance residual {report.residual_mean:+.6e} "
              f"(se {report.residual_se:.3e})")
    return code


def cmd_simulate_limit(args):
    cfg, out_dir = _prepare(args)
    coeffs = make_limit_coefficients(cfg.C, cfg.Q)
    params = LimitParams(A=cfg.A, coeffs=coeffs, dt=cfg.dt, T=cfg.T, u0=cfg.u0,
                         seed=cfg.master_seed)
    observables = [o for o in cfg.observables
                   if o.kind in ("pairing", "energy")]
    _, code = _emit_ensemble_outputs(
        cfg, out_dir, "limit",
        lambda: _checkpointed_ensemble("limit", params, observables, cfg,
                                       out_dir, args.resume, "limit"))
    return code


def cmd_simulate_eddy(args):
    cfg, out_dir = _prepare(args)
    noise = cfg.doc["noise"]
    if noise.get("type") != "qn":
        raise ConfigError(["simulate-eddy requires noise.type = 'qn'"])
    n_list = noise.get("N_list") or [int(noise["N"])]
    files = []
    for N in n_list:
        QN = make_QN(int(N), float(noise["delta"]), float(noise["c_kappa"]),
                     cfg.basis)
        params = EddyParams(A=cfg.A, C=cfg.C, QN=QN, dt=cfg.dt, T=cfg.T,
                            u0=cfg.u0)
        ckpt_path = os.path.join(out_dir, f"eddy_N{N}.checkpoint.json")
        start_step, state = 0, cfg.u0
        if args.resume and len(n_list) == 1:
            start_step, state = read_eddy_checkpoint(args.resume, cfg.fingerprint,
                                                     cfg.basis)
        from .integrators import resolve_steps, step_eddy_deterministic
        n_steps, dt = resolve_steps(cfg.T, cfg.dt)
        rows = [(0.0, "energy", state.norm() ** 2)] if start_step == 0 else []
        for step in range(start_step + 1, n_steps + 1):
            state = step_eddy_deterministic(state, QN, cfg.C, cfg.A, dt)
            rows.append((step * dt, "energy", state.norm() ** 2))
            if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                write_eddy_checkpoint(ckpt_path, cfg.fingerprint, step, state)
        name = f"eddy_trajectory_N{N}.csv"
        write_table_csv(os.path.join(out_dir, name), cfg.fingerprint,
                        __version__, "t,observable,value", rows)
        files.append(name)
        snap = f"eddy_final_N{N}.msf"
        write_snapshot(os.path.join(out_dir, snap), state)
        files.append(snap)
    write_manifest(os.path.join(out_dir, "MANIFEST.json"), cfg.fingerprint,
                   __version__, "complete", files)
    print(f"wrote {len(files)} file(s) to {out_dir}")
    return 0


def cmd_compute_drift(args):
    cfg, out_dir = _prepare(args)
    r = ito_stokes_drift(cfg.C, cfg.Q)
    labels = cfg.basis.element_labels()
    nz = np.flatnonzero(np.abs(r.coeffs) > 0)
    print(f"drift velocity: {nz.size} nonzero coefficient(s), |r| = {r.norm():.6e}")
    if nz.size == 0:
        print("drift field is exactly zero")
    for m in nz:
        print(f"  {labels[m]:>12s}  {r.coeffs[m]:+.12e}")
    if args.mc_samples:
        mean, se = monte_carlo_drift(cfg.C, cfg.Q, args.mc_samples,
                                     replica_rng(cfg.master_seed, 0))
        diff = np.abs(mean - r.coeffs)
        within = bool(np.all(diff <= 4.0 * se + 1e-12))
        print(f"monte carlo cross-check over {args.mc_samples} samples: "
              f"max |analytic - mc| = {np.max(diff):.3e}, "
              f"{'within' if within else 'OUTSIDE'} 4 standard errors")
    rows = [(labels[m], float(r.coeffs[m])) for m in range(cfg.basis.size)]
    write_table_csv(os.path.join(out_dir, "drift.csv"), cfg.fingerprint,
                    __version__, "mode,value", rows)
    write_manifest(os.path.join(out_dir, "MANIFEST.json"), cfg.fingerprint,
                   __version__, "complete", ["drift.csv"])
    return 0


def cmd_compute_corrector(args):
    cfg, out_dir = _prepare(args)
    coeffs = make_limit_coefficients(cfg.C, cfg.Q)
    a, b = strat_corrector_representations(coeffs, cfg.u0)
    gap = float(np.max(np.abs(a.coeffs - b.coeffs)))
    print(f"representation A: |S_A(u0)| = {a.norm():.12e}")
    print(f"representation B: |S_B(u0)| = {b.norm():.12e}")
    print(f"max |A - B| = {gap:.6e} "
          f"({'commuting' if coeffs.commutes else 'NON-commuting'} pair, "
          f"commutator residual {coeffs.commute_residual:.3e})")
    labels = cfg.basis.element_labels()
    rows = [(labels[m], float(a.coeffs[m]), float(b.coeffs[m]),
             float(a.coeffs[m] - b.coeffs[m])) for m in range(cfg.basis.size)]
    write_table_csv(os.path.join(out_dir, "corrector.csv"), cfg.fingerprint,
                    __version__, "mode,rep_a,rep_b,difference", rows)
    write_manifest(os.path.join(out_dir, "MANIFEST.json"), cfg.fingerprint,
                   __version__, "complete", ["corrector.csv"])
    return 0


def cmd_poisson_check(args):
    cfg, _ = _prepare(args)
    basis = cfg.basis
    mu = invariant_covariance(cfg.C, cfg.Q)
    rng = replica_rng(cfg.master_seed, 0)
    worst = 0.0
    for trial in range(args.functionals):
        a1 = rng.standard_normal(basis.size)
        raw = rng.standard_normal((basis.size, basis.size))
        psi = QuadraticFunctional(basis, rng.standard_normal(), a1,
                                  0.5 * (raw + raw.T))
        psi = center(psi, mu)
        try:
            phi = poisson_solve(cfg.C, cfg.Q, psi)
        except NumericFailureError as err:
            print(f"FAIL functional {trial}: {err}")
            return 4
        for _ in range(args.states):
            y = rng.standard_normal(basis.size)
            res = abs(ou_generator_apply(cfg.C, cfg.Q, phi, y) + psi(y))
            rel = res / (1.0 + abs(psi(y)))
            worst = max(worst, rel)
    print(f"poisson residual suite: {args.functionals} functionals x "
          f"{args.states} states, worst relative residual {worst:.3e}")
    if worst > 1e-10:
        print("FAIL: residual exceeds 1e-10")
        return 4
    print("PASS")
    return 0


def cmd_epsilon_sweep(args):
    cfg, out_dir = _prepare(args)
    if not cfg.epsilons:
        raise ConfigError(["run.epsilons (or run.epsilon) required for epsilon-sweep"])
    pairings = [o for o in cfg.observables if o.kind == "pairing"]
    if not pairings:
        raise ConfigError(["epsilon-sweep requires at least one pairing observable"])
    coeffs = make_limit_coefficients(cfg.C, cfg.Q)
    limit_params = LimitParams(A=cfg.A, coeffs=coeffs, dt=cfg.dt, T=cfg.T,
                               u0=cfg.u0, seed=cfg.master_seed)
    limit_res = run_ensemble("limit", limit_params, pairings, cfg.replicas,
                             cfg.master_seed + 1)
    rows = []
    for eps in cfg.epsilons:
        dt_eps = min(cfg.dt, eps / 5.0)
        params = SlowFastParams(epsilon=eps, A=cfg.A, C=cfg.C, Q=cfg.Q,
                                dt=dt_eps, T=cfg.T, u0=cfg.u0, y0=cfg.y0)
        sf_res = run_ensemble("slowfast", params, pairings, cfg.replicas,
                              cfg.master_seed)
        for obs in pairings:
            cmp = compare_laws(sf_res, limit_res, obs.name, cfg.T)
            rows.append((eps, cmp))
            print(f"eps={eps:<6g} {obs.name:<16s} ks={cmp.ks_distance:.4f} "
                  f"mean_diff={cmp.mean_diff:+.4e} (se {cmp.se_mean:.3e})")
    path = os.path.join(out_dir, "epsilon_sweep.csv")
    write_comparison_csv(path, cfg.fingerprint, __version__, rows)
    write_manifest(os.path.join(out_dir, "MANIFEST.json"), cfg.fingerprint,
                   __version__, "complete", ["epsilon_sweep.csv"])
    return 0


def cmd_eddy_ratio(args):
    cfg, out_dir = _prepare(args)
    noise = cfg.doc["noise"]
    if noise.get("type") != "qn":
        raise ConfigError(["eddy-ratio requires noise.type = 'qn'"])
    n_list = noise.get("N_list") or [int(noise["N"])]
    labels = cfg.basis.element_labels()
    rows = []
    for N in n_list:
        QN = make_QN(int(N), float(noise["delta"]), float(noise["c_kappa"]),
                     cfg.basis)
        ratios = eddy_to_laplacian_ratios(QN, cfg.C, cfg.u0, n_modes=8)
        vals = np.array([r for _, r in ratios])
        spread = float(np.ptp(vals) / abs(vals.mean())) if vals.size else float("nan")
        for m, ratio in ratios:
            rows.append((int(N), labels[m], float(ratio)))
        print(f"N={N}: {vals.size} modes, mean ratio {vals.mean():.6e}, "
              f"relative spread {spread:.3%}")
    path = os.path.join(out_dir, "eddy_ratio.csv")
    write_table_csv(path, cfg.fingerprint, __version__, "N,mode,ratio", rows)
    write_manifest(os.path.join(out_dir, "MANIFEST.json"), cfg.fingerprint,
                   __version__, "complete", ["eddy_ratio.csv"])
    return 0


COMMANDS = {
    "simulate-slowfast": cmd_simulate_slowfast,
    "simulate-limit": cmd_simulate_limit,
    "simulate-eddy": cmd_simulate_eddy,
    "compute-drift": cmd_compute_drift,
    "compute-corrector": cmd_compute_corrector,
    "poisson-check": cmd_poisson_check,
    "epsilon-sweep": cmd_epsilon_sweep,
    "eddy-ratio": cmd_eddy_ratio,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as err:
        for v in err.violations:
            print(f"config error: {v}", file=sys.stderr)
        return 2
    except EnsembleDivergenceError as err:
        print(f"divergence: {err}", file=sys.stderr)
        out_dir = args.out or "."
        try:
            write_manifest(os.path.join(out_dir, "MANIFEST.json"), "unknown",
                           __version__, "incomplete", [],
                           note=str(err))
        except OSError:
            pass
        return 3
    except (DivergenceError, NumericFailureError) as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return 3
    except SfnsError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except FileNotFoundError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
