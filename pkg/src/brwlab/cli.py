"""Command line entry point.

Subcommands: gen-env | solve | simulate | verify | study.
Exit codes: 0 ok, 1 test failure, 2 config error, 3 explosion budget exceeded.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .config import RunConfig, ConfigError, load_config
from .lattice import Field, write_field
from .environment import sample_environment, renormalization_constant, write_environment
from .offspring import pgf_coefficients, law_to_csv
from . import solvers as sol
from .particles import simulate_batch
from . import harness as hz
from .reporting import VerificationReport, _write_new

EXIT_OK = 0
EXIT_TEST_FAILURE = 1
EXIT_CONFIG_ERROR = 2
EXIT_EXPLOSION = 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="brwlab",
        description="Lattice laboratory for branching random walks in rough environments.",
        epilog="Numeric defaults: n=8, L=4, beta=0.5 (stable offspring tail index 1+beta), "
               "rho=beta (mass per particle eps = n^{-1/rho}), c_mix=0, T=0.25, dt=1e-3, "
               "replicas=10000, cap=1e7 particles.  See docs/symbols.md for the mapping "
               "from config knobs to the mathematical symbols they control.")
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--seed", type=int, help="override environment/simulation seed")
    p.add_argument("--out", help="override output directory")
    p.add_argument("--workers", type=int, help="worker pool size (reserved; replicas are keyed independently)")
    p.add_argument("--suite", choices=["quick", "full"], help="verification suite size")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-env", help="generate an environment bundle on disk")

    ps = sub.add_parser("solve", help="run a deterministic solver and store the trajectory")
    ps.add_argument("--T", type=float, help="override horizon")
    ps.add_argument("--dt", type=float, help="override time step")
    ps.add_argument("--scheme-order-check", action="store_true",
                    help="emit a Richardson self-convergence table instead of a trajectory")

    pm = sub.add_parser("simulate", help="run particle-system replicas, store snapshots and ledger")
    pm.add_argument("--replicas", type=int, help="override replica count")

    pv = sub.add_parser("verify", help="run the statistical verification suite")

    pt = sub.add_parser("study", help="cross-refinement convergence study")
    pt.add_argument("--regime", choices=["rho_eq_beta", "rho_lt_beta"], default="rho_eq_beta")
    pt.add_argument("--n-list", type=int, nargs="+", default=[8, 16, 32])
    return p


def _overrides(args) -> dict:
    ov = {"seed": args.seed, "out": args.out, "workers": args.workers, "suite": args.suite}
    for key in ("T", "dt", "replicas"):
        if hasattr(args, key):
            ov[key] = getattr(args, key)
    return ov


def cmd_gen_env(cfg: RunConfig) -> int:
    grid = cfg.grid()
    env = sample_environment(grid, cfg.dist, cfg.seed)
    if cfg.c_n_policy == "zero":
        env = env.with_c_n(0.0)
    elif cfg.c_n_ensemble > 1:
        env = env.with_c_n(renormalization_constant(env, cfg.c_n_ensemble))
    outdir = os.path.join(cfg.out, "environment")
    write_environment(outdir, env, config_hash=cfg.hash)
    law = pgf_coefficients(cfg.beta, cfg.K)
    law_to_csv(law, os.path.join(cfg.out, "offspring_law.csv"))
    print(f"environment bundle written to {outdir} (c_n={env.c_n:.6g}, nu_hat={env.nu_hat:.4f})")
    return EXIT_OK


def cmd_solve(cfg: RunConfig, order_check: bool = False) -> int:
    grid = cfg.grid()
    env = sample_environment(grid, cfg.dist, cfg.seed)
    if cfg.c_n_policy == "zero":
        env = env.with_c_n(0.0)
    phi = cfg.phi(grid)
    os.makedirs(cfg.out, exist_ok=True)

    if order_check:
        rows = richardson_table(cfg, env, phi)
        _write_new(os.path.join(cfg.out, "order_check.json"),
                   json.dumps({"config_hash": cfg.hash, "rows": rows}, indent=1))
        for row in rows:
            print(f"dt={row['dt']:.2e}  |diff|={row['diff']:.3e}  ratio={row.get('ratio', float('nan')):.2f}")
        return EXIT_OK

    if cfg.solver_kind == "heat":
        final = sol.heat_solve(grid, phi, cfg.T)
        traj = sol.Trajectory(grid, np.asarray([0.0, cfg.T]), [phi.values, final.values],
                              meta={"scheme": "spectral-heat", "dt": cfg.T})
    elif cfg.solver_kind == "pam":
        traj = sol.pam_solve(env, phi, cfg.T, cfg.dt, store_every=_store_every(cfg))
    elif cfg.solver_kind == "variant_pam":
        traj = sol.variant_pam_solve(env, phi, T=cfg.T, dt=cfg.dt, store_every=_store_every(cfg))
    else:
        law = pgf_coefficients(cfg.beta, cfg.K)
        B = hz.dual_coefficient(env, cfg.eps, law.beta, cfg.c_mix)
        v0 = sol.dual_initial(phi, cfg.eps)
        traj = sol.nonlinear_solve(env, v0, B, cfg.beta, cfg.T, cfg.dt,
                                   store_every=_store_every(cfg))
    outdir = os.path.join(cfg.out, "trajectory")
    os.makedirs(outdir, exist_ok=True)
    index = {"config_hash": cfg.hash, "scheme": traj.meta.get("scheme"),
             "dt": traj.meta.get("dt"), "times": traj.times.tolist(), "files": []}
    for i, (t, state) in enumerate(zip(traj.times, traj.states)):
        name = f"state_{i:05d}.fld"
        write_field(os.path.join(outdir, name), Field(grid, state), kind=cfg.solver_kind,
                    seed=cfg.seed, dist=cfg.dist)
        index["files"].append({"t": float(t), "file": name})
    _write_new(os.path.join(outdir, "index.json"), json.dumps(index, indent=1))
    print(f"trajectory with {len(traj.times)} states written to {outdir}")
    return EXIT_OK


def _store_every(cfg: RunConfig) -> int:
    steps = max(int(round(cfg.T / cfg.dt)), 1)
    return max(steps // 32, 1)


def richardson_table(cfg: RunConfig, env, phi) -> list[dict]:
    """Self-convergence of the splitting solver at dt, dt/2, dt/4, dt/8."""
    dts = [cfg.dt * 2**k for k in range(0, -4, -1)]
    finals = []
    for dt in dts:
        if cfg.solver_kind == "nonlinear":
            law = pgf_coefficients(cfg.beta, cfg.K)
            B = hz.dual_coefficient(env, cfg.eps, law.beta, cfg.c_mix)
            v0 = sol.dual_initial(phi, cfg.eps)
            traj = sol.nonlinear_solve(env, v0, B, cfg.beta, cfg.T, dt, store_every=0)
        else:
            traj = sol.pam_solve(env, phi, cfg.T, dt, store_every=0)
        finals.append(traj.final().values)
    rows = []
    diffs = [float(np.max(np.abs(a - b))) for a, b in zip(finals, finals[1:])]
    for i, (dt, diff) in enumerate(zip(dts, diffs)):
        row = {"dt": dt, "diff": diff}
        if i > 0 and diff > 0:
            row["ratio"] = diffs[i - 1] / diff
        rows.append(row)
    return rows


def cmd_simulate(cfg: RunConfig) -> int:
    grid = cfg.grid()
    env = sample_environment(grid, cfg.dist, cfg.seed)
    if cfg.c_n_policy == "zero":
        env = env.with_c_n(0.0)
    law = pgf_coefficients(cfg.beta, cfg.K)
    phi = cfg.phi(grid)
    mu0 = cfg.mu0(grid)
    obs = list(cfg.obs_times) or [cfg.T]
    batch = simulate_batch(env, law, mechanism=cfg.mechanism, c_mix=cfg.c_mix, mu0=mu0,
                           eps=cfg.eps, T=cfg.T, obs_times=obs, replicas=cfg.replicas,
                           seed=cfg.seed, phi=phi, cap=cfg.cap,
                           record_ledger=cfg.record_ledger,
                           ledger_capacity=cfg.ledger_capacity)
    os.makedirs(cfg.out, exist_ok=True)
    cfg.write_resolved(cfg.out)
    with open(os.path.join(cfg.out, "observables.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replica", "time", "pair_phi", "mass", "count", "support_radius", "exploded"])
        for r in range(cfg.replicas):
            for j, t in enumerate(batch.obs_times):
                w.writerow([r, t, repr(batch.pair[r, j]), repr(batch.mass[r, j]),
                            int(batch.count[r, j]), repr(batch.radius[r, j]),
                            int(batch.exploded[r])])
    if batch.ledger is not None:
        batch.ledger.to_csv(os.path.join(cfg.out, "ledger.csv"))

    # site-occupancy snapshots of one representative replica
    from .particles import init_poisson, advance
    law_snap = pgf_coefficients(cfg.beta, cfg.K)
    state = init_poisson(grid, mu0, cfg.eps, rng=np.random.default_rng(cfg.seed))
    with open(os.path.join(cfg.out, "snapshots.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "site", "count"])
        for j, t in enumerate(sorted(obs)):
            state = advance(state, env, law_snap, cfg.mechanism, t_end=t,
                            rng=cfg.seed + 1000 + j, c_mix=cfg.c_mix)
            for site, count in sorted(state.site_counts().items()):
                w.writerow([t, site, count])
    summary = {
        "config_hash": cfg.hash,
        "replicas": cfg.replicas,
        "exploded": int(batch.exploded.sum()),
        "events": {"jumps": int(batch.events[:, 0].sum()),
                   "branchings": int(batch.events[:, 1].sum()),
                   "deaths": int(batch.events[:, 2].sum())},
        "eps": cfg.eps,
    }
    _write_new(os.path.join(cfg.out, "simulation_summary.json"), json.dumps(summary, indent=1))
    frac = batch.exploded.mean()
    print(f"{cfg.replicas} replicas, {summary['events']['jumps']} jumps, "
          f"{summary['events']['branchings']} branchings, exploded fraction {frac:.3g}")
    return EXIT_EXPLOSION if frac > 0.01 else EXIT_OK


def run_suite(cfg: RunConfig) -> tuple[list[VerificationReport], int]:
    """Quick or full verification suite; returns reports and exit code."""
    full = cfg.suite == "full"
    spec = hz.TestSpec(
        name="suite", n=cfg.n, L=cfg.L, beta=cfg.beta, rho=cfg.rho, c_mix=cfg.c_mix,
        dist=cfg.dist, seed=cfg.seed, T=cfg.T, dt=cfg.dt,
        replicas=cfg.replicas if full else min(cfg.replicas, 3000), cap=cfg.cap,
        mu0_kind=cfg.mu0_kind if cfg.mu0_kind != "file" else "square",
        mu0_center=cfg.mu0_center, mu0_side=cfg.mu0_side, mu0_mass=cfg.mu0_mass,
        phi_center=cfg.phi_center, phi_width=cfg.phi_width, phi_height=cfg.phi_height)
    reports = [
        hz.laplace_duality_test(hz._respec(spec, name="laplace_duality")),
        hz.first_moment_test(hz._respec(spec, name="first_moment")),
        hz.mass_conservation_test(hz._respec(spec, name="mass_conservation")),
        hz.sampler_tail_test(cfg.beta, 100_000_000 if full else 2_000_000, seed=cfg.seed),
        hz.auxiliary_inequalities_test(seed=cfg.seed, n_points=100_000 if full else 20_000),
        hz.poisson_cluster_test(beta=cfg.beta, seed=cfg.seed,
                                replicas=20_000 if full else 5_000),
        hz.coupling_domination_test(hz._respec(
            spec, name="coupling", replicas=(4000 if full else 1000))),
    ]
    if full:
        reports.append(hz.moment_bound_test(
            hz._respec(spec, name="moment_bound", T=min(cfg.T, 0.1), replicas=2000),
            theta=cfg.beta / 2, n_list=(8, 16, 32)))

    # localize duality/first-moment discrepancies: if exactly one fails, dump
    # both solver references for inspection
    dual_ok = reports[0].passed
    first_ok = all(c.passed for c in reports[1].checks
                   if c.name.startswith("first moment (site"))
    exit_code = EXIT_OK
    if dual_ok != first_ok:
        diag_dir = os.path.join(cfg.out, "diagnostics")
        os.makedirs(diag_dir, exist_ok=True)
        grid, env, law, phi, mu0 = hz._setup(spec, zero_cn=True)
        pam = sol.pam_solve(env, phi, spec.T, spec.dt, store_every=0)
        _, traj = hz.laplace_functional_reference(env, law, phi, mu0, spec.eps, spec.T, spec.dt)
        write_field(os.path.join(diag_dir, "anderson_final.fld"), pam.final(), kind="diag")
        write_field(os.path.join(diag_dir, "dual_final.fld"), traj.final(), kind="diag")
    for rep in reports:
        for c in rep.checks:
            if not c.passed and "exploded" in c.name:
                return reports, EXIT_EXPLOSION
    if not all(r.passed for r in reports):
        exit_code = EXIT_TEST_FAILURE
    return reports, exit_code


def cmd_verify(cfg: RunConfig) -> int:
    os.makedirs(cfg.out, exist_ok=True)
    cfg.write_resolved(cfg.out)
    reports, exit_code = run_suite(cfg)
    for rep in reports:
        rep.config["config_hash_run"] = cfg.hash
        rep.write(cfg.out)
        status = "PASS" if rep.passed else "FAIL"
        print(f"[{status}] {rep.name} ({rep.runtime_s:.1f}s)")
        for c in rep.checks:
            mark = c.status if c.status != "ran" else ("pass" if c.passed else "FAIL")
            print(f"    {mark:12s} {c.name}")
    print(f"suite verdict: {'PASS' if exit_code == EXIT_OK else 'FAIL'}")
    return exit_code


def cmd_study(cfg: RunConfig, regime: str, n_list: list[int]) -> int:
    os.makedirs(cfg.out, exist_ok=True)
    cfg.write_resolved(cfg.out)
    spec = hz.TestSpec(
        name=f"study_{regime}", n=n_list[0], L=cfg.L, beta=cfg.beta,
        rho=(cfg.rho if regime == "rho_lt_beta" else None),
        dist=cfg.dist, seed=cfg.seed, T=cfg.T, dt=cfg.dt, replicas=cfg.replicas,
        cap=cfg.cap, mu0_kind=cfg.mu0_kind if cfg.mu0_kind != "file" else "square",
        mu0_center=cfg.mu0_center, mu0_side=cfg.mu0_side, mu0_mass=cfg.mu0_mass,
        phi_center=cfg.phi_center, phi_width=cfg.phi_width, phi_height=cfg.phi_height)
    rep = hz.convergence_study(spec, n_list=tuple(n_list), regime=regime)
    rep.config["config_hash_run"] = cfg.hash
    rep.write(cfg.out)
    rows = getattr(rep, "detail_rows", [])
    _write_new(os.path.join(cfg.out, "study_rows.json"), json.dumps(
        {"config_hash": cfg.hash, "regime": regime, "T": cfg.T,
         "phi": {"center": list(cfg.phi_center), "width": cfg.phi_width,
                 "height": cfg.phi_height},
         "rows": rows}, indent=1, default=float))
    for row in rows:
        print(f"n={row['n']:3d}  mc={row['mc']:.5f}±{row['stderr']:.5f}  "
              f"gap_dual={row['gap_dual']:.5f}  gap_linear={row['gap_pam']:.5f}")
    print(f"study verdict: {'PASS' if rep.passed else 'FAIL'}")
    return EXIT_OK if rep.passed else EXIT_TEST_FAILURE


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides(args))
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    try:
        if args.command == "gen-env":
            return cmd_gen_env(cfg)
        if args.command == "solve":
            return cmd_solve(cfg, order_check=args.scheme_order_check)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "verify":
            return cmd_verify(cfg)
        if args.command == "study":
            return cmd_study(cfg, args.regime, args.n_list)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    parser.error(f"unknown command {args.command}")
    return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
