"""Command-line interface.

Wires JSON configs to the solver pipelines and writes CSV artifacts plus a
run manifest per output directory.  Exit codes: 0 success, 1 validation or
usage failure, 2 numerical failure (Riccati blow-up, aggregate-Riccati
failure, mass drift, simulation overflow).  All CSV output is
comma-separated, '.' decimal, LF line endings, UTF-8, with a header row;
reruns with identical manifest inputs produce byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, config_digest, default_config, load_problem, problem_from_dict
from .lqg import RiccatiBlowupError
from .meanfield import (AggregateRiccatiError, MassConservationError,
                        MeanFieldProblem, bisection_fixed_point, eval_G,
                        consistency_residual, find_all_fixed_points,
                        solve_fokker_planck)
from .mc import SimulationConfig, SimulationError, empirical_cdm, estimate_epsilon_nash, simulate_population
from .model import validate_params
from .scenarios import scenario_with

NUMERICAL_ERRORS = (RiccatiBlowupError, AggregateRiccatiError,
                    MassConservationError, SimulationError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_fmt(v) for v in row) + "\n")


def write_manifest(out: Path, command: str, cfg: dict, params: dict,
                   seed, outputs: list[str]) -> None:
    manifest = {
        "command": command,
        "tool_version": __version__,
        "config_digest": config_digest(cfg),
        "parameters": params,
        "seed": seed,
        "outputs": sorted(outputs),
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _load(args) -> tuple[MeanFieldProblem, dict]:
    if args.config is None:
        cfg = default_config()
        return problem_from_dict(cfg), cfg
    return load_problem(args.config)


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    return int(os.environ.get("MINLQG_THREADS", "1"))


def _validated(problem: MeanFieldProblem):
    report = validate_params(problem.pop, problem.dest, problem.grid)
    if not report.ok:
        print("configuration invalid:", file=sys.stderr)
        print(str(report), file=sys.stderr)
        sys.exit(1)


# -- commands ----------------------------------------------------------------

def cmd_validate(args) -> int:
    problem, _ = _load(args)
    report = validate_params(problem.pop, problem.dest, problem.grid)
    print(str(report))
    return 0 if report.ok else 1


def cmd_solve_riccati(args) -> int:
    problem, cfg = _load(args)
    _validated(problem)
    l = problem.dest.l
    Lam = np.full((problem.pop.k, l), 1.0 / l)
    if args.r is not None:
        Lam = np.tile([args.r, 1.0 - args.r], (problem.pop.k, 1))
    xbar = problem.mean_path(Lam).xbar
    pol = problem.policy(0, xbar)
    out = _outdir(args)
    n = problem.pop.n
    header = ["t"] + [f"Pi_{i}{j}" for i in range(n) for j in range(n)]
    for j in range(l):
        header += [f"beta{j + 1}_{i}" for i in range(n)] + [f"delta{j + 1}"]
    rows = []
    for idx, t in enumerate(problem.grid.times):
        row = [t] + list(pol.riccati.Pi[idx].reshape(-1))
        for j in range(l):
            row += list(pol.offsets.beta[idx, j]) + [pol.offsets.delta[idx, j]]
        rows.append(row)
    write_csv(out / "riccati.csv", header, rows)
    write_manifest(out, "solve-riccati", cfg, {"r": args.r}, args.seed, ["riccati.csv"])
    print(f"wrote {out / 'riccati.csv'}")
    return 0


def cmd_eval_control(args) -> int:
    problem, cfg = _load(args)
    _validated(problem)
    data = np.genfromtxt(args.xbar, delimiter=",", names=True)
    cols = [c for c in data.dtype.names if c != "t"]
    xbar = np.column_stack([data[c] for c in cols])
    if len(xbar) != len(problem.grid.times):
        print(f"error: xbar file has {len(xbar)} rows, grid has "
              f"{len(problem.grid.times)} nodes", file=sys.stderr)
        return 1
    parts = [float(v) for v in args.at.split(",")]
    t, x = parts[0], np.array(parts[1:])
    pol = problem.policy(0, xbar)
    l = problem.dest.l
    V = pol.value(t, x)
    u = np.atleast_1d(pol.control(t, x))
    g = [pol.cell_probability(j, t, x) for j in range(l)]
    vt = [float(pol.risk_adjusted_value(j, t, x)) for j in range(l)]
    pr = np.atleast_1d(pol.choice_probabilities(t, x))
    header = (["t"] + [f"x_{i}" for i in range(len(x))] + ["V"]
              + [f"u_{i}" for i in range(len(u))]
              + [f"g_{j + 1}" for j in range(l)]
              + [f"Vtilde_{j + 1}" for j in range(l)]
              + [f"Pr_{j + 1}" for j in range(l)])
    row = [t, *x, V, *u, *g, *vt, *pr]
    print(",".join(header))
    print(",".join(_fmt(v) for v in row))
    if args.out:
        out = _outdir(args)
        write_csv(out / "control.csv", header, [row])
        write_manifest(out, "eval-control", cfg,
                       {"at": args.at, "xbar": str(args.xbar)}, args.seed,
                       ["control.csv"])
    return 0


def _density_outputs(problem, r, snapshots, out, prefix=""):
    Lam = np.array([[r, 1.0 - r]])
    pol = problem.policies(Lam)[0]
    dens = solve_fokker_planck(pol, problem.init, problem.fpgrid)
    files = []
    for frac in snapshots:
        t = frac * problem.grid.horizon
        name = f"{prefix}density_t{frac:g}.csv"
        write_csv(out / name, ["x", "p"],
                  zip(dens.fpgrid.x, dens.snapshot(t)))
        files.append(name)
    return dens, files


def cmd_solve_fp(args) -> int:
    problem, cfg = _load(args)
    _validated(problem)
    if problem.pop.n != 1:
        print("error: the density solver needs a scalar state", file=sys.stderr)
        return 1
    snaps = [float(s) for s in args.snapshots.split(",")]
    out = _outdir(args)
    dens, files = _density_outputs(problem, args.r, snaps, out)
    path = problem.mean_path(np.array([[args.r, 1.0 - args.r]]))
    write_csv(out / "mean_path.csv", ["t", "density_mean", "tracked_path"],
              zip(problem.grid.times, dens.mean(), path.xbar[:, 0]))
    files.append("mean_path.csv")
    write_manifest(out, "solve-fp", cfg,
                   {"r": args.r, "snapshots": snaps}, args.seed, files)
    print(f"wrote {len(files)} files to {out}")
    return 0


def cmd_find_fixed_point(args) -> int:
    problem, cfg = _load(args)
    _validated(problem)
    if not problem.is_scalar_binary:
        print("error: fixed-point search needs the scalar binary uniform "
              "scenario (k=1, n=m=1, l=2)", file=sys.stderr)
        return 1
    tol = args.tol if args.tol is not None else 1e-3
    out = _outdir(args)
    if args.all:
        roots = find_all_fixed_points(problem, tol=tol, n_jobs=_threads(args))
    else:
        roots = [bisection_fixed_point(problem, tol=tol).r]
    rows = []
    for r in roots:
        g = eval_G(problem, r)
        rows.append([r, g, abs(g - r)])
    write_csv(out / "fixed_points.csv", ["r", "G_r", "residual"], rows)
    write_manifest(out, "find-fixed-point", cfg,
                   {"all": bool(args.all), "tol": tol}, args.seed,
                   ["fixed_points.csv"])
    for r, g, res in rows:
        print(f"r* = {r:.6g}   G(r*) = {g:.6g}   |G-r| = {res:.3g}")
    return 0


def cmd_sweep(args) -> int:
    problem, cfg = _load(args)
    _validated(problem)
    if args.param not in ("Q", "sigma", "M"):
        print(f"error: unsupported sweep parameter '{args.param}'", file=sys.stderr)
        return 1
    tol = args.tol if args.tol is not None else 1e-3
    values = np.linspace(args.start, args.stop, args.steps)
    rows = []
    for v in values:
        prob_v = scenario_with(problem, **{args.param: float(v)})
        roots = find_all_fixed_points(prob_v, n_scan=args.n_scan, tol=tol,
                                      n_jobs=_threads(args))
        rows.append([v, len(roots), ";".join(f"{r:.6g}" for r in roots)])
        print(f"{args.param} = {v:g}: {len(roots)} fixed point(s): {rows[-1][2]}")
    out = _outdir(args)
    write_csv(out / "sweep.csv", [args.param, "n_fixed_points", "fixed_points"], rows)
    write_manifest(out, "sweep", cfg,
                   {"param": args.param, "from": args.start, "to": args.stop,
                    "steps": args.steps, "tol": tol}, args.seed, ["sweep.csv"])
    return 0


def cmd_simulate(args) -> int:
    problem, cfg = _load(args)
    _validated(problem)
    Lam = np.array([[args.r, 1.0 - args.r]]) if problem.dest.l == 2 \
        else np.full((problem.pop.k, problem.dest.l), 1.0 / problem.dest.l)
    sim = SimulationConfig(n_agents=args.agents, seed=args.seed)
    ens = simulate_population(problem, Lam, sim)
    out = _outdir(args)
    sample = min(args.sample_paths, ens.n_agents)
    header = ["t"] + [f"agent_{a}" for a in range(sample)]
    write_csv(out / "trajectories.csv", header,
              np.column_stack([ens.times, ens.paths[:sample, :, 0].T]))
    cdm = empirical_cdm(ens, problem.dest, problem.pop.k)
    mean = ens.mean_path()[:, 0]
    tracked = problem.mean_path(Lam).xbar[:, 0]
    dev = np.abs(mean - tracked).max() / (1.0 + np.abs(tracked).max())
    write_csv(out / "summary.csv",
              ["t", "empirical_mean", "tracked_path"],
              zip(ens.times, mean, tracked))
    write_csv(out / "empirical_cdm.csv",
              [f"cell_{j + 1}" for j in range(problem.dest.l)], cdm)
    write_manifest(out, "simulate", cfg,
                   {"r": args.r, "agents": args.agents,
                    "max_mean_deviation": dev}, args.seed,
                   ["trajectories.csv", "summary.csv", "empirical_cdm.csv"])
    print(f"empirical CDM: {cdm[0]}   sup mean deviation: {dev:.4f}")
    return 0


def cmd_check_nash(args) -> int:
    problem, cfg = _load(args)
    _validated(problem)
    tol = args.tol if args.tol is not None else 1e-3
    r = bisection_fixed_point(problem, tol=tol).r
    Lam = np.array([[r, 1.0 - r]])
    N_values = [int(v) for v in args.N.split(",")]
    sim = SimulationConfig(n_agents=max(N_values), seed=args.seed)
    rows = estimate_epsilon_nash(problem, Lam, sim, N_values, n_reps=args.reps)
    out = _outdir(args)
    write_csv(out / "nash.csv", ["N", "eps_hat", "se"],
              [[row["N"], row["eps_hat"], row["se"]] for row in rows])
    write_manifest(out, "check-nash", cfg,
                   {"N": N_values, "reps": args.reps, "r": r}, args.seed,
                   ["nash.csv"])
    for row in rows:
        print(f"N = {row['N']:>6}: eps_hat = {row['eps_hat']:.5f} "
              f"(se {row['se']:.5f})")
    return 0


def cmd_reproduce_figure(args) -> int:
    problem, cfg = _load(args)
    _validated(problem)
    tol = args.tol if args.tol is not None else 1e-3
    out = _outdir(args)
    files: list[str] = []
    summary: list[list] = []

    if args.fig == 1:
        r = bisection_fixed_point(problem, tol=tol).r
        _, created = _density_outputs(problem, r, [0.0, 0.5, 1.0], out)
        files += created
        Lam = np.array([[r, 1.0 - r]])
        tracked = problem.mean_path(Lam).xbar[:, 0]
        ens = simulate_population(problem, Lam,
                                  SimulationConfig(n_agents=10, seed=args.seed))
        pol = problem.policies(Lam)[0]
        dens = solve_fokker_planck(pol, problem.init, problem.fpgrid)
        write_csv(out / "mean_path.csv", ["t", "density_mean", "tracked_path"],
                  zip(problem.grid.times, dens.mean(), tracked))
        write_csv(out / "sample_paths.csv",
                  ["t"] + [f"agent_{a}" for a in range(10)],
                  np.column_stack([ens.times, ens.paths[:, :, 0].T]))
        files += ["mean_path.csv", "sample_paths.csv"]
        summary.append(["r_star", r])
        summary.append(["consistency_residual", consistency_residual(problem, Lam)])
    elif args.fig in (2, 3):
        variants = {2: [("Q", 10.0), ("Q", 20.0)],
                    3: [("sigma", 3.0), ("sigma", 5.0)]}[args.fig]
        base = problem if args.fig == 2 else scenario_with(problem, Q=20.0)
        for name, v in variants:
            prob_v = scenario_with(base, **{name: v})
            r = bisection_fixed_point(prob_v, tol=tol).r
            _, created = _density_outputs(prob_v, r, [0.0, 0.5, 1.0], out,
                                          prefix=f"{name}{v:g}_")
            files += created
            summary.append([f"r_star_{name}{v:g}", r])
    elif args.fig == 4:
        q_values = np.arange(args.q_from, args.q_to + 1e-9, args.q_step)
        rows = []
        for q in q_values:
            prob_q = scenario_with(problem, Q=float(q))
            roots = find_all_fixed_points(prob_q, n_scan=args.n_scan, tol=tol,
                                          n_jobs=_threads(args))
            rows.append([q, len(roots), ";".join(f"{r:.6g}" for r in roots)])
            print(f"Q = {q:g}: {rows[-1][2]}")
        write_csv(out / "multiplicity.csv", ["Q", "n_fixed_points", "fixed_points"],
                  rows)
        files.append("multiplicity.csv")
    else:
        print(f"error: unknown figure {args.fig} (expected 1-4)", file=sys.stderr)
        return 1

    if summary:
        write_csv(out / "summary.csv", ["key", "value"], summary)
        files.append("summary.csv")
    write_manifest(out, "reproduce-figure", cfg, {"fig": args.fig}, args.seed, files)
    print(f"wrote {len(files)} files to {out}")
    return 0


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="minlqg",
                description="Collective-choice mean-field game solver")
    p.add_argument("--version", action="version", version=f"minlqg {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_out=True):
        sp.add_argument("--config", type=Path, default=None,
                        help="JSON config (default: built-in reference scenario)")
        if needs_out:
            sp.add_argument("--out", type=Path, default=Path("out"),
                            help="output directory (default: ./out)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: env MINLQG_THREADS or 1)")
        sp.add_argument("--tol", type=float, default=None,
                        help="fixed-point tolerance (default 1e-3)")

    sp = sub.add_parser("validate", help="check a config against all invariants")
    common(sp, needs_out=False)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("solve-riccati", help="dump Pi, beta_j, delta_j per node")
    common(sp)
    sp.add_argument("--r", type=float, default=None,
                    help="binary CDM left share used to build the tracked path")
    sp.set_defaults(func=cmd_solve_riccati)

    sp = sub.add_parser("eval-control", help="evaluate V, u*, g_j, Vtilde_j, Pr_j")
    common(sp)
    sp.add_argument("--xbar", type=Path, required=True,
                    help="CSV with columns t,x_0[,x_1...] on the grid nodes")
    sp.add_argument("--at", type=str, required=True, help='point "t,x1[,x2...]"')
    sp.set_defaults(func=cmd_eval_control, out=None)

    sp = sub.add_parser("solve-fp", help="transport the density for a given CDM")
    common(sp)
    sp.add_argument("--r", type=float, required=True)
    sp.add_argument("--snapshots", type=str, default="0,0.5,1.0",
                    help="comma list of horizon fractions in [0,1]")
    sp.set_defaults(func=cmd_solve_fp)

    sp = sub.add_parser("find-fixed-point", help="bisection (or scan) for r = G(r)")
    common(sp)
    sp.add_argument("--all", action="store_true",
                    help="scan for every fixed point instead of one bisection")
    sp.set_defaults(func=cmd_find_fixed_point)

    sp = sub.add_parser("sweep", help="fixed points along a parameter sweep")
    common(sp)
    sp.add_argument("--param", type=str, required=True, choices=["Q", "sigma", "M"])
    sp.add_argument("--from", dest="start", type=float, required=True)
    sp.add_argument("--to", dest="stop", type=float, required=True)
    sp.add_argument("--steps", type=int, required=True)
    sp.add_argument("--n-scan", type=int, default=21)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("simulate", help="finite-population Euler-Maruyama run")
    common(sp)
    sp.add_argument("--r", type=float, required=True)
    sp.add_argument("--agents", type=int, default=10000)
    sp.add_argument("--sample-paths", type=int, default=10)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("check-nash", help="deviation-incentive estimates")
    common(sp)
    sp.add_argument("--N", type=str, required=True, help="comma list, e.g. 10,100,1000")
    sp.add_argument("--reps", type=int, default=30)
    sp.set_defaults(func=cmd_check_nash)

    sp = sub.add_parser("reproduce-figure", help="regenerate a figure's data")
    common(sp)
    sp.add_argument("--fig", type=int, required=True)
    sp.add_argument("--q-from", type=float, default=5.0)
    sp.add_argument("--q-to", type=float, default=29.0)
    sp.add_argument("--q-step", type=float, default=2.0)
    sp.add_argument("--n-scan", type=int, default=21)
    sp.set_defaults(func=cmd_reproduce_figure)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    os.environ.setdefault("MINLQG_THREADS", "1")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except NUMERICAL_ERRORS as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
