"""Configuration-driven command line: solve, project, sample, report.

A run is described by a single JSON config file (documented in the README);
every command writes a manifest echoing the full config plus versions and
wall time, so any run is reproducible from its manifest alone.

Exit codes: 0 success, 2 invalid config or missing inputs, 3 solver did not
converge (the best iterate is still written).
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .grid import GridSpec, load_field_bin, save_field_bin, save_field_csv
from .model import (CouplingSpec, FourierSeries, HamiltonianSpec, ProblemSpec,
                    penalize, validate)
from .problems import NAMED_PROBLEMS, named_grid, named_problem, named_solver_options

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NOT_CONVERGED = 3


# --- config -------------------------------------------------------------------

def load_config(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def build_problem(cfg: dict) -> ProblemSpec:
    """Problem from a config block: either {"name": "TP1", ...} or explicit
    Fourier coefficient lists for m0, g, and optionally V."""
    pcfg = cfg.get("problem", {})
    if "name" in pcfg:
        name = pcfg["name"].upper()
        if name not in NAMED_PROBLEMS:
            raise ValueError(f"unknown named problem {name!r}")
        return named_problem(name, eps=pcfg.get("eps"))
    d = int(pcfg.get("d", 1))
    ham = pcfg.get("hamiltonian", {})
    V = FourierSeries.from_config(d, ham["V"]) if "V" in ham else None
    ccfg = pcfg["coupling"]
    coupling = CouplingSpec(kind=ccfg.get("kind", "zero"),
                            kappa=float(ccfg.get("kappa", 0.0)),
                            theta=float(ccfg.get("theta", 2.0)),
                            mbar=float(ccfg["mbar"]),
                            cbar=ccfg.get("cbar"),
                            eps=ccfg.get("eps"))
    return ProblemSpec(T=float(pcfg.get("T", 1.0)), d=d,
                       H=HamiltonianSpec(s=float(ham.get("s", 2.0)), V=V),
                       coupling=coupling,
                       m0=FourierSeries.from_config(d, pcfg["m0"]),
                       g=FourierSeries.from_config(d, pcfg["g"]))


def build_grid(cfg: dict, problem: ProblemSpec) -> GridSpec:
    gcfg = cfg.get("grid", {})
    return GridSpec(d=problem.d, nx=int(gcfg.get("nx", 64)),
                    nt=int(gcfg.get("nt", 64)), T=problem.T)


def build_solver_options(cfg: dict):
    from .solver import SolverOptions

    scfg = dict(cfg.get("solver", {}))
    name = cfg.get("problem", {}).get("name")
    base = named_solver_options(name) if name else SolverOptions()
    for key, val in scfg.items():
        if not hasattr(base, key):
            raise ValueError(f"unknown solver option {key!r}")
        setattr(base, key, type(getattr(base, key))(val))
    return base


def _formats(cfg: dict):
    fmts = cfg.get("output", {}).get("formats", ["bin"])
    bad = set(fmts) - {"csv", "bin"}
    if bad:
        raise ValueError(f"unknown output formats {sorted(bad)}")
    return fmts


def _outdir(args, cfg: dict) -> Path:
    out = args.out or cfg.get("output", {}).get("directory") or "mfgcap_run"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _set_threads(n):
    if n is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(limits=int(n))
    except ImportError:
        pass


def write_manifest(outdir: Path, cfg: dict, **extra) -> None:
    manifest = {
        "config": cfg,
        "versions": {"mfgcap": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
        **extra,
    }
    with open(outdir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, default=float)


def _csv_table(path: Path, header_meta: list, columns: list, rows: list) -> None:
    """CSV with '#' metadata/header comment lines carrying units and grid info."""
    with open(path, "w") as fh:
        for line in header_meta:
            fh.write(f"# {line}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(f"{v}" for v in row) + "\n")


# --- solve ---------------------------------------------------------------------

def _write_solution(outdir: Path, solution, grid: GridSpec, fmts) -> None:
    fields = [("u", solution.u, "value"), ("m", solution.m, "density"),
              ("w", solution.w, "momentum"), ("beta", solution.beta, "price"),
              ("beta_T", solution.beta_T, "terminal")]
    for name, values, kind in fields:
        if "bin" in fmts:
            save_field_bin(outdir / f"{name}.mfgf", values, grid, kind)
        if "csv" in fmts and kind != "momentum":
            save_field_csv(outdir / f"{name}.csv", values, grid, name)


def _solve_one(problem, grid, options, outdir: Path, cfg, fmts, eps=None):
    from . import solver as solver_mod
    from .duality import certify, save_report

    t0 = time.perf_counter()
    solution = solver_mod.run(problem, grid, options)
    wall = time.perf_counter() - t0
    report = certify(solution, problem, grid)
    _write_solution(outdir, solution, grid, fmts)
    save_report(outdir / "report.txt", report)
    diag = {k: v for k, v in solution.diagnostics.items() if k != "history"}
    write_manifest(outdir, cfg, wall_time=wall, eps=eps,
                   converged=bool(diag.get("converged")), diagnostics=diag)
    return solution, report, diag


def cmd_solve(args) -> int:
    cfg = load_config(args.config)
    problem = build_problem(cfg)
    grid = build_grid(cfg, problem)
    rep = validate(problem, grid)
    if rep.hard_failures:
        for msg in rep.hard_failures:
            print(f"validation: {msg}", file=sys.stderr)
        return EXIT_INVALID
    options = build_solver_options(cfg)
    fmts = _formats(cfg)
    outdir = _outdir(args, cfg)
    solution, report, diag = _solve_one(problem, grid, options, outdir, cfg, fmts)
    print(f"solve: relative gap {report.relative_gap:.3e} "
          f"after {diag['iterations']} iterations")

    for eps in cfg.get("penalized", {}).get("eps", []):
        sub = outdir / f"pen_eps_{eps}"
        sub.mkdir(parents=True, exist_ok=True)
        pen_problem = ProblemSpec(T=problem.T, d=problem.d, H=problem.H,
                                  coupling=penalize(problem.coupling, eps),
                                  m0=problem.m0, g=problem.g)
        _solve_one(pen_problem, grid, build_solver_options(cfg), sub, cfg,
                   fmts, eps=eps)
        print(f"solve: penalized eps={eps} written to {sub}")

    return EXIT_OK if diag.get("converged") else EXIT_NOT_CONVERGED


# --- project --------------------------------------------------------------------

def cmd_project(args) -> int:
    from .geodesic import ProjectionOptions, lemma51_check, solve_projection

    cfg = load_config(args.config)
    problem = build_problem(cfg)
    grid = build_grid(cfg, problem)
    outdir = _outdir(args, cfg)
    m0 = problem.sample_m0(grid)
    g = problem.sample_g(grid)
    mbar = problem.coupling.mbar
    pcfg = cfg.get("projection", {})
    opts = ProjectionOptions(fw_tol=float(pcfg.get("fw_tol", 1e-6)),
                             max_iters=int(pcfg.get("max_iters", 2000)))
    m1, info = solve_projection(m0, g, mbar, opts)
    save_field_bin(outdir / "m1.mfgf", m1, grid, "density")
    save_field_csv(outdir / "m1.csv", m1, grid, "m1")
    t_samples = pcfg.get("t_samples", list(np.linspace(0.0, 1.0, 11)))
    lemma = lemma51_check(m0, m1, mbar, problem.coupling.cbar, t_samples)
    meta = [f"grid d={grid.d} nx={grid.nx} nt={grid.nt} T={grid.T}",
            f"mbar={mbar} cbar={problem.coupling.cbar} lam={lemma['lam']}",
            "columns: t (time fraction, unitless), max_density (1/volume), "
            "bound (1/volume), violation (1/volume, negative means satisfied)"]
    _csv_table(outdir / "lemma51.csv", meta,
               ["t", "max_density", "bound", "violation"],
               [(r["t"], r["max_density"], r["bound"], r["violation"])
                for r in lemma["rows"]])
    write_manifest(outdir, cfg, projection=info, lemma51_ok=lemma["ok"])
    print(f"project: objective {info['objective']:.6e}, "
          f"certificate gap {info['fw_gap']:.3e}, "
          f"geodesic bound {'ok' if lemma['ok'] else 'VIOLATED'}")
    return EXIT_OK if info["converged"] else EXIT_NOT_CONVERGED


# --- sample ----------------------------------------------------------------------

def _load_solution(rundir: Path, grid: GridSpec):
    from .solver import Solution

    needed = ["u", "m", "w", "beta", "beta_T"]
    missing = [n for n in needed if not (rundir / f"{n}.mfgf").exists()]
    if missing:
        raise FileNotFoundError(
            f"missing solve outputs in {rundir}: {missing}")
    vals = {}
    for n in needed:
        arr, g, _ = load_field_bin(rundir / f"{n}.mfgf")
        if (g.d, g.nx, g.nt) != (grid.d, grid.nx, grid.nt):
            raise ValueError(f"{n}.mfgf grid does not match the config grid")
        vals[n] = arr
    return Solution(grid=grid, u=vals["u"], m=vals["m"], w=vals["w"],
                    beta=vals["beta"], beta_raw=vals["beta"],
                    beta_T=vals["beta_T"])


def cmd_sample(args) -> int:
    from .flows import (energy_residual, marginal_error, mollify,
                        perturbation_test, sample_paths, save_ensemble)

    cfg = load_config(args.config)
    problem = build_problem(cfg)
    grid = build_grid(cfg, problem)
    outdir = _outdir(args, cfg)
    solution = _load_solution(outdir, grid)
    fcfg = cfg.get("flows", {})
    N = int(fcfg.get("N", 10000))
    eps = float(fcfg.get("eps_mollify", 0.05))
    seed = int(fcfg.get("seed", 0))
    fields = mollify(solution, problem, eps)
    ens = sample_paths(fields, problem.sample_m0(grid), N, seed,
                       problem=problem)
    save_ensemble(outdir / "paths.mfgp", ens)
    # superposition: path marginals follow the mollified flow's density
    marg = marginal_error(ens, fields.m_eps, grid)
    absres, relres = energy_residual(ens, solution, problem, grid)
    meta = [f"grid d={grid.d} nx={grid.nx} nt={grid.nt} T={grid.T}",
            f"N={N} eps_mollify={eps} seed={seed}",
            "columns: t (time), l1_error (unitless, densities integrate to 1)"]
    _csv_table(outdir / "marginals.csv", meta, ["t", "l1_error"],
               list(zip(grid.time_nodes(), marg["l1"])))
    result = {"N": N, "eps_mollify": eps, "seed": seed,
              "max_marginal_l1": float(np.max(marg["l1"])),
              "ensemble_energy": marg["ensemble_energy"],
              "energy_residual_abs": absres, "energy_residual_rel": relres}
    if "t1" in fcfg and "t2" in fcfg:
        rep = perturbation_test(ens, fields, problem, grid,
                                t1=float(fcfg["t1"]), t2=float(fcfg["t2"]),
                                K_perturb=int(fcfg.get("K_perturb", 20)),
                                seed=seed)
        result["perturbation"] = rep
        with open(outdir / "violations.txt", "w") as fh:
            for k, v in rep.items():
                fh.write(f"{k} = {v}\n")
    write_manifest(outdir, cfg, sample=result)
    print(f"sample: {N} paths, worst marginal L1 "
          f"{result['max_marginal_l1']:.3e}, "
          f"energy residual {relres:.3e} (relative)")
    return EXIT_OK


# --- report ----------------------------------------------------------------------

def _load_run(rundir: Path):
    with open(rundir / "manifest.json") as fh:
        manifest = json.load(fh)
    m, grid, _ = load_field_bin(rundir / "m.mfgf")
    return manifest, m, grid


def cmd_report(args) -> int:
    from .duality import regularity_probe

    run_dirs = [Path(p) for p in args.run_dirs]
    for p in run_dirs:
        if not (p / "manifest.json").exists():
            print(f"report: no manifest in {p}", file=sys.stderr)
            return EXIT_INVALID
    outdir = Path(args.out) if args.out else run_dirs[0]
    outdir.mkdir(parents=True, exist_ok=True)

    # penalty sweep: penalized sub-runs measured against their hard-cap parent
    sweep_rows = []
    for base in run_dirs:
        subs = sorted(base.glob("pen_eps_*"),
                      key=lambda p: -float(p.name.split("_")[-1]))
        if not subs:
            continue
        manifest, m_hard, grid = _load_run(base)
        mbar = _mbar_from_manifest(manifest)
        for sub in subs:
            man, m_eps, _ = _load_run(sub)
            excess = float(np.max(m_eps) - mbar)
            l2 = float(np.sqrt(np.sum((m_eps - m_hard) ** 2)
                               * grid.cell_volume * grid.dt))
            B_eps = man["diagnostics"].get("B_value")
            sweep_rows.append((man.get("eps"), excess, l2, B_eps))
    if sweep_rows:
        _csv_table(outdir / "eps_sweep.csv",
                   ["penalized-coupling sweep vs hard-cap run",
                    "columns: eps (penalty width), max_excess (density units, "
                    "max m_eps - mbar), l2_distance (space-time L2 to hard run), "
                    "B_value (flow-side objective)"],
                   ["eps", "max_excess", "l2_distance", "B_value"], sweep_rows)

    # regularity probe rows, one per run dir (refinement table when the runs
    # form a grid ladder)
    probe_rows = []
    for p in run_dirs:
        manifest, m, grid = _load_run(p)
        try:
            sol = _load_solution(p, grid)
        except (FileNotFoundError, ValueError):
            continue
        probe = regularity_probe(sol, grid, [(0.1, 0.9)])
        row = probe["windows"][0]
        probe_rows.append((p.name, grid.nx, grid.nt, row["l1"],
                           probe["beta_T_l1"], probe["max_abs_u"]))
    if probe_rows:
        _csv_table(outdir / "regularity.csv",
                   ["interior-price refinement table, window t in [0.1, 0.9]",
                    "columns: run, nx, nt, beta_l1 (interior price mass), "
                    "beta_T_l1 (terminal price mass), max_abs_u"],
                   ["run", "nx", "nt", "beta_l1", "beta_T_l1", "max_abs_u"],
                   probe_rows)

    # geodesic bound table when a projection output is present
    lemma_rows = []
    for p in run_dirs:
        src = p / "lemma51.csv"
        if src.exists():
            for line in src.read_text().splitlines():
                if not line.startswith("#") and not line.startswith("t,"):
                    lemma_rows.append((p.name, *line.split(",")))
    if lemma_rows:
        _csv_table(outdir / "lemma51_all.csv",
                   ["geodesic max-density bound, aggregated over runs",
                    "columns: run, t, max_density, bound, violation"],
                   ["run", "t", "max_density", "bound", "violation"], lemma_rows)

    print(f"report: wrote {'eps_sweep.csv ' if sweep_rows else ''}"
          f"{'regularity.csv ' if probe_rows else ''}"
          f"{'lemma51_all.csv' if lemma_rows else ''} to {outdir}")
    return EXIT_OK


def _mbar_from_manifest(manifest: dict) -> float:
    pcfg = manifest["config"].get("problem", {})
    if "name" in pcfg:
        return named_problem(pcfg["name"], eps=pcfg.get("eps")).coupling.mbar
    return float(pcfg["coupling"]["mbar"])


# --- entry point -------------------------------------------------------------------

def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mfgcap",
        description="Density-capped mean field games: solve, project, sample, report.")
    parser.add_argument("--config", help="path to the JSON run config")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker thread cap (default: available parallelism)")
    parser.add_argument("--out", help="output directory override")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", help="run the solver and certify the result")
    sub.add_parser("project", help="terminal projection and geodesic bound check")
    sub.add_parser("sample", help="sample trajectories from a prior solve")
    rep = sub.add_parser("report", help="aggregate tables across run directories")
    rep.add_argument("run_dirs", nargs="+", help="run directories to aggregate")

    args = parser.parse_args(argv)
    _set_threads(args.threads)
    if args.command != "report" and not args.config:
        print("a --config file is required", file=sys.stderr)
        return EXIT_INVALID
    try:
        if args.command == "solve":
            return cmd_solve(args)
        if args.command == "project":
            return cmd_project(args)
        if args.command == "sample":
            return cmd_sample(args)
        return cmd_report(args)
    except (ValueError, KeyError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
