"""Command-line entry point.

Subcommands: simulate, filter, zakai-grid, duality, pinv-test, accept.
Exit codes: 0 all requested verdicts pass, 1 numerical failure (the failing
check is named), 2 configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import testfunctions as tf
from .acceptance import run_criteria
from .config import ExperimentConfig, load_config
from .duality import (FrequencyChoice, duality_report, martingale_test,
                      orthogonality_test, replica_pairing, standard_frequency_probes,
                      uniqueness_probe)
from .errors import ConfigError, FilterLabError, UnsupportedConfigurationError
from .filters import run_filter, zakai_residuals
from .gridpde import Grid1D, export_grid_csv, zakai_fd_solve
from .measure import integrate, normalize
from .model import builtin_scenarios
from .report import (RunReport, write_duality_csv, write_filter_csv,
                     write_probe_csv, write_report)
from .sde import export_paths_csv, project_innovations, simulate_joint


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="filterlab",
        description="Correlated-noise nonlinear filtering: particle and grid "
                    "solvers with duality diagnostics.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=str, default=None, help="TOML config file")
        p.add_argument("--seed", type=int, default=None, help="64-bit experiment seed")
        p.add_argument("--out", type=str, default=None, help="output directory")
        p.add_argument("--workers", type=int, default=None,
                       help="worker threads (or FILTERLAB_WORKERS)")
        p.add_argument("--scenario", type=str, default=None, help="scenario name")
        p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("simulate", help="sample joint signal/observation paths")
    common(p)
    p.add_argument("--replicas", type=int, default=None)

    p = sub.add_parser("filter", help="run the weighted particle filter")
    common(p)

    p = sub.add_parser("zakai-grid", help="finite-difference density solve (d = 1)")
    common(p)

    p = sub.add_parser("duality", help="pairing gaps, martingale, orthogonality, probe")
    common(p)
    p.add_argument("--replicas", type=int, default=None)

    p = sub.add_parser("pinv-test", help="pseudo-inverse property suite")
    common(p)
    p.add_argument("--trials", type=int, default=1000)

    p = sub.add_parser("accept", help="run the acceptance criteria")
    common(p)
    p.add_argument("--criteria", type=str, default=None,
                   help="comma-separated criterion numbers (default: all)")
    return parser


def _effective_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.scenario is not None:
        cfg.scenario = args.scenario
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    if args.workers is not None:
        cfg.workers = args.workers
    elif args.config is None and "FILTERLAB_WORKERS" in os.environ:
        try:
            cfg.workers = int(os.environ["FILTERLAB_WORKERS"])
        except ValueError:
            raise ConfigError("FILTERLAB_WORKERS must be an integer")
    if getattr(args, "replicas", None) is not None:
        cfg.replicas = args.replicas
    return cfg.validate()


def _scenario(cfg: ExperimentConfig):
    spec = builtin_scenarios().get(cfg.scenario)
    if spec is None:
        raise ConfigError(f"unknown scenario {cfg.scenario!r}; known: "
                          f"{sorted(builtin_scenarios())}")
    updates = {"seed": cfg.seed}
    if cfg.dt is not None:
        updates["dt"] = cfg.dt
    if cfg.horizon is not None:
        updates["horizon"] = cfg.horizon
    if cfg.count is not None:
        updates["n_particles"] = cfg.count
    return spec.with_updates(**updates)


def _phis(cfg: ExperimentConfig):
    return [tf.by_name(name) for name in cfg.phis]


def _freqs(cfg: ExperimentConfig, l_obs: int, horizon: float):
    known = {f.label: f for f in standard_frequency_probes(l_obs, horizon)}
    out = []
    for label in cfg.frequencies:
        if label not in known:
            raise ConfigError(f"unknown frequency label {label!r}; known: "
                              f"{sorted(known)}")
        out.append(known[label])
    return out


def _report(cfg: ExperimentConfig, command: str) -> RunReport:
    # out_dir and workers are environmental: they must not influence any
    # number, so they stay out of the summary echo (byte-identity contract)
    tables = cfg.as_tables()
    tables["run"] = {k: v for k, v in tables["run"].items()
                     if k not in ("out_dir", "workers")}
    return RunReport(command=command, version=__version__, config=tables)


def _emit(report: RunReport, cfg: ExperimentConfig, quiet: bool) -> int:
    write_report(report, cfg.out_dir)
    if not quiet:
        for check in report.checks:
            status = "PASS" if check["passed"] else "FAIL"
            print(f"[{status}] {check['name']}")
        print(f"summary: {Path(cfg.out_dir) / 'summary.json'}")
    if not report.all_passed:
        failing = [c["name"] for c in report.checks if not c["passed"]]
        print(f"numerical failure: {', '.join(failing)}", file=sys.stderr)
        return 1
    return 0


def _cmd_simulate(args) -> int:
    cfg = _effective_config(args)
    spec = _scenario(cfg)
    t0 = time.perf_counter()
    bundle = simulate_joint(spec, n_paths=cfg.replicas, seed=cfg.seed, replica=0)
    report = _report(cfg, "simulate")
    out = Path(cfg.out_dir)
    for name in export_paths_csv(bundle, out):
        report.register_file(out / name)
    sup = float(np.max(np.sum(bundle.x_path**2, axis=2)
                       + np.sum(bundle.y_path**2, axis=2)))
    report.add_check("paths_finite", "square_integrable_paths",
                     bool(np.isfinite(sup)), {"sup_square_norm": sup,
                                              "n_paths": bundle.n_paths})
    report.timings["simulate"] = time.perf_counter() - t0
    return _emit(report, cfg, args.quiet)


def _cmd_filter(args) -> int:
    cfg = _effective_config(args)
    spec = _scenario(cfg)
    t0 = time.perf_counter()
    bundle = simulate_joint(spec, seed=cfg.seed, replica=0)
    run = run_filter(spec, bundle.y_path[0], seed=cfg.seed, replica=1)
    phis = _phis(cfg)
    report = _report(cfg, "filter")
    out = Path(cfg.out_dir)
    csv_path = write_filter_csv(run, phis, out / "filter_report.csv")
    report.register_file(csv_path)

    ones = tf.constant_one()
    norm_defect = max(abs(integrate(normalize(run.ensemble(i)), ones) - 1.0)
                      for i in range(0, run.grid.n_steps + 1,
                                     max(1, run.grid.n_steps // 20)))
    report.add_check("normalized_mass_exact", "normalized_mass",
                     norm_defect <= 5e-15, {"defect": norm_defect})
    _, _, sto = zakai_residuals(run, phis, return_parts=True)
    sto_max = float(np.abs(sto).max())
    k0 = bool(np.all(spec.coeffs.eval_k(0.0, bundle.y_path[0][:1]) == 0.0))
    report.add_check("stochastic_term", "innovation_term_diagnostic",
                     (sto_max == 0.0) if k0 else np.isfinite(sto_max),
                     {"max_abs_stochastic_term": sto_max,
                      "identically_zero": sto_max == 0.0,
                      "k_is_zero": k0})
    report.add_check("ess_positive", "weight_degeneracy",
                     float(run.ess.min()) >= 1.0,
                     {"min_ess": float(run.ess.min()),
                      "sup_mass": run.diagnostics["sup_mass"]})
    report.timings["filter"] = time.perf_counter() - t0
    return _emit(report, cfg, args.quiet)


def _cmd_zakai_grid(args) -> int:
    cfg = _effective_config(args)
    spec = _scenario(cfg)
    t0 = time.perf_counter()
    bundle = simulate_joint(spec, seed=cfg.seed, replica=0)
    grid = Grid1D(cfg.x_min, cfg.x_max, cfg.n_points)
    w_proj = project_innovations(spec.coeffs, bundle.grid, bundle.y_path[0])
    res = zakai_fd_solve(spec, bundle.y_path[0], w_proj, grid)

    report = _report(cfg, "zakai-grid")
    out = Path(cfg.out_dir)
    n = res.path.values.shape[0] - 1
    for label, idx in (("initial", 0), ("half", n // 2), ("final", n)):
        path = export_grid_csv(grid, res.path.values[idx], out / f"grid_{label}.csv")
        report.register_file(path)
    report.add_check("density_finite", "grid_density",
                     bool(np.all(np.isfinite(res.path.values))),
                     {"terminal_mass": float(res.mass[-1]),
                      "boundary_max": float(res.boundary_max)})
    report.add_check("boundary_leak", "dirichlet_leak",
                     res.boundary_max <= 1e-3, {"boundary_max": float(res.boundary_max)})
    report.timings["zakai_grid"] = time.perf_counter() - t0
    return _emit(report, cfg, args.quiet)


def _cmd_duality(args) -> int:
    cfg = _effective_config(args)
    spec = _scenario(cfg)
    t0 = time.perf_counter()
    grid = Grid1D(cfg.x_min, cfg.x_max, cfg.n_points)
    phis = _phis(cfg)
    freqs = _freqs(cfg, spec.dims.l_obs, spec.horizon)
    report = _report(cfg, "duality")
    out = Path(cfg.out_dir)

    rows = duality_report(spec, freqs, phis, cfg.replicas, grid,
                          seed=cfg.seed, workers=cfg.workers)
    report.register_file(write_duality_csv(rows, out / "duality_report.csv"))
    for r in rows:
        report.add_check(f"gap[{r.freq_label},{r.phi_label}]", "exponential_pairing",
                         r.passes(budget=0.02),
                         {"gap": r.gap, "se_diff": r.se_diff})

    tg_steps = spec.n_steps
    snaps = list(range(0, tg_steps + 1, max(1, tg_steps // 5)))
    samples = replica_pairing(spec, grid, [freqs[0]], [phis[0]], max(cfg.replicas, 100),
                              seed=cfg.seed, snap_indices=snaps, workers=cfg.workers)
    z = martingale_test(samples.mass_path_samples.astype(complex), samples.snap_times)
    report.add_check("mass_martingale", "conditional_martingales",
                     z.max_abs_z <= 3.0, {"max_abs_z": z.max_abs_z})

    cb = builtin_scenarios()["correlated_bounded"].with_updates(seed=cfg.seed)
    fr_obs = FrequencyChoice.piecewise([[1.0, -1.0], [2.0, 0.0]], cb.horizon, "obs")
    orth = orthogonality_test(cb, lambda t, x, y: cb.coeffs.eval_h2(t, x, y),
                              fr_obs, max(cfg.replicas, 100), seed=cfg.seed,
                              workers=cfg.workers)
    report.add_check("orthogonality", "conditional_orthogonality", orth.passed,
                     {"estimate_re": orth.estimate.real,
                      "estimate_im": orth.estimate.imag,
                      "se_re": orth.se_re, "se_im": orth.se_im})

    probe_grid = Grid1D(-6.5, 6.5, 261)
    probe = uniqueness_probe(spec, phis, freqs, max(cfg.replicas // 2, 100),
                             probe_grid, seed=cfg.seed, workers=cfg.workers)
    report.register_file(write_probe_csv(probe, out / "uniqueness_probe.csv"))
    for r in probe:
        report.add_check(f"probe[{r.freq_label},{r.phi_label}]",
                         "two_solver_characteristics", r.passed,
                         {"diff": r.diff, "tolerance": r.tolerance})
    report.timings["duality"] = time.perf_counter() - t0
    return _emit(report, cfg, args.quiet)


def _cmd_pinv_test(args) -> int:
    cfg = _effective_config(args)
    from .acceptance import criterion_penrose
    res = criterion_penrose(seed=cfg.seed, n_matrices=args.trials)
    report = _report(cfg, "pinv-test")
    stats = {k: v for k, v in res.details.items() if k != "runtime_ok"}
    report.add_check("penrose_suite", res.property_id, res.passed, stats)
    report.timings["pinv_test"] = res.runtime_seconds
    code = _emit(report, cfg, True)
    if not args.quiet:
        n_ok = res.details["n_passed"]
        print(f"{n_ok}/{args.trials} Penrose-identity passes")
    return code


def _cmd_accept(args) -> int:
    cfg = _effective_config(args)
    numbers = None
    if args.criteria:
        try:
            numbers = [int(x) for x in args.criteria.split(",") if x.strip()]
        except ValueError:
            raise ConfigError(f"--criteria must be comma-separated integers, "
                              f"got {args.criteria!r}")
        unknown = [n for n in numbers if not 1 <= n <= 10]
        if unknown:
            raise ConfigError(f"unknown criterion numbers {unknown}")

    report = _report(cfg, "accept")
    progress = None if args.quiet else (lambda r: print(r.line, flush=True))
    results = run_criteria(numbers, seed=cfg.seed, workers=cfg.workers,
                           progress=progress)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    import csv as _csv
    criteria_csv = out / "criteria.csv"
    with open(criteria_csv, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["number", "name", "property", "passed"])
        for r in results:
            writer.writerow([r.number, r.name, r.property_id,
                             "pass" if r.passed else "fail"])
    report.register_file(criteria_csv)
    for r in results:
        stats = {k: v for k, v in r.details.items()}
        report.add_check(f"criterion_{r.number}_{r.name}", r.property_id,
                         r.passed, stats)
        report.timings[f"criterion_{r.number}"] = r.runtime_seconds
    return _emit(report, cfg, args.quiet)


_COMMANDS = {
    "simulate": _cmd_simulate,
    "filter": _cmd_filter,
    "zakai-grid": _cmd_zakai_grid,
    "duality": _cmd_duality,
    "pinv-test": _cmd_pinv_test,
    "accept": _cmd_accept,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, UnsupportedConfigurationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FilterLabError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
