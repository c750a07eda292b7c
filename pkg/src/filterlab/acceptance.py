"""The acceptance suite: ten numbered criteria with pinned tolerances.

Each criterion returns a CriterionResult with a pass verdict, the statistics
behind it, and its wall-clock runtime (each criterion also carries a runtime
budget that is part of the verdict). All randomness flows through the
documented substream scheme, so a fixed seed reproduces every number
bit-for-bit regardless of worker count.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import testfunctions as tf
from .duality import (FrequencyChoice, gap_from_samples, martingale_test,
                      orthogonality_test, replica_pairing, standard_frequency_probes,
                      uniqueness_probe)
from .filters import mass_process, run_filter, zakai_residuals
from .gridpde import Grid1D, ItoIntegrands, dual_backward_solve, ito_check
from .measure import integrate, normalize
from .model import (CoefficientSet, Dimensions, GaussianInitialLaw, ScenarioSpec,
                    builtin_scenarios)
from .oracles import kalman_bucy_path
from .pinv import penrose_residuals, pinv_minor, pinv_svd, projector
from .rng import ROLE_MATRIX, ROLE_SAMPLING, substream
from .sde import TimeGrid, simulate_joint


@dataclass
class CriterionResult:
    number: int
    name: str
    property_id: str
    passed: bool
    runtime_seconds: float
    budget_seconds: float
    details: dict = field(default_factory=dict)

    @property
    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] criterion {self.number:2d} {self.name} ({self.runtime_seconds:.1f}s)"


def _finish(number, name, prop, passed, t0, budget, details) -> CriterionResult:
    runtime = time.perf_counter() - t0
    details["runtime_ok"] = runtime <= budget
    return CriterionResult(number, name, prop, bool(passed) and runtime <= budget,
                           runtime, budget, details)


# -- criterion 1 ------------------------------------------------------------

def criterion_penrose(seed: int = 42, n_matrices: int = 1000, workers: int = 1) -> CriterionResult:
    """Four defining identities, route agreement, and the projector bound."""
    t0 = time.perf_counter()
    rng = substream(seed, 1, ROLE_MATRIX)
    worst = {"svd_residual": 0.0, "minor_residual": 0.0, "route_gap": 0.0,
             "projector_excess": 0.0, "projector_defect": 0.0}
    n_passed = 0
    for i in range(n_matrices):
        d = int(rng.integers(1, 7))
        l = int(rng.integers(1, 7))
        scale = 10.0 if i % 2 else 1.0
        if rng.uniform() < 0.3 and min(d, l) > 1:
            r = int(rng.integers(0, min(d, l)))
            a = (rng.uniform(-1, 1, (d, r)) @ rng.uniform(-1, 1, (r, l))) * scale \
                if r else np.zeros((d, l))
        else:
            a = rng.uniform(-1, 1, (d, l)) * scale
        p_svd = pinv_svd(a)
        p_minor, _ = pinv_minor(a)
        res_svd = max(penrose_residuals(a, p_svd).values())
        res_minor = max(penrose_residuals(a, p_minor).values())
        gap = float(np.abs(p_svd - p_minor).max())
        proj = projector(a)
        excess = float(np.linalg.norm(proj, 2) - 1.0)
        defect = float(np.abs(proj @ proj - proj).max())
        worst["svd_residual"] = max(worst["svd_residual"], res_svd)
        worst["minor_residual"] = max(worst["minor_residual"], res_minor)
        worst["route_gap"] = max(worst["route_gap"], gap)
        worst["projector_excess"] = max(worst["projector_excess"], excess)
        worst["projector_defect"] = max(worst["projector_defect"], defect)
        if (res_svd <= 1e-9 and res_minor <= 1e-9 and gap <= 1e-8
                and excess <= 1e-12 and defect <= 1e-10):
            n_passed += 1
    passed = n_passed == n_matrices
    details = {"n_matrices": n_matrices, "n_passed": n_passed, **worst}
    return _finish(1, "penrose_suite", "penrose_identities", passed, t0, 30.0, details)


# -- criterion 2 ------------------------------------------------------------

def criterion_degenerate_collapse(seed: int = 42) -> CriterionResult:
    """k = 0: the filter equals the prior law; no stochastic correction term."""
    t0 = time.perf_counter()
    spec = builtin_scenarios()["degenerate_k0"]          # N = 1e4, dt = 1e-3
    b = simulate_joint(spec, seed=seed, replica=0)
    run = run_filter(spec, b.y_path[0], seed=seed, replica=1)
    prior = simulate_joint(spec, n_paths=spec.n_particles, seed=seed, replica=2)

    phis = [tf.tanh_ramp(1.0), tf.gaussian_bump(), tf.sech_bump(1.0)]
    n = spec.n_particles
    rows = []
    ok = True
    for phi in phis:
        for idx in (run.grid.n_steps // 2, run.grid.n_steps):
            w = run.weights(idx)
            vals = phi.value(run.x_path[idx])
            est = float(w @ vals)
            se_f = float(np.std(w * vals * n, ddof=1) / np.sqrt(n))
            mc_vals = phi.value(prior.x_path[:, idx])
            mc = float(mc_vals.mean())
            se_p = float(mc_vals.std(ddof=1) / np.sqrt(n))
            tol = 3 * float(np.hypot(se_f, se_p))
            rows.append({"phi": phi.name, "t": run.grid.times[idx],
                         "filter": est, "prior_mc": mc, "tol": tol,
                         "ok": abs(est - mc) <= tol})
            ok = ok and rows[-1]["ok"]

    _, _, sto = zakai_residuals(run, phis, return_parts=True)
    sto_zero = bool(np.all(sto == 0.0))
    details = {"comparisons": rows, "stochastic_term_max": float(np.abs(sto).max()),
               "stochastic_term_identically_zero": sto_zero}
    return _finish(2, "degenerate_collapse", "filter_equals_prior_when_k_zero",
                   ok and sto_zero, t0, 120.0, details)


# -- criterion 3 ------------------------------------------------------------

def criterion_kalman_bucy(seed: int = 42, n_bootstrap: int = 200) -> CriterionResult:
    """Affine scenario: filter mean/variance vs the moment-ODE reference."""
    t0 = time.perf_counter()
    spec = builtin_scenarios()["linear_gaussian"]        # N = 1e4, dt = 1e-3
    b = simulate_joint(spec, seed=seed, replica=0)
    run = run_filter(spec, b.y_path[0], seed=seed, replica=1)
    m_ref, p_ref = kalman_bucy_path(spec.meta, run.grid, b.y_path[0])

    w = run.normalized_weights(-1)
    x = run.x_path[-1][:, 0]
    mean_est = float(w @ x)
    var_est = float(w @ (x - mean_est) ** 2)

    rng = substream(seed, 3, ROLE_SAMPLING)
    n = spec.n_particles
    boot_m = np.empty(n_bootstrap)
    boot_v = np.empty(n_bootstrap)
    for bi in range(n_bootstrap):
        idx = rng.integers(0, n, size=n)
        wb = w[idx]
        wb = wb / wb.sum()
        xb = x[idx]
        boot_m[bi] = wb @ xb
        boot_v[bi] = wb @ (xb - boot_m[bi]) ** 2
    se_m = float(boot_m.std(ddof=1))
    se_v = float(boot_v.std(ddof=1))

    mean_err = abs(mean_est - m_ref[-1])
    var_err = abs(var_est - p_ref[-1])
    ok = mean_err <= 3 * se_m + 0.05 and var_err <= 3 * se_v + 0.05
    details = {"mean_estimate": mean_est, "mean_reference": float(m_ref[-1]),
               "mean_error": float(mean_err), "mean_se": se_m,
               "var_estimate": var_est, "var_reference": float(p_ref[-1]),
               "var_error": float(var_err), "var_se": se_v}
    return _finish(3, "kalman_bucy_oracle", "affine_filter_moments", ok, t0, 120.0, details)


# -- criterion 4 ------------------------------------------------------------

def criterion_mass_equivalence(seed: int = 42) -> CriterionResult:
    """Normalization exactness and the mass-process identity with dt-scaling."""
    t0 = time.perf_counter()
    # exactness and the absolute bound on the rank-deficient-k scenario
    spec = builtin_scenarios()["correlated_bounded"]
    b = simulate_joint(spec, seed=seed, replica=0)
    run = run_filter(spec, b.y_path[0], n_particles=6000, seed=seed, replica=1)
    one = tf.constant_one()
    norm_defect = 0.0
    for i in range(run.grid.n_steps + 1):
        norm_defect = max(norm_defect,
                          abs(integrate(normalize(run.ensemble(i)), one) - 1.0))
    j = mass_process(run)
    rel = np.abs(j - run.mass) / run.mass
    abs_ok = float(rel.max()) <= 0.05

    # dt-scaling of the defect on the shared-noise scenario
    spec_r = builtin_scenarios()["refinement_study"]
    errs = {4: [], 1: []}
    for rep in range(6):
        fine = simulate_joint(spec_r, seed=seed, replica=10 + rep)
        for factor in (4, 1):
            grid = fine.grid.coarsen(factor)
            y = fine.y_path[0][::factor]
            r = run_filter(spec_r.with_updates(dt=grid.dt), y, n_particles=4000,
                           seed=seed, replica=100 * factor + rep, grid=grid)
            jj = mass_process(r)
            errs[factor].append(float(np.max(np.abs(jj - r.mass) / r.mass)))
    e4, e1 = float(np.mean(errs[4])), float(np.mean(errs[1]))
    ratio = e4 / e1
    ratio_ok = 1.5 <= ratio <= 3.0

    ok = norm_defect <= 5e-15 and abs_ok and ratio_ok
    details = {"normalization_defect": float(norm_defect),
               "mass_rel_error_dt1e3": float(rel.max()),
               "mass_rel_error_4e3_mean": e4, "mass_rel_error_1e3_mean": e1,
               "ratio": float(ratio)}
    return _finish(4, "mass_equivalence", "normalized_mass_and_mass_sde", ok, t0,
                   120.0, details)


# -- criterion 5 ------------------------------------------------------------

def criterion_zakai_residual(seed: int = 42, n_replicas: int = 8) -> CriterionResult:
    """Weak-form defect shrinks under dt-refinement at the expected rate."""
    t0 = time.perf_counter()
    spec = builtin_scenarios()["refinement_study"]       # N = 1e4
    phis = [tf.gaussian_bump(), tf.tanh_ramp(1.0), tf.sech_bump(1.0)]
    errs = {4: [], 2: [], 1: []}
    for rep in range(n_replicas):
        fine = simulate_joint(spec, seed=seed, replica=20 + rep)
        for factor in (4, 2, 1):
            grid = fine.grid.coarsen(factor)
            y = fine.y_path[0][::factor]
            run = run_filter(spec.with_updates(dt=grid.dt), y, seed=seed,
                             replica=1000 * factor + rep, grid=grid)
            res = zakai_residuals(run, phis)
            errs[factor].append(np.abs(res).max(axis=1))
    means = {k: np.mean(v, axis=0) for k, v in errs.items()}
    ratios = means[4] / means[1]
    monotone = np.all(means[4] > means[2]) and np.all(means[2] > means[1])
    in_band = np.all((ratios >= 1.2) & (ratios <= 3.0))
    details = {"phi_names": [p.name for p in phis],
               "max_residual_dt4e3": means[4].tolist(),
               "max_residual_dt2e3": means[2].tolist(),
               "max_residual_dt1e3": means[1].tolist(),
               "ratios_4e3_over_1e3": ratios.tolist(),
               "monotone": bool(monotone)}
    return _finish(5, "zakai_weak_form_refinement", "zakai_weak_form",
                   bool(monotone and in_band), t0, 180.0, details)


# -- criterion 6 ------------------------------------------------------------

def _dual_refinement_spec() -> ScenarioSpec:
    # moderate ellipticity keeps the dual solver admissible while the
    # particle-noise floor stays below the dt-signal
    dims = Dimensions(1, 1, 1, 1)
    coeffs = CoefficientSet(
        dims=dims,
        f=lambda t, x, y: (-0.8 * np.tanh(0.7 * x[:, 0]))[:, None],
        g=lambda t, x, y: np.full((len(x), 1, 1), 0.35),
        g_bar=lambda t, x, y: np.full((len(x), 1, 1), 0.45),
        h1=lambda t, y: np.zeros((len(y), 1)),
        h2=lambda t, x, y: (0.9 * np.sin(x[:, 0]))[:, None],
        k=lambda t, y: np.array([[1.0]]),
        y_free=True,
    )
    law = GaussianInitialLaw(np.array([0.0]), np.array([0.5]), np.zeros(1))
    return ScenarioSpec("dual_refinement", dims, coeffs, law, horizon=1.0, dt=1e-3,
                        n_particles=10_000, n_replicas=8, seed=0)


def criterion_ito_formula(seed: int = 42, n_replicas: int = 4) -> CriterionResult:
    """Product-rule residual for the three integrand families."""
    t0 = time.perf_counter()
    families = {}

    # families (a) static and (b) separable share the refinement scenario and
    # the same filter runs; only the integrand decomposition differs
    spec = builtin_scenarios()["refinement_study"]
    errs = {"static": {4: [], 1: []}, "separable": {4: [], 1: []}}
    for rep in range(n_replicas):
        fine = simulate_joint(spec, seed=seed, replica=30 + rep)
        for factor in (4, 1):
            grid = fine.grid.coarsen(factor)
            y = fine.y_path[0][::factor]
            run = run_filter(spec.with_updates(dt=grid.dt), y, seed=seed,
                             replica=2000 * factor + rep, grid=grid)
            times = grid.times
            integrands = {
                "static": ItoIntegrands.static(tf.gaussian_bump(), grid.n_steps),
                "separable": ItoIntegrands.separable(
                    tf.gaussian_bump(), 1.0 + 0.5 * np.sin(times),
                    0.5 * np.cos(times[:-1])),
            }
            for name, integ in integrands.items():
                res = ito_check(run, integ, run.w_proj, spec.coeffs)
                errs[name][factor].append(float(np.abs(res).max()))
    for name in ("static", "separable"):
        families[name] = (float(np.mean(errs[name][4])),
                          float(np.mean(errs[name][1])))

    # family (c): the backward dual field with its own drift decomposition
    spec_c = _dual_refinement_spec()
    grid_x = Grid1D(-7.0, 7.0, 281)
    fr = FrequencyChoice.constant(1.0, 1.0, "one")
    errs = {4: [], 1: []}
    for rep in range(n_replicas):
        fine = simulate_joint(spec_c, measure="reference", seed=seed, replica=40 + rep)
        for factor in (4, 1):
            tg = fine.grid.coarsen(factor)
            y = fine.y_path[0][::factor]
            run = run_filter(spec_c.with_updates(dt=tg.dt), y, seed=seed,
                             replica=3000 * factor + rep, grid=tg)
            sol = dual_backward_solve(spec_c.coeffs, grid_x, tg, fr.on_grid(tg),
                                      tf.gaussian_bump())
            res = ito_check(run, ItoIntegrands.from_dual(sol), run.w_proj, spec_c.coeffs)
            errs[factor].append(float(np.abs(res).max()))
    families["dual"] = (float(np.mean(errs[4])), float(np.mean(errs[1])))

    ok = True
    details = {}
    for name, (e4, e1) in families.items():
        ratio = e4 / e1
        fam_ok = e1 <= 0.05 and 1.2 <= ratio <= 3.0
        details[name] = {"residual_dt4e3": e4, "residual_dt1e3": e1,
                         "ratio": ratio, "ok": fam_ok}
        ok = ok and fam_ok
    return _finish(6, "ito_formula_families", "extended_product_rule", ok, t0,
                   120.0, details)


# -- criterion 7 ------------------------------------------------------------

def acceptance_phis() -> list[tf.TestFunction]:
    return [tf.gaussian_bump(), tf.sech_bump(1.0), tf.shifted_gaussian_moment(0.0, 1.5)]


def criterion_duality(seed: int = 42, n_replicas: int = 10_000,
                      workers: int = 1) -> CriterionResult:
    """Pairing identity across the probe family, including the r = 0 case."""
    t0 = time.perf_counter()
    spec = builtin_scenarios()["decoupled_classical"]    # dt = 1e-3
    grid = Grid1D(-7.0, 7.0, 401)                        # 6-sigma padded domain
    freqs = standard_frequency_probes(1, spec.horizon)
    phis = acceptance_phis()
    samples = replica_pairing(spec, grid, freqs, phis, n_replicas, n_particles=8,
                              seed=seed, workers=workers)
    rows = []
    ok = True
    for fi in range(len(freqs)):
        for pi in range(len(phis)):
            res = gap_from_samples(samples, fi, pi)
            rows.append({"freq": res.freq_label, "phi": res.phi_label,
                         "gap": res.gap, "se_diff": res.se_diff,
                         "lhs_re": res.lhs_mean.real, "lhs_im": res.lhs_mean.imag,
                         "rhs_re": res.rhs_mean.real, "rhs_im": res.rhs_mean.imag,
                         "ok": res.passes(budget=0.02)})
            ok = ok and rows[-1]["ok"]
    details = {"n_replicas": n_replicas, "n_pairs": len(rows), "rows": rows}
    return _finish(7, "duality_identity", "exponential_pairing", ok, t0, 600.0, details)


# -- criterion 8 ------------------------------------------------------------

def criterion_martingale_orthogonality(seed: int = 42, n_replicas: int = 10_000,
                                       workers: int = 1) -> CriterionResult:
    """Interval martingale z-tests with controls, plus conditional orthogonality."""
    t0 = time.perf_counter()
    spec = builtin_scenarios()["decoupled_classical"]
    grid = Grid1D(-7.0, 7.0, 281)
    tg = TimeGrid.for_spec(spec)
    snaps = list(range(0, tg.n_steps + 1, tg.n_steps // 5))
    samples = replica_pairing(spec, grid, [FrequencyChoice.constant(1.0, spec.horizon, "one")],
                              [tf.gaussian_bump()], n_replicas, n_particles=8,
                              seed=seed, time_grid=tg, snap_indices=snaps,
                              workers=workers)
    z_pairing = martingale_test(samples.path_samples, samples.snap_times).max_abs_z
    z_mass = martingale_test(samples.mass_path_samples.astype(complex),
                             samples.snap_times).max_abs_z
    biased = samples.mass_path_samples + 0.1 * samples.snap_times[None, :]
    z_biased = martingale_test(biased.astype(complex), samples.snap_times).max_abs_z

    spec_cb = builtin_scenarios()["correlated_bounded"]
    fr_obs = FrequencyChoice.piecewise([[1.0, -1.0], [2.0, 0.0]], spec_cb.horizon, "obs")
    orth = orthogonality_test(spec_cb, lambda t, x, y: spec_cb.coeffs.eval_h2(t, x, y),
                              fr_obs, n_replicas, seed=seed, workers=workers)

    ok = (z_pairing <= 3.0 and z_mass <= 3.0 and z_biased >= 5.0 and orth.passed)
    details = {"z_theta_pairing": float(z_pairing), "z_mass": float(z_mass),
               "z_injected_drift": float(z_biased),
               "orthogonality_estimate_re": orth.estimate.real,
               "orthogonality_estimate_im": orth.estimate.imag,
               "orthogonality_se_re": orth.se_re, "orthogonality_se_im": orth.se_im,
               "orthogonality_ok": orth.passed}
    return _finish(8, "martingale_and_orthogonality", "conditional_martingales", ok,
                   t0, 300.0, details)


# -- criterion 9 ------------------------------------------------------------

def criterion_uniqueness_probe(seed: int = 42, n_replicas: int = 2000,
                               workers: int = 1) -> CriterionResult:
    """Particle and grid constructions share their exponential characteristics."""
    t0 = time.perf_counter()
    spec = builtin_scenarios()["decoupled_classical"]
    grid = Grid1D(-6.5, 6.5, 261)       # explicit forward stepping stays stable
    rows = uniqueness_probe(spec, acceptance_phis(),
                            standard_frequency_probes(1, spec.horizon),
                            n_replicas=n_replicas, grid=grid, n_particles=16,
                            seed=seed, budget=0.02, workers=workers)
    ok = all(r.passed for r in rows)
    details = {"n_replicas": n_replicas,
               "rows": [{"freq": r.freq_label, "phi": r.phi_label, "diff": r.diff,
                         "se_diff": r.se_diff, "tolerance": r.tolerance,
                         "ok": r.passed} for r in rows]}
    return _finish(9, "uniqueness_probe", "two_solver_characteristics", ok, t0,
                   600.0, details)


# -- criterion 10 -----------------------------------------------------------

def criterion_reproducibility(seed: int = 42) -> CriterionResult:
    """Byte-identical summaries across repeated runs and worker counts {1, 4}.

    Runs the acceptance pipeline (criterion 1 subset) end to end through the
    harness three times into scratch directories and compares summary bytes.
    """
    import tempfile
    from pathlib import Path

    from .cli import main as cli_main

    t0 = time.perf_counter()
    digests = []
    for workers in (1, 1, 4):
        with tempfile.TemporaryDirectory() as tmp:
            code = cli_main(["accept", "--seed", str(seed), "--out", tmp,
                             "--workers", str(workers), "--criteria", "1",
                             "--quiet"])
            data = (Path(tmp) / "summary.json").read_bytes()
            digests.append((code, data))
    ok = (all(code == 0 for code, _ in digests)
          and digests[0][1] == digests[1][1] == digests[2][1])
    details = {"runs": len(digests),
               "bytes": len(digests[0][1]),
               "identical_repeat": digests[0][1] == digests[1][1],
               "identical_workers": digests[0][1] == digests[2][1]}
    return _finish(10, "reproducibility", "deterministic_summaries", ok, t0,
                   300.0, details)


ALL_CRITERIA: dict[int, Callable] = {
    1: criterion_penrose,
    2: criterion_degenerate_collapse,
    3: criterion_kalman_bucy,
    4: criterion_mass_equivalence,
    5: criterion_zakai_residual,
    6: criterion_ito_formula,
    7: criterion_duality,
    8: criterion_martingale_orthogonality,
    9: criterion_uniqueness_probe,
    10: criterion_reproducibility,
}


def run_criteria(numbers: Optional[Sequence[int]] = None, seed: int = 42,
                 workers: int = 1, progress: Optional[Callable] = None
                 ) -> list[CriterionResult]:
    """Run the requested criteria (all by default) in ascending order."""
    numbers = sorted(numbers) if numbers else sorted(ALL_CRITERIA)
    results = []
    for n in numbers:
        fn = ALL_CRITERIA[n]
        kwargs = {"seed": seed}
        if "workers" in fn.__code__.co_varnames[:fn.__code__.co_argcount]:
            kwargs["workers"] = workers
        res = fn(**kwargs)
        results.append(res)
        if progress is not None:
            progress(res)
    return results
