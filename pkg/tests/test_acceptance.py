"""The acceptance gate: every criterion at its stated tolerance.

Each test runs one numbered criterion at full scale and prints its pass/fail
line (use ``pytest -s tests/test_acceptance.py`` to watch them stream).
"""

from filterlab import acceptance

SEED = 42


def _run(fn, **kwargs):
    res = fn(seed=SEED, **kwargs)
    print(res.line)
    assert res.passed, (res.name, res.details)
    return res


def test_criterion_01_penrose_suite():
    res = _run(acceptance.criterion_penrose)
    assert res.details["n_passed"] == res.details["n_matrices"] == 1000
    assert res.details["svd_residual"] <= 1e-9
    assert res.details["minor_residual"] <= 1e-9
    assert res.details["route_gap"] <= 1e-8
    assert res.details["projector_excess"] <= 1e-12


def test_criterion_02_degenerate_collapse():
    res = _run(acceptance.criterion_degenerate_collapse)
    assert res.details["stochastic_term_identically_zero"] is True
    assert all(row["ok"] for row in res.details["comparisons"])
    assert len(res.details["comparisons"]) == 6     # 3 phis x 2 times


def test_criterion_03_kalman_bucy():
    res = _run(acceptance.criterion_kalman_bucy)
    assert res.details["mean_error"] <= 3 * res.details["mean_se"] + 0.05
    assert res.details["var_error"] <= 3 * res.details["var_se"] + 0.05


def test_criterion_04_mass_equivalence():
    res = _run(acceptance.criterion_mass_equivalence)
    assert res.details["normalization_defect"] <= 5e-15
    assert res.details["mass_rel_error_dt1e3"] <= 0.05
    assert 1.5 <= res.details["ratio"] <= 3.0


def test_criterion_05_zakai_weak_form():
    res = _run(acceptance.criterion_zakai_residual)
    ratios = res.details["ratios_4e3_over_1e3"]
    assert len(ratios) == 3
    assert all(1.2 <= r <= 3.0 for r in ratios)
    assert res.details["monotone"]


def test_criterion_06_ito_families():
    res = _run(acceptance.criterion_ito_formula)
    for family in ("static", "separable", "dual"):
        fam = res.details[family]
        assert fam["residual_dt1e3"] <= 0.05
        assert 1.2 <= fam["ratio"] <= 3.0


def test_criterion_07_duality_identity():
    res = _run(acceptance.criterion_duality)
    rows = res.details["rows"]
    assert res.details["n_replicas"] == 10_000
    assert len(rows) >= 15                          # >= 5 frequencies x 3 phis
    assert any(r["freq"] == "zero" for r in rows)   # backward-Kolmogorov case
    for r in rows:
        assert r["gap"] <= 3 * r["se_diff"] + 0.02, r


def test_criterion_08_martingale_and_orthogonality():
    res = _run(acceptance.criterion_martingale_orthogonality)
    assert res.details["z_theta_pairing"] <= 3.0
    assert res.details["z_mass"] <= 3.0
    assert res.details["z_injected_drift"] >= 5.0
    assert res.details["orthogonality_ok"]


def test_criterion_09_uniqueness_probe():
    res = _run(acceptance.criterion_uniqueness_probe)
    rows = res.details["rows"]
    assert len(rows) >= 15
    for r in rows:
        assert r["diff"] <= r["tolerance"], r


def test_criterion_10_reproducibility():
    res = _run(acceptance.criterion_reproducibility)
    assert res.details["identical_repeat"]
    assert res.details["identical_workers"]
