"""Deterministic report emission.

summary.json is the machine-readable verdict file: canonical key order,
floats at 17 significant digits, no wall-clock content, so identical inputs
produce identical bytes. Timings go to a separate timings.txt that is outside
the determinism contract. CSV schemas are fixed per command.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def fmt(x) -> str:
    """17-significant-digit float formatting used in every report file."""
    return format(float(x), ".17g")


def _canonical(obj, out):
    if obj is None:
        out.append("null")
    elif isinstance(obj, (bool, np.bool_)):
        out.append("true" if obj else "false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(fmt(obj))
    elif isinstance(obj, str):
        out.append('"' + obj.replace("\\", "\\\\").replace('"', '\\"') + '"')
    elif isinstance(obj, (list, tuple, np.ndarray)):
        out.append("[")
        items = list(obj)
        for i, it in enumerate(items):
            if i:
                out.append(",")
            _canonical(it, out)
        out.append("]")
    elif isinstance(obj, dict):
        out.append("{")
        for i, key in enumerate(sorted(obj)):
            if i:
                out.append(",")
            _canonical(str(key), out)
            out.append(":")
            _canonical(obj[key], out)
        out.append("}")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def dump_canonical_json(obj) -> str:
    out = []
    _canonical(obj, out)
    return "".join(out)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


@dataclass
class RunReport:
    """Everything a command run produced, ready for emission."""

    command: str
    version: str
    config: dict
    checks: list = field(default_factory=list)    # {name, property, passed, stats}
    files: list = field(default_factory=list)     # {name, sha256}
    timings: dict = field(default_factory=dict)   # seconds per stage

    def add_check(self, name: str, property_id: str, passed: bool, stats: dict):
        self.checks.append({"name": name, "property": property_id,
                            "passed": bool(passed), "stats": stats})

    def register_file(self, path):
        path = Path(path)
        self.files.append({"name": path.name, "sha256": sha256_file(path)})

    @property
    def all_passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def summary_dict(self) -> dict:
        cfg_json = dump_canonical_json(self.config)
        return {
            "command": self.command,
            "version": self.version,
            "config": self.config,
            "config_hash": hashlib.sha256(cfg_json.encode()).hexdigest(),
            "checks": self.checks,
            "files": sorted(self.files, key=lambda f: f["name"]),
            "all_passed": self.all_passed,
        }


def write_report(report: RunReport, out_dir) -> list[str]:
    """Write summary.json (deterministic) and timings.txt; return the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = out_dir / "summary.json"
    summary.write_text(dump_canonical_json(report.summary_dict()) + "\n")
    timings = out_dir / "timings.txt"
    with open(timings, "w") as fh:
        fh.write("# wall-clock seconds; excluded from the determinism contract\n")
        for name, secs in report.timings.items():
            fh.write(f"{name}\t{secs:.3f}\n")
    return [f["name"] for f in report.files] + [summary.name, timings.name]


# ---------------------------------------------------------------------------
# fixed CSV schemas
# ---------------------------------------------------------------------------

def write_filter_csv(run, phis, path) -> str:
    """Per-time filter report: t, pi_mass, j_mass, ess, est_<phi>..."""
    from .filters import mass_process
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    j = mass_process(run)
    names = [f"est_{phi.name}" for phi in phis]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "pi_mass", "j_mass", "ess"] + names)
        for i, t in enumerate(run.grid.times):
            row = [fmt(t), fmt(run.mass[i]), fmt(j[i]), fmt(run.ess[i])]
            row += [fmt(run.estimate(phi, i)) for phi in phis]
            writer.writerow(row)
    return str(path)


def write_duality_csv(rows, path) -> str:
    """Pairing report: r_label, phi_label, lhs/rhs parts, gap, SEs, verdict."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["r_label", "phi_label", "lhs_re", "lhs_im", "rhs_re",
                         "rhs_im", "gap", "se_lhs", "se_rhs", "verdict"])
        for r in rows:
            writer.writerow([
                r.freq_label, r.phi_label,
                fmt(r.lhs_mean.real), fmt(r.lhs_mean.imag),
                fmt(r.rhs_mean.real), fmt(r.rhs_mean.imag),
                fmt(r.gap), fmt(r.se_lhs), fmt(r.se_rhs),
                "pass" if r.passes(budget=0.02) else "fail",
            ])
    return str(path)


def write_probe_csv(rows, path) -> str:
    """Two-solver agreement table."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["r_label", "phi_label", "particle_re", "particle_im",
                         "grid_re", "grid_im", "diff", "se_diff", "tolerance",
                         "verdict"])
        for r in rows:
            writer.writerow([
                r.freq_label, r.phi_label,
                fmt(r.particle_mean.real), fmt(r.particle_mean.imag),
                fmt(r.grid_mean.real), fmt(r.grid_mean.imag),
                fmt(r.diff), fmt(r.se_diff), fmt(r.tolerance),
                "pass" if r.passed else "fail",
            ])
    return str(path)
