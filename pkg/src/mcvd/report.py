"""Delimited output and run manifests.

CSV is the data contract: header names carry units (µm lengths get a _um
suffix, seconds _s, radians _rad), floats are written with repr so a rerun
with the same seeds reproduces the file byte for byte, and anything that can
legitimately differ between reruns (timestamps, durations, cache hits) goes
to the JSON manifest sidecar instead.
"""

from __future__ import annotations

import dataclasses
import json
import os
import platform
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .link import BerEstimate, LinkConfig
from .metrics import RatioValue
from .sweep import OptimalAperture, SweepResult

# swept-parameter name -> CSV column with unit suffix
UNIT_COLUMNS = {
    "r_a": "r_a_um",
    "d_a": "d_a_um",
    "r_off": "r_off_um",
    "phi_off": "phi_off_rad",
    "theta": "theta_rad",
    "M": "M",
    "t_s": "t_s_s",
}

_BER_COLUMNS = ("ber", "ci_lo", "ci_hi", "errors", "n_bits", "tau")


def format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, RatioValue):
        return "inf" if value.is_infinite else repr(float(value.value))
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, header: list[str], rows: list[dict]) -> Path:
    """Write rows (dicts keyed by header) atomically, LF-terminated."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_value(row.get(col)) for col in header))
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_bytes(("\n".join(lines) + "\n").encode())
    os.replace(tmp, path)
    return path


def _ber_cells(est: BerEstimate | None) -> dict:
    if est is None:
        return dict.fromkeys(_BER_COLUMNS)
    return {"ber": est.ber, "ci_lo": est.ci95[0], "ci_hi": est.ci95[1],
            "errors": est.errors, "n_bits": est.n_bits, "tau": est.tau_used}


def sweep_table(result: SweepResult) -> tuple[list[str], list[dict]]:
    axis_cols = [UNIT_COLUMNS[name] for name, _ in result.spec.axes]
    header = (["role", "status"] + axis_cols + list(_BER_COLUMNS)
              + ["sinar", "sir", "absorbed_fraction", "note"])
    rows = []
    for cell in result.rows:
        row = {"role": cell.role, "status": cell.status, "note": cell.error,
               "sinar": cell.sinar, "sir": cell.sir,
               "absorbed_fraction": cell.absorbed_fraction}
        for name, _ in result.spec.axes:
            row[UNIT_COLUMNS[name]] = cell.params.get(name)
        row.update(_ber_cells(cell.ber))
        rows.append(row)
    return header, rows


def optima_table(groups: list[tuple[float | None, OptimalAperture]],
                 group_axis: str | None) -> tuple[list[str], list[dict]]:
    header = ([UNIT_COLUMNS[group_axis]] if group_axis else []) \
        + ["r_a_star_um", "criterion", "indistinct"]
    rows = []
    for value, opt in groups:
        row = {"r_a_star_um": opt.r_a_star, "criterion": opt.criterion,
               "indistinct": opt.indistinct}
        if group_axis:
            row[UNIT_COLUMNS[group_axis]] = value
        rows.append(row)
    return header, rows


def characterize_table(times, cdf_empirical, cdf_analytic=None,
                       ) -> tuple[list[str], list[dict]]:
    header = ["time_s", "cdf_empirical"]
    if cdf_analytic is not None:
        header.append("cdf_analytic")
    rows = []
    for i, t in enumerate(times):
        row = {"time_s": float(t), "cdf_empirical": float(cdf_empirical[i])}
        if cdf_analytic is not None:
            row["cdf_analytic"] = float(cdf_analytic[i])
        rows.append(row)
    return header, rows


def coefficients_table(resp) -> tuple[list[str], list[dict]]:
    header = ["k", "h_k", "t_s_s", "source"]
    rows = [{"k": k + 1, "h_k": hk, "t_s_s": resp.t_s, "source": resp.source}
            for k, hk in enumerate(resp.h)]
    return header, rows


def ber_table(cfg: LinkConfig, est: BerEstimate) -> tuple[list[str], list[dict]]:
    header = ["M", "t_s_s", "arrival_model"] + list(_BER_COLUMNS) \
        + ["one_sided_ci"]
    row = {"M": cfg.M, "t_s_s": cfg.t_s, "arrival_model": cfg.arrival_model,
           "one_sided_ci": est.one_sided}
    row.update(_ber_cells(est))
    return header, [row]


def metrics_table(report, t_s: float, L: int) -> tuple[list[str], list[dict]]:
    header = ["M", "t_s_s", "memory", "sinar", "sir"]
    return header, [{"M": report.M, "t_s_s": t_s, "memory": L,
                     "sinar": report.sinar, "sir": report.sir}]


def version_string() -> str:
    """Package version, extended git-describe style when a repo is at hand."""
    root = Path(__file__).resolve().parent
    try:
        out = subprocess.run(
            ["git", "-C", str(root), "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _library_versions() -> dict:
    import numpy
    import scipy
    versions = {"python": platform.python_version(),
                "numpy": numpy.__version__, "scipy": scipy.__version__}
    try:
        import numba
        versions["numba"] = numba.__version__
    except ImportError:
        pass
    return versions


@dataclass
class RunManifest:
    """Reproduction sidecar written next to every output file.

    The resolved config plus the recorded seeds are sufficient to regenerate
    the CSVs bit-exactly; timestamps, durations and cache statistics live
    here so the CSVs stay stable across reruns.
    """

    command: str
    config: dict
    seeds: dict
    outputs: list[str] = field(default_factory=list)
    started: str = ""
    finished: str = ""
    runtime_s: float = 0.0
    workers: int = 1
    cache: dict | None = None
    cells: list[dict] | None = None
    version: str = field(default_factory=version_string)
    libraries: dict = field(default_factory=_library_versions)

    @staticmethod
    def timestamp() -> str:
        return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = json.dumps(dataclasses.asdict(self), indent=1,
                             sort_keys=True)
        tmp = path.with_name(path.name + f".tmp{os.getpid()}")
        tmp.write_bytes(payload.encode())
        os.replace(tmp, path)
        return path


def cell_summaries(result: SweepResult) -> list[dict]:
    """Per-cell bookkeeping for the manifest (cache hits, durations)."""
    return [{"params": cell.params, "role": cell.role, "status": cell.status,
             "cache_hit": cell.cache_hit,
             "duration_s": round(cell.duration_s, 3)}
            for cell in result.rows]
