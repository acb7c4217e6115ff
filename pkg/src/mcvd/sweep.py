"""Experiment orchestration: parameter grids, optima, offset studies.

A sweep takes a base (topology, link, protocol) triple and re-runs the full
chain per grid cell: characterize the channel (cache-aware), derive the slot
coefficients, optimize the decision threshold, estimate BER, and evaluate
the analytic quality metrics. Cells are independent; rows always come back
in deterministic grid order regardless of worker count. Geometrically
invalid cells (a tilt grid may legitimately contain some near its ceiling)
are recorded as skipped rows rather than aborting the sweep.
"""

from __future__ import annotations

import dataclasses
import itertools
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from . import metrics
from .channel import ChannelCache, coefficients_from_cdf, default_memory
from .geometry import Topology
from .link import BerEstimate, LinkConfig, run_ber
from .metrics import RatioValue
from .walker import SimProtocol, simulate_channel

TOPOLOGY_PARAMS = ("r_a", "d_a", "r_off", "phi_off", "theta")
LINK_PARAMS = ("M", "t_s")

_CRITERIA = ("min-BER", "max-SINAR")


@dataclass(frozen=True)
class SweepSpec:
    topology: Topology
    link: LinkConfig            # link.n_bits is the per-cell stream length
    protocol: SimProtocol
    axes: tuple[tuple[str, tuple[float, ...]], ...]
    include_no_plane: bool = False  # prepend the unobstructed benchmark row
    criterion: str = "min-BER"
    output: str | None = None

    def __post_init__(self):
        if not 1 <= len(self.axes) <= 2:
            raise ValueError("a sweep needs 1 or 2 axes")
        names = [name for name, _ in self.axes]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate sweep axes: {names}")
        for name, values in self.axes:
            if name not in TOPOLOGY_PARAMS + LINK_PARAMS:
                raise ValueError(f"unknown sweep parameter {name!r}")
            if len(values) == 0:
                raise ValueError(f"axis {name!r} has no values")
        if self.criterion not in _CRITERIA:
            raise ValueError(f"criterion must be one of {_CRITERIA}")

    def axis_values(self, name: str) -> tuple[float, ...]:
        for axis, values in self.axes:
            if axis == name:
                return values
        raise KeyError(f"sweep has no {name!r} axis")


@dataclass(frozen=True)
class CellResult:
    params: dict
    role: str                  # "cell" or "benchmark"
    status: str                # "ok" or "skipped"
    error: str | None = None
    ber: BerEstimate | None = None
    sinar: RatioValue | None = None
    sir: RatioValue | None = None
    absorbed_fraction: float | None = None
    cache_hit: bool = False
    duration_s: float = 0.0


@dataclass(frozen=True)
class SweepResult:
    spec: SweepSpec
    rows: tuple[CellResult, ...]

    def ok_cells(self) -> list[CellResult]:
        return [r for r in self.rows if r.role == "cell" and r.status == "ok"]

    def benchmark(self) -> CellResult | None:
        for r in self.rows:
            if r.role == "benchmark":
                return r
        return None


def _apply_params(topo: Topology, link: LinkConfig, params: dict,
                  ) -> tuple[Topology, LinkConfig]:
    topo_kw = {k: v for k, v in params.items() if k in TOPOLOGY_PARAMS}
    link_kw = {k: v for k, v in params.items() if k in LINK_PARAMS}
    if "M" in link_kw:
        link_kw["M"] = int(link_kw["M"])
    if topo_kw:
        topo = dataclasses.replace(topo, **topo_kw)
    if link_kw:
        link = dataclasses.replace(link, **link_kw)
    return topo, link


def _evaluate_cell(spec: SweepSpec, params: dict, role: str,
                   cache: ChannelCache | None, workers: int) -> CellResult:
    start = time.perf_counter()
    try:
        topo, link = _apply_params(spec.topology, spec.link, params)
        if role == "benchmark":
            topo = dataclasses.replace(topo, r_a=None)
        L = default_memory(link.t_s, spec.protocol.t_total)
    except (ValueError, KeyError) as exc:
        return CellResult(params=params, role=role, status="skipped",
                          error=str(exc),
                          duration_s=time.perf_counter() - start)
    if cache is not None:
        rec, hit = cache.get_or_simulate(topo, spec.protocol, workers=workers)
    else:
        rec, hit = simulate_channel(topo, spec.protocol, workers=workers), False
    h = coefficients_from_cdf(rec, link.t_s, L)
    ber = run_ber(link, h)
    return CellResult(params=params, role=role, status="ok", ber=ber,
                      sinar=metrics.sinar(link.M, h), sir=metrics.sir(h),
                      absorbed_fraction=rec.absorbed_fraction, cache_hit=hit,
                      duration_s=time.perf_counter() - start)


def run_sweep(spec: SweepSpec, cache_dir=None, workers: int = 1) -> SweepResult:
    """Evaluate every grid cell (and the optional no-plane benchmark row)."""
    cache = ChannelCache(cache_dir) if cache_dir is not None else None
    jobs: list[tuple[dict, str]] = []
    if spec.include_no_plane:
        jobs.append(({}, "benchmark"))
    names = [name for name, _ in spec.axes]
    grids = [values for _, values in spec.axes]
    for combo in itertools.product(*grids):
        jobs.append((dict(zip(names, combo)), "cell"))

    def job(item):
        params, role = item
        return _evaluate_cell(spec, params, role, cache, workers=1)

    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = tuple(pool.map(job, jobs))
    else:
        rows = tuple(job(j) for j in jobs)
    return SweepResult(spec=spec, rows=rows)


@dataclass(frozen=True)
class OptimalAperture:
    r_a_star: float
    criterion: str
    indistinct: bool   # the curve is flat within its confidence intervals


def _ber_optimum(cells: list[CellResult], axis: str) -> OptimalAperture:
    best = None
    best_val = None
    for cell in sorted(cells, key=lambda c: c.params[axis]):
        if best_val is None or cell.ber.ber < best_val:
            best, best_val = cell, cell.ber.ber
    lows = [c.ber.ci95[0] for c in cells]
    highs = [c.ber.ci95[1] for c in cells]
    indistinct = max(lows) <= min(highs)  # one flat line fits inside every CI
    return OptimalAperture(best.params[axis], "min-BER", indistinct)


def _sinar_optimum(cells: list[CellResult], axis: str) -> OptimalAperture:
    best = None
    best_key = None
    values = []
    for cell in sorted(cells, key=lambda c: c.params[axis]):
        key = cell.sinar.sort_key()
        values.append(cell.sinar)
        if best_key is None or key > best_key:
            best, best_key = cell, key
    finite = [v.value for v in values if not v.is_infinite]
    spread = max(finite) - min(finite) if finite else 0.0
    scale = max(abs(v) for v in finite) if finite else 0.0
    indistinct = not any(v.is_infinite for v in values) \
        and spread <= 1e-9 * max(scale, 1e-300)
    return OptimalAperture(best.params[axis], "max-SINAR", indistinct)


def optimal_aperture(result, criterion: str | None = None,
                     cache_dir=None, workers: int = 1, axis: str = "r_a",
                     ) -> OptimalAperture:
    """Grid-resolution optimum of the swept aperture radius.

    Accepts a finished SweepResult or a SweepSpec (which is then run).
    min-BER takes the grid argmin with ties to the smaller radius; max-SINAR
    the argmax. A flat-within-CI curve keeps its answer but raises the
    indistinct flag.
    """
    if isinstance(result, SweepSpec):
        result = run_sweep(result, cache_dir=cache_dir, workers=workers)
    criterion = criterion or result.spec.criterion
    if criterion not in _CRITERIA:
        raise ValueError(f"criterion must be one of {_CRITERIA}")
    cells = [c for c in result.ok_cells() if axis in c.params]
    if len(cells) < 3:
        raise ValueError(f"need at least 3 valid {axis} grid points, "
                         f"got {len(cells)}")
    if criterion == "min-BER":
        return _ber_optimum(cells, axis)
    return _sinar_optimum(cells, axis)


def optimal_aperture_by(result: SweepResult, group_axis: str,
                        criterion: str | None = None, axis: str = "r_a",
                        ) -> list[tuple[float, OptimalAperture]]:
    """Per-slice optima of a 2-D sweep, e.g. r_a*(d_a) from a placement grid."""
    criterion = criterion or result.spec.criterion
    groups: dict[float, list[CellResult]] = {}
    for cell in result.ok_cells():
        groups.setdefault(cell.params[group_axis], []).append(cell)
    out = []
    for value in sorted(groups):
        cells = groups[value]
        if len(cells) < 3:
            continue
        opt = _ber_optimum(cells, axis) if criterion == "min-BER" \
            else _sinar_optimum(cells, axis)
        out.append((value, opt))
    return out


def offset_sweep(spec: SweepSpec, cache_dir=None, workers: int = 1,
                 ) -> SweepResult:
    """Misalignment study over r_off or theta, with the no-plane benchmark."""
    names = {name for name, _ in spec.axes}
    if not names <= {"r_off", "theta"}:
        raise ValueError(
            f"offset sweeps accept only r_off and theta axes, got {names}")
    if not spec.include_no_plane:
        spec = dataclasses.replace(spec, include_no_plane=True)
    return run_sweep(spec, cache_dir=cache_dir, workers=workers)


def crossover_offset(result: SweepResult, axis: str = "r_off") -> float | None:
    """Smallest offset whose BER exceeds the no-plane benchmark, if any."""
    bench = result.benchmark()
    if bench is None or bench.status != "ok":
        raise ValueError("crossover needs an ok benchmark row")
    for cell in sorted(result.ok_cells(), key=lambda c: c.params[axis]):
        if cell.ber.ber > bench.ber.ber:
            return cell.params[axis]
    return None
