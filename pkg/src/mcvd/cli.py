"""Command line surface.

Runs are described by a JSON config file (schema-validated; see _SCHEMA) and
started through one of the subcommands: characterize, coefficients, ber,
sinar, sweep, cache. Scalar fields can be overridden from the command line
with repeated --set dotted.path=value flags, so a shipped config doubles as
a template. Every output CSV gets a .manifest.json sidecar holding the fully
resolved config, seeds, library versions and timings.

Exit codes: 0 on success, 2 for configuration problems (bad flags, invalid
JSON, schema or domain validation failures), 1 for runtime failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import jsonschema

from . import metrics, report
from .channel import (ChannelCache, F_hit_analytic, analytic_response,
                      cache_key, coefficients_from_cdf)
from .geometry import Topology
from .link import LinkConfig, run_ber
from .report import RunManifest, write_csv
from .sweep import (SweepSpec, _apply_params, crossover_offset, offset_sweep,
                    optimal_aperture, optimal_aperture_by, run_sweep)
from .walker import SimProtocol, simulate_channel

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2

CACHE_ENV = "MCVD_CACHE_DIR"

log = logging.getLogger("mcvd")


class ConfigError(Exception):
    """Anything wrong with flags or the config file; exits with code 2."""


_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_INT = {"type": "integer", "minimum": 1}

_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "topology": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "d": _POS, "r_r": _POS, "D": _POS,
                "r_a": {"oneOf": [{"type": "number", "minimum": 0},
                                  {"type": "null"}]},
                "d_a": _NUM, "r_off": {"type": "number", "minimum": 0},
                "phi_off": _NUM, "theta": _NUM,
            },
        },
        "protocol": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_particles": _INT, "dt": _POS, "t_total": _POS,
                "master_seed": {"type": "integer", "minimum": 0},
            },
        },
        "link": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "M": _INT, "t_s": _POS, "n_bits": _INT,
                "threshold": {"oneOf": [{"type": "integer", "minimum": 0},
                                        {"type": "null"}]},
                "pilot_bits": _INT,
                "arrival_model": {"enum": ["exact", "gaussian"]},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "required": ["axes"],
            "properties": {
                "axes": {
                    "type": "array",
                    "minItems": 1,
                    "maxItems": 2,
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["param", "values"],
                        "properties": {
                            "param": {"enum": ["r_a", "d_a", "r_off",
                                               "phi_off", "theta",
                                               "M", "t_s"]},
                            "values": {"oneOf": [
                                {"type": "array", "items": _NUM,
                                 "minItems": 1},
                                {"type": "object",
                                 "additionalProperties": False,
                                 "required": ["start", "stop", "step"],
                                 "properties": {"start": _NUM, "stop": _NUM,
                                                "step": _POS}},
                            ]},
                        },
                    },
                },
                "include_no_plane": {"type": "boolean"},
                "criterion": {"enum": ["min-BER", "max-SINAR"]},
            },
        },
        "memory": _INT,
        "grid_points": {"type": "integer", "minimum": 2},
        "output": {"type": "string"},
    },
}


def _load_config(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return cfg


def _apply_overrides(cfg: dict, sets: list[str]) -> dict:
    """Apply --set dotted.path=value pairs; values parse as JSON when they
    can, otherwise stay strings."""
    for item in sets:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set {dotted}: {part} is not an object")
        node[parts[-1]] = value
    return cfg


def _validate_config(cfg: dict, source: str) -> None:
    validator = jsonschema.Draft202012Validator(_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.path))
    if errors:
        msgs = []
        for err in errors:
            where = ".".join(str(p) for p in err.absolute_path) or "(root)"
            msgs.append(f"  {where}: {err.message}")
        raise ConfigError(f"{source}: invalid config:\n" + "\n".join(msgs))


def _build_objects(cfg: dict):
    """(topology, protocol, link) with domain validation mapped to exit 2."""
    try:
        topo = Topology(**cfg.get("topology", {}))
        proto = SimProtocol(**cfg.get("protocol", {}))
        link = LinkConfig(**cfg.get("link", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return topo, proto, link


def _expand_values(values) -> tuple[float, ...]:
    if isinstance(values, dict):
        start, stop, step = values["start"], values["stop"], values["step"]
        if stop < start:
            raise ConfigError(f"empty range: start={start} stop={stop}")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        # round so grid values compare clean in tables and group keys
        return tuple(round(start + i * step, 10) for i in range(n))
    return tuple(values)


def _build_sweep_spec(cfg: dict, topo, proto, link) -> SweepSpec:
    section = cfg.get("sweep")
    if section is None:
        raise ConfigError("sweep command needs a \"sweep\" config section")
    axes = tuple((ax["param"], _expand_values(ax["values"]))
                 for ax in section["axes"])
    try:
        return SweepSpec(
            topology=topo, link=link, protocol=proto, axes=axes,
            include_no_plane=section.get("include_no_plane", False),
            criterion=section.get("criterion", "min-BER"),
            output=cfg.get("output"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _resolve_cache_dir(args) -> Path | None:
    if args.cache_dir:
        return Path(args.cache_dir)
    env = os.environ.get(CACHE_ENV)
    return Path(env) if env else None


def _resolve_stem(args, cfg: dict) -> Path:
    stem = args.output or cfg.get("output") or Path(args.config).stem
    return Path(stem)


def _resolved_config(topo, proto, link=None, **extra) -> dict:
    cfg = {"topology": asdict(topo), "protocol": asdict(proto)}
    if link is not None:
        cfg["link"] = asdict(link)
    cfg.update(extra)
    return cfg


def _channel_record(topo, proto, cache_dir, workers):
    if cache_dir is not None:
        return ChannelCache(cache_dir).get_or_simulate(topo, proto, workers)
    return simulate_channel(topo, proto, workers=workers), False


def _response_for(topo, proto, t_s, L, cache_dir, workers):
    """Analytic coefficients when the closed form applies, simulated
    otherwise; (response, cache_hit)."""
    if not topo.plane_enabled:
        return analytic_response(topo, t_s, L, t_total=proto.t_total), False
    rec, hit = _channel_record(topo, proto, cache_dir, workers)
    return coefficients_from_cdf(rec, t_s, L), hit


def _finish(manifest: RunManifest, start: float, outputs: list[Path],
            stem: Path) -> None:
    manifest.outputs = [str(p) for p in outputs]
    manifest.finished = RunManifest.timestamp()
    manifest.runtime_s = round(time.perf_counter() - start, 3)
    path = manifest.write(Path(str(stem) + ".manifest.json"))
    for line in [*outputs, path]:
        print(line)


# ---------------------------------------------------------------------------
# subcommands

def _cmd_characterize(args) -> int:
    cfg = _prepare(args)
    topo, proto, link = _build_objects(cfg)
    stem = _resolve_stem(args, cfg)
    start = time.perf_counter()
    started = RunManifest.timestamp()

    rec, hit = _channel_record(topo, proto, _resolve_cache_dir(args),
                               args.workers)
    grid_points = cfg.get("grid_points", 400)
    import numpy as np
    fine = np.linspace(0.0, proto.t_total, grid_points + 1)[1:]
    mults = np.arange(1, int(proto.t_total / link.t_s + 1e-9) + 1) * link.t_s
    times = np.unique(np.round(np.union1d(fine, mults), 12))
    cdf_emp = rec.empirical_cdf(times)
    cdf_an = None if topo.plane_enabled else F_hit_analytic(times, topo)

    header, rows = report.characterize_table(times, cdf_emp, cdf_an)
    outputs = [write_csv(Path(str(stem) + ".csv"), header, rows)]
    if not args.no_figures:
        from .figures import render_characterize
        outputs.append(render_characterize(times, cdf_emp, cdf_an,
                                           Path(str(stem) + ".png")))
    manifest = RunManifest(
        command="characterize",
        config=_resolved_config(topo, proto, link,
                                grid_points=grid_points, output=str(stem)),
        seeds={"master_seed": proto.master_seed},
        started=started, workers=args.workers,
        cache={"hits": int(hit), "misses": int(not hit)})
    _finish(manifest, start, outputs, stem)
    return EXIT_OK


def _cmd_coefficients(args) -> int:
    cfg = _prepare(args)
    topo, proto, link = _build_objects(cfg)
    stem = _resolve_stem(args, cfg)
    start = time.perf_counter()
    started = RunManifest.timestamp()

    L = cfg.get("memory")
    resp, hit = _response_for(topo, proto, link.t_s, L,
                              _resolve_cache_dir(args), args.workers)
    header, rows = report.coefficients_table(resp)
    outputs = [write_csv(Path(str(stem) + ".csv"), header, rows)]
    if not args.no_figures:
        from .figures import render_coefficients
        outputs.append(render_coefficients(resp, Path(str(stem) + ".png")))
    manifest = RunManifest(
        command="coefficients",
        config=_resolved_config(topo, proto, link, memory=resp.L,
                                output=str(stem)),
        seeds={"master_seed": proto.master_seed},
        started=started, workers=args.workers,
        cache={"hits": int(hit), "misses": int(not hit)})
    _finish(manifest, start, outputs, stem)
    return EXIT_OK


def _cmd_ber(args) -> int:
    cfg = _prepare(args)
    topo, proto, link = _build_objects(cfg)
    stem = _resolve_stem(args, cfg)
    start = time.perf_counter()
    started = RunManifest.timestamp()

    L = cfg.get("memory")
    resp, hit = _response_for(topo, proto, link.t_s, L,
                              _resolve_cache_dir(args), args.workers)
    est = run_ber(link, resp, workers=args.workers)
    header, rows = report.ber_table(link, est)
    outputs = [write_csv(Path(str(stem) + ".csv"), header, rows)]
    manifest = RunManifest(
        command="ber",
        config=_resolved_config(topo, proto, link, memory=resp.L,
                                output=str(stem)),
        seeds={"master_seed": proto.master_seed, "link_seed": link.seed},
        started=started, workers=args.workers,
        cache={"hits": int(hit), "misses": int(not hit)})
    _finish(manifest, start, outputs, stem)
    return EXIT_OK


def _cmd_sinar(args) -> int:
    cfg = _prepare(args)
    topo, proto, link = _build_objects(cfg)
    stem = _resolve_stem(args, cfg)
    start = time.perf_counter()
    started = RunManifest.timestamp()

    L = cfg.get("memory")
    resp, hit = _response_for(topo, proto, link.t_s, L,
                              _resolve_cache_dir(args), args.workers)
    rep = metrics.metric_report(link.M, resp)
    header, rows = report.metrics_table(rep, link.t_s, resp.L)
    outputs = [write_csv(Path(str(stem) + ".csv"), header, rows)]
    manifest = RunManifest(
        command="sinar",
        config=_resolved_config(topo, proto, link, memory=resp.L,
                                output=str(stem)),
        seeds={"master_seed": proto.master_seed},
        started=started, workers=args.workers,
        cache={"hits": int(hit), "misses": int(not hit)})
    _finish(manifest, start, outputs, stem)
    return EXIT_OK


def _dry_run_sweep(spec: SweepSpec, cache_dir, stem: Path) -> int:
    """Validate every cell and forecast cache reuse without simulating."""
    cache = ChannelCache(cache_dir) if cache_dir is not None else None
    import itertools
    names = [name for name, _ in spec.axes]
    grids = [values for _, values in spec.axes]
    combos = [dict(zip(names, c)) for c in itertools.product(*grids)]
    # offset sweeps get the benchmark row whether or not the config asks
    if spec.include_no_plane or set(names) <= {"r_off", "theta"}:
        combos.insert(0, {})
    ok = skipped = hits = 0
    for params in combos:
        try:
            topo, _ = _apply_params(spec.topology, spec.link, params)
            if not params:
                topo = dataclasses.replace(topo, r_a=None)
        except (ValueError, KeyError):
            skipped += 1
            continue
        ok += 1
        if cache is not None \
                and cache.record_path(cache_key(topo, spec.protocol)).exists():
            hits += 1
    plan = {"cells": len(combos), "valid": ok, "skipped": skipped,
            "cache_hits_forecast": hits,
            "to_simulate": ok - hits,
            "outputs": [str(stem) + ".csv",
                        str(stem) + ".manifest.json"]}
    print(json.dumps(plan, indent=1))
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = _prepare(args)
    topo, proto, link = _build_objects(cfg)
    spec = _build_sweep_spec(cfg, topo, proto, link)
    stem = _resolve_stem(args, cfg)
    cache_dir = _resolve_cache_dir(args)
    if args.dry_run:
        return _dry_run_sweep(spec, cache_dir, stem)

    start = time.perf_counter()
    started = RunManifest.timestamp()
    axis_names = {name for name, _ in spec.axes}
    if axis_names <= {"r_off", "theta"}:
        result = offset_sweep(spec, cache_dir=cache_dir, workers=args.workers)
    else:
        result = run_sweep(spec, cache_dir=cache_dir, workers=args.workers)

    header, rows = report.sweep_table(result)
    outputs = [write_csv(Path(str(stem) + ".csv"), header, rows)]

    # grid-resolution optimum table whenever an r_a axis has enough points
    groups = None
    group_axis = None
    if "r_a" in axis_names and len(spec.axis_values("r_a")) >= 3:
        if len(spec.axes) == 1:
            groups = [(None, optimal_aperture(result))]
        else:
            group_axis = next(n for n in axis_names if n != "r_a")
            groups = optimal_aperture_by(result, group_axis)
        if groups:
            oh, orows = report.optima_table(groups, group_axis)
            outputs.append(write_csv(Path(str(stem) + "_optima.csv"),
                                     oh, orows))

    extra = {}
    bench = result.benchmark()
    if bench is not None and bench.status == "ok" \
            and axis_names <= {"r_off", "theta"}:
        axis = spec.axes[0][0]
        extra["crossover"] = {"axis": axis,
                              "value": crossover_offset(result, axis)}

    if not args.no_figures:
        from . import figures
        if len(spec.axes) == 1:
            outputs.append(figures.render_sweep_curve(
                result, Path(str(stem) + ".png")))
        else:
            outputs.extend(figures.render_sweep_heatmaps(result, stem))
        if groups and group_axis:
            outputs.append(figures.render_optima(
                groups, group_axis, Path(str(stem) + "_optima.png")))

    hits = sum(1 for c in result.rows if c.cache_hit)
    misses = sum(1 for c in result.rows
                 if c.status == "ok" and not c.cache_hit)
    manifest = RunManifest(
        command="sweep",
        config=_resolved_config(
            topo, proto, link, output=str(stem),
            sweep={"axes": [{"param": n, "values": list(v)}
                            for n, v in spec.axes],
                   "include_no_plane": spec.include_no_plane,
                   "criterion": spec.criterion}, **extra),
        seeds={"master_seed": proto.master_seed, "link_seed": link.seed},
        started=started, workers=args.workers,
        cache={"hits": hits, "misses": misses},
        cells=report.cell_summaries(result))
    _finish(manifest, start, outputs, stem)
    return EXIT_OK


def _parse_where(pairs: list[str]) -> list[tuple[str, object]]:
    out = []
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"--where needs name=value, got {item!r}")
        name, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        out.append((name, value))
    return out


def _entry_matches(entry: dict, clauses: list[tuple[str, object]]) -> bool:
    fields = {}
    fields.update(entry.get("protocol") or {})
    fields.update(entry.get("topology") or {})
    for name, value in clauses:
        if name not in fields:
            return False
        have = fields[name]
        if isinstance(have, float) and isinstance(value, (int, float)):
            if not math.isclose(have, float(value), rel_tol=1e-12,
                                abs_tol=1e-12):
                return False
        elif have != value:
            return False
    return True


def _cmd_cache(args) -> int:
    cache_dir = _resolve_cache_dir(args)
    if cache_dir is None:
        raise ConfigError(
            f"cache commands need --cache-dir or ${CACHE_ENV}")
    if not cache_dir.is_dir():
        raise ConfigError(f"cache directory {cache_dir} does not exist")
    cache = ChannelCache(cache_dir)

    if args.cache_cmd == "list":
        entries = cache.entries()
        for e in entries:
            topo = e.get("topology") or {}
            proto = e.get("protocol") or {}
            plane = "none" if topo.get("r_a") is None else \
                f"r_a={topo.get('r_a')},d_a={topo.get('d_a')}"
            print(f"{e['key']}  particles={proto.get('n_particles')} "
                  f"dt={proto.get('dt')} t_total={proto.get('t_total')} "
                  f"seed={proto.get('master_seed')} plane={plane} "
                  f"size={e['size_bytes']}")
        print(f"{len(entries)} entries")
        return EXIT_OK

    if args.cache_cmd == "verify":
        bad = cache.verify()
        for path, reason in bad:
            print(f"FAIL {path}: {reason}", file=sys.stderr)
        n = len(cache.keys())
        if bad:
            print(f"{len(bad)} of {n} entries failed verification",
                  file=sys.stderr)
            return EXIT_RUNTIME
        print(f"ok ({n} entries)")
        return EXIT_OK

    # purge
    if not (args.all or args.key or args.where):
        raise ConfigError("purge needs --all, --key, or --where")
    if args.all:
        keys = cache.keys()
    else:
        keys = list(args.key or [])
        if args.where:
            clauses = _parse_where(args.where)
            keys += [e["key"] for e in cache.entries()
                     if _entry_matches(e, clauses)]
    removed = cache.purge(sorted(set(keys)))
    print(f"removed {removed} entries")
    return EXIT_OK


# ---------------------------------------------------------------------------
# wiring

def _prepare(args) -> dict:
    cfg = _load_config(args.config)
    cfg = _apply_overrides(cfg, args.set or [])
    _validate_config(cfg, args.config)
    return cfg


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", help="JSON config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config field (dotted path, JSON value)")
    p.add_argument("--output", help="output stem (overrides config)")
    p.add_argument("--workers", type=int, default=1,
                   help="worker threads (results are identical for any N)")
    p.add_argument("--cache-dir",
                   help=f"channel cache directory (or ${CACHE_ENV})")
    p.add_argument("--no-figures", action="store_true",
                   help="skip figure rendering, write CSVs only")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcvd",
        description="Diffusive molecular communication through an apertured "
                    "reflecting plane: channel characterization, BER "
                    "experiments, and signal-quality metrics.")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="info-level logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("characterize",
                       help="simulate hit times, tabulate the absorption CDF")
    _add_run_options(p)
    p.set_defaults(func=_cmd_characterize)

    p = sub.add_parser("coefficients",
                       help="per-slot arrival probabilities h_k")
    _add_run_options(p)
    p.set_defaults(func=_cmd_coefficients)

    p = sub.add_parser("ber", help="bit error rate for one configuration")
    _add_run_options(p)
    p.set_defaults(func=_cmd_ber)

    p = sub.add_parser("sinar", help="signal quality metrics (SINAR, SIR)")
    _add_run_options(p)
    p.set_defaults(func=_cmd_sinar)

    p = sub.add_parser("sweep", help="parameter grid experiment")
    _add_run_options(p)
    p.add_argument("--dry-run", action="store_true",
                   help="validate the grid and forecast cache hits; "
                        "run nothing")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("cache", help="inspect or maintain the channel cache")
    p.add_argument("--cache-dir",
                   help=f"channel cache directory (or ${CACHE_ENV})")
    csub = p.add_subparsers(dest="cache_cmd", required=True)
    csub.add_parser("list", help="list stored records")
    csub.add_parser("verify", help="re-check records against their digests")
    pp = csub.add_parser("purge", help="delete records")
    pp.add_argument("--all", action="store_true", help="delete everything")
    pp.add_argument("--key", action="append", help="delete by key")
    pp.add_argument("--where", action="append", metavar="NAME=VALUE",
                    help="delete entries whose stored parameters match")
    p.set_defaults(func=_cmd_cache)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:
        log.debug("unhandled failure", exc_info=True)
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
