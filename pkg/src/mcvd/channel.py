"""Arrival statistics: analytic no-plane formulas, channel coefficients, cache.

For the unobstructed point-to-sphere topology the single-molecule arrival
process has a closed form: the first-passage density

    f_hit(t) = (r_r/r_0) * (1/sqrt(4*pi*D*t)) * ((r_0-r_r)/t)
               * exp(-(r_0-r_r)^2 / (4*D*t))

and its integral

    F_hit(t) = (r_r/r_0) * erfc((r_0-r_r) / sqrt(4*D*t)).

No closed form exists once the plane is present; those topologies go through
the particle simulation, keyed into a content-addressed cache so each
(topology, protocol) pair is only ever walked once.
"""

from __future__ import annotations

import json
import logging
import math
import os
import tempfile
import time
from dataclasses import dataclass, asdict
from hashlib import blake2b, sha256
from pathlib import Path

import numpy as np
from scipy.special import erfc

from .geometry import Topology, topology_bytes, topology_digest
from .walker import HitTimeRecord, SimProtocol, protocol_bytes, simulate_channel

log = logging.getLogger(__name__)

_L_EPS = 1e-9  # guards floor() against binary representation of t_total/t_s


def _require_no_plane(topo: Topology, what: str) -> None:
    if topo.plane_enabled:
        raise ValueError(
            f"{what} is only defined for the no-plane topology; "
            f"simulate the apertured channel instead")


def f_hit_analytic(t, topo: Topology):
    """Arrival time density (1/s) for the no-plane topology. Vectorized."""
    _require_no_plane(topo, "the analytic arrival density")
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        raise ValueError("t must be >= 0")
    gap = topo.r_0 - topo.r_r
    with np.errstate(divide="ignore", invalid="ignore"):
        dens = (topo.r_r / topo.r_0) / np.sqrt(4.0 * np.pi * topo.D * t) \
            * (gap / t) * np.exp(-gap * gap / (4.0 * topo.D * t))
    dens = np.where(t > 0, dens, 0.0)
    return float(dens) if dens.ndim == 0 else dens


def F_hit_analytic(t, topo: Topology):
    """Probability that one molecule has arrived by time t. Vectorized."""
    _require_no_plane(topo, "the analytic arrival probability")
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        raise ValueError("t must be >= 0")
    gap = topo.r_0 - topo.r_r
    with np.errstate(divide="ignore"):
        arg = np.where(t > 0, gap / np.sqrt(4.0 * topo.D * t), np.inf)
    prob = (topo.r_r / topo.r_0) * erfc(arg)
    return float(prob) if prob.ndim == 0 else prob


@dataclass(frozen=True)
class ChannelResponse:
    """Per-slot arrival probabilities h_1..h_L for a symbol duration t_s."""

    t_s: float
    L: int
    h: tuple[float, ...]
    source: str                    # "analytic" or "simulated"
    topo_digest: str | None = None
    n_particles: int | None = None

    def __post_init__(self):
        if self.L < 1 or len(self.h) != self.L:
            raise ValueError(f"need L >= 1 coefficients, got L={self.L}, "
                             f"len(h)={len(self.h)}")
        if self.t_s <= 0:
            raise ValueError(f"t_s must be positive, got {self.t_s}")
        if any(hk < 0 or hk > 1 for hk in self.h):
            raise ValueError("coefficients must lie in [0, 1]")
        if sum(self.h) > 1 + 1e-12:
            raise ValueError("coefficients must sum to at most 1")

    def digest(self) -> str:
        payload = json.dumps(
            [self.t_s, self.L, list(self.h), self.source, self.topo_digest],
            separators=(",", ":")).encode()
        return blake2b(payload, digest_size=16).hexdigest()

    def truncated(self, L: int) -> "ChannelResponse":
        """The same response with memory cut to the first L slots."""
        if not 1 <= L <= self.L:
            raise ValueError(f"L must be in [1, {self.L}], got {L}")
        return ChannelResponse(self.t_s, L, self.h[:L], self.source,
                               self.topo_digest, self.n_particles)


def default_memory(t_s: float, t_total: float) -> int:
    """Channel memory covering the whole horizon: floor(t_total / t_s)."""
    L = int(math.floor(t_total / t_s + _L_EPS))
    if L < 1:
        raise ValueError(f"t_s={t_s} exceeds the horizon t_total={t_total}")
    return L


def coefficients_from_cdf(F, t_s: float, L: int | None = None,
                          ) -> ChannelResponse:
    """Slot coefficients h_k = F(k*t_s) - F((k-1)*t_s) for k = 1..L.

    F is either a callable cumulative arrival probability or a HitTimeRecord
    (whose empirical CDF is hits-by-t divided by emitted count). For records,
    L defaults to the full-horizon memory and L*t_s must not exceed the
    simulated horizon; extrapolation is refused.
    """
    if t_s <= 0:
        raise ValueError(f"t_s must be positive, got {t_s}")
    if isinstance(F, HitTimeRecord):
        rec = F
        horizon = rec.protocol.t_total
        if L is None:
            L = default_memory(t_s, horizon)
        if L * t_s > horizon * (1 + _L_EPS):
            raise ValueError(
                f"L*t_s = {L * t_s:.6g}s exceeds the simulated horizon "
                f"{horizon:.6g}s; no extrapolation")
        edges = np.arange(L + 1) * t_s
        counts = np.searchsorted(rec.times, edges, side="right")
        h = tuple(float(v) for v in np.diff(counts) / rec.n_emitted)
        return ChannelResponse(t_s, L, h, "simulated",
                               topo_digest=rec.topo_digest,
                               n_particles=rec.n_emitted)
    if L is None:
        raise ValueError("L is required when F is a callable")
    edges = [k * t_s for k in range(L + 1)]
    values = [float(F(t)) for t in edges]
    h = tuple(values[k + 1] - values[k] for k in range(L))
    return ChannelResponse(t_s, L, h, "analytic")


def analytic_response(topo: Topology, t_s: float, L: int | None = None,
                      t_total: float = 10.0) -> ChannelResponse:
    """Coefficients of the closed-form no-plane CDF."""
    if L is None:
        L = default_memory(t_s, t_total)
    resp = coefficients_from_cdf(lambda t: F_hit_analytic(t, topo), t_s, L)
    return ChannelResponse(resp.t_s, resp.L, resp.h, "analytic",
                           topo_digest=topology_digest(topo))


def cache_key(topo: Topology, proto: SimProtocol) -> str:
    """128-bit content address over the bit-exact (topology, protocol) pair."""
    return blake2b(topology_bytes(topo) + protocol_bytes(proto),
                   digest_size=16).hexdigest()


def _atomic_write(path: Path, payload: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


class ChannelCache:
    """Content-addressed store of hit-time records.

    Layout: records/<key>.npz holds the record, meta/<key>.json the
    human-readable parameters plus a sha256 of the record file, and
    manifest.json is a derived key -> parameters view regenerated after every
    write (per-entry meta files are the source of truth, so concurrent
    writers converge). All writes go through rename-into-place; readers never
    observe partial files.
    """

    def __init__(self, root):
        self.root = Path(root)
        self.records = self.root / "records"
        self.meta = self.root / "meta"

    def _ensure_dirs(self):
        self.records.mkdir(parents=True, exist_ok=True)
        self.meta.mkdir(parents=True, exist_ok=True)

    def record_path(self, key: str) -> Path:
        return self.records / f"{key}.npz"

    def meta_path(self, key: str) -> Path:
        return self.meta / f"{key}.json"

    def load(self, key: str) -> HitTimeRecord | None:
        """The stored record, or None on miss or corruption (with warning)."""
        path = self.record_path(key)
        if not path.exists():
            return None
        try:
            rec = HitTimeRecord.from_npz(path)
        except Exception as exc:
            log.warning("cache entry %s is corrupt (%s); recomputing", key, exc)
            return None
        meta = self._read_meta(key)
        if meta is not None and meta.get("sha256") != _file_sha256(path):
            log.warning("cache entry %s fails its digest; recomputing", key)
            return None
        return rec

    def store(self, key: str, rec: HitTimeRecord, topo: Topology) -> None:
        self._ensure_dirs()
        path = self.record_path(key)
        tmp = path.with_name(path.name + f".tmp{os.getpid()}")
        rec.to_npz(tmp)
        os.replace(tmp, path)
        meta = {
            "key": key,
            "topology": asdict(topo),
            "protocol": asdict(rec.protocol),
            "n_absorbed": int(rec.times.size),
            "sha256": _file_sha256(path),
            "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        }
        _atomic_write(self.meta_path(key),
                      json.dumps(meta, indent=1).encode())
        self.rebuild_manifest()

    def _read_meta(self, key: str) -> dict | None:
        path = self.meta_path(key)
        if not path.exists():
            return None
        try:
            return json.loads(path.read_text())
        except (OSError, json.JSONDecodeError):
            return None

    def keys(self) -> list[str]:
        if not self.records.is_dir():
            return []
        return sorted(p.stem for p in self.records.glob("*.npz"))

    def entries(self) -> list[dict]:
        """One dict per stored record, from the per-entry meta files."""
        out = []
        for key in self.keys():
            meta = self._read_meta(key) or {"key": key}
            meta["size_bytes"] = self.record_path(key).stat().st_size
            out.append(meta)
        return out

    def rebuild_manifest(self) -> Path:
        """Regenerate the derived manifest.json listing every entry."""
        self._ensure_dirs()
        listing = {e["key"]: {k: v for k, v in e.items() if k != "key"}
                   for e in self.entries()}
        path = self.root / "manifest.json"
        _atomic_write(path, json.dumps(listing, indent=1).encode())
        return path

    def verify(self) -> list[tuple[str, str]]:
        """Re-check every record against its stored digest.

        Returns (path, reason) pairs for the entries that fail.
        """
        bad = []
        for key in self.keys():
            path = self.record_path(key)
            meta = self._read_meta(key)
            if meta is None:
                bad.append((str(path), "missing or unreadable meta entry"))
                continue
            if meta.get("sha256") != _file_sha256(path):
                bad.append((str(path), "sha256 mismatch"))
                continue
            try:
                HitTimeRecord.from_npz(path)
            except Exception as exc:
                bad.append((str(path), f"unreadable record: {exc}"))
        return bad

    def purge(self, keys) -> int:
        """Remove the given entries; returns how many records were deleted."""
        n = 0
        for key in keys:
            rec = self.record_path(key)
            if rec.exists():
                rec.unlink()
                n += 1
            meta = self.meta_path(key)
            if meta.exists():
                meta.unlink()
        self.rebuild_manifest()
        return n

    def get_or_simulate(self, topo: Topology, proto: SimProtocol,
                        workers: int = 1) -> tuple[HitTimeRecord, bool]:
        """(record, cache_hit); simulates and persists on miss."""
        key = cache_key(topo, proto)
        rec = self.load(key)
        if rec is not None:
            return rec, True
        rec = simulate_channel(topo, proto, workers=workers)
        self.store(key, rec, topo)
        return rec, False


def get_or_simulate(topo: Topology, proto: SimProtocol, cache_dir,
                    workers: int = 1) -> HitTimeRecord:
    """Cached channel characterization for one (topology, protocol) pair."""
    rec, _ = ChannelCache(cache_dir).get_or_simulate(topo, proto, workers)
    return rec


def simulated_response(topo: Topology, proto: SimProtocol, t_s: float,
                       L: int | None = None, cache_dir=None,
                       workers: int = 1) -> ChannelResponse:
    """Coefficients from a (cached) particle simulation of the topology."""
    if cache_dir is not None:
        rec = get_or_simulate(topo, proto, cache_dir, workers)
    else:
        rec = simulate_channel(topo, proto, workers=workers)
    return coefficients_from_cdf(rec, t_s, L)


def _file_sha256(path: Path) -> str:
    h = sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
