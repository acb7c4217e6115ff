"""Particle-based Monte Carlo random walk and its hit-time record.

The walk follows the discrete recursion X(t + dt) = X(t) + dX with dX drawn
per axis from N(0, 2*D*dt). Each proposed step is resolved against the plane
first (specular reflection off the plane body, free passage through the
aperture), then tested against the absorbing sphere; absorbed molecules are
retired and their absorption time recorded as the end of the current step.
There is no spatial kill boundary: survivors wander the full horizon.
"""

from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from hashlib import blake2b
from typing import NamedTuple

import numpy as np

from . import _engine
from .geometry import Point3, Topology, topology_digest

_HASH_SCHEMA = 1


@dataclass(frozen=True)
class SimProtocol:
    """The Monte Carlo contract: scale, resolution, horizon, seed."""

    n_particles: int = 100_000
    dt: float = 1e-4       # time step (s)
    t_total: float = 10.0  # simulation horizon (s)
    master_seed: int = 1

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError(f"n_particles must be >= 1, got {self.n_particles}")
        if not (0 < self.dt < self.t_total):
            raise ValueError(
                f"need 0 < dt < t_total, got dt={self.dt}, t_total={self.t_total}")
        if not 0 <= self.master_seed < 2 ** 64:
            raise ValueError("master_seed must fit in 64 bits")

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.t_total / self.dt + 1e-9))


def protocol_bytes(proto: SimProtocol) -> bytes:
    """Canonical bit-exact serialization for hashing."""
    return struct.pack("<Bq2dQ", _HASH_SCHEMA, proto.n_particles,
                       proto.dt, proto.t_total, proto.master_seed)


def protocol_digest(proto: SimProtocol) -> str:
    return blake2b(protocol_bytes(proto), digest_size=16).hexdigest()


@dataclass(frozen=True)
class HitTimeRecord:
    """Sorted per-particle absorption times for one (topology, protocol) run."""

    times: np.ndarray      # sorted absorption times (s), one per absorbed particle
    n_emitted: int
    protocol: SimProtocol
    topo_digest: str

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        times.setflags(write=False)
        object.__setattr__(self, "times", times)
        if times.ndim != 1:
            raise ValueError("times must be one-dimensional")
        if times.size > self.n_emitted:
            raise ValueError("more absorption times than emitted particles")
        if times.size:
            if np.any(np.diff(times) < 0):
                raise ValueError("times must be non-decreasing")
            if times[0] <= 0 or times[-1] > self.protocol.t_total:
                raise ValueError("times must lie in (0, t_total]")

    @property
    def absorbed_fraction(self) -> float:
        return self.times.size / self.n_emitted

    def empirical_cdf(self, t) -> np.ndarray:
        """Fraction of emitted molecules absorbed by time t (vectorized)."""
        t = np.asarray(t, dtype=np.float64)
        return np.searchsorted(self.times, t, side="right") / self.n_emitted

    def to_npz(self, path) -> None:
        # explicit handle: savez would append ".npz" to temp-file names
        with open(path, "wb") as fh:
            np.savez_compressed(
                fh, times=self.times, n_emitted=self.n_emitted,
                n_particles=self.protocol.n_particles, dt=self.protocol.dt,
                t_total=self.protocol.t_total,
                master_seed=np.uint64(self.protocol.master_seed),
                topo_digest=np.bytes_(self.topo_digest.encode()))

    @classmethod
    def from_npz(cls, path) -> "HitTimeRecord":
        with np.load(path) as data:
            proto = SimProtocol(
                n_particles=int(data["n_particles"]), dt=float(data["dt"]),
                t_total=float(data["t_total"]),
                master_seed=int(data["master_seed"]))
            return cls(times=data["times"], n_emitted=int(data["n_emitted"]),
                       protocol=proto,
                       topo_digest=bytes(data["topo_digest"]).decode())


def step_particle(pos: Point3, dt: float, rng: np.random.Generator,
                  D: float) -> Point3:
    """One free diffusion step: each axis moves by a draw from N(0, 2*D*dt)."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    dx, dy, dz = rng.normal(0.0, math.sqrt(2.0 * D * dt), size=3)
    return Point3(pos.x + dx, pos.y + dy, pos.z + dz)


def simulate_channel(topo: Topology, proto: SimProtocol,
                     workers: int = 1) -> HitTimeRecord:
    """Walk all particles and collect their absorption times.

    Particles are dispatched in fixed-size blocks; per-particle streams make
    the output bit-identical for any worker count. Worker threads share no
    mutable state and the merge is a global sort of per-block hit lists.
    """
    digest = topology_digest(topo)
    blocks = [(lo, min(lo + _engine.BLOCK, proto.n_particles))
              for lo in range(0, proto.n_particles, _engine.BLOCK)]

    def job(span):
        return _engine.run_block(topo, proto, span[0], span[1])

    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, blocks))
    else:
        parts = [job(b) for b in blocks]
    steps = np.concatenate(parts) if parts else np.empty(0, np.int64)
    times = np.sort(np.minimum(steps * proto.dt, proto.t_total))
    return HitTimeRecord(times=times, n_emitted=proto.n_particles,
                         protocol=proto, topo_digest=digest)


class SurvivalSummary(NamedTuple):
    absorbed_fraction: float
    mean_hit_time: float | None    # None when nothing was absorbed
    median_hit_time: float | None


def survival_summary(rec: HitTimeRecord) -> SurvivalSummary:
    """Descriptive statistics over the recorded absorption times."""
    if rec.times.size == 0:
        return SurvivalSummary(0.0, None, None)
    return SurvivalSummary(rec.absorbed_fraction,
                           float(np.mean(rec.times)),
                           float(np.median(rec.times)))
