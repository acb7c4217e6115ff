"""Topology definition and exact step geometry for the apertured-plane channel.

Coordinate frame: the point transmitter sits at the origin, the absorbing
receiver sphere is centered on the +z axis at (0, 0, r_0) with r_0 = d + r_r,
and the reflecting plane nominally lies at z = d_a. With this frame the plane
test reduces to a single signed-distance sign check in the common untilted
case. All lengths are um, angles rad, diffusion coefficient um^2/s.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from hashlib import blake2b

# Endpoints closer to the plane than this are classified by their direction
# of motion instead of their (numerically meaningless) signed distance.
PLANE_EPS = 1e-12

_HASH_SCHEMA = 1  # bump if the canonical serialization layout changes


@dataclass(frozen=True)
class Point3:
    x: float
    y: float
    z: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)
                and math.isfinite(self.z)):
            raise ValueError(f"non-finite coordinates: {self}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z)


@dataclass(frozen=True)
class Segment:
    start: Point3
    end: Point3


@dataclass(frozen=True)
class Free:
    """Step finished unobstructed (possibly through the aperture)."""
    point: Point3


@dataclass(frozen=True)
class Reflected:
    """Step bounced off the plane body; point is the mirrored endpoint."""
    point: Point3


@dataclass(frozen=True)
class Absorbed:
    """Step ended on or inside the receiver sphere."""
    point: Point3


StepOutcome = Free | Reflected | Absorbed


@dataclass(frozen=True)
class Topology:
    """Full geometric description of one transmitter/receiver/plane layout.

    r_a is the aperture radius; None disables the plane entirely (the
    unobstructed point-to-sphere benchmark topology). d_a, r_off, phi_off and
    theta are only meaningful while the plane is enabled.
    """

    d: float = 5.0         # closest Tx-to-receiver-surface distance (um)
    r_r: float = 5.0       # receiver sphere radius (um)
    r_a: float | None = None  # aperture radius (um); None = no plane
    d_a: float = 0.0       # Tx-to-plane distance along the Tx-Rx axis (um)
    r_off: float = 0.0     # radial offset of the aperture center (um)
    phi_off: float = 0.0   # azimuth of the radial offset (rad)
    theta: float = 0.0     # plane tilt away from the normal orientation (rad)
    D: float = 79.4        # diffusion coefficient (um^2/s)

    def __post_init__(self):
        for name in ("d", "r_r", "D"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v}")
        if self.r_a is None:
            return
        if not (math.isfinite(self.r_a) and self.r_a >= 0):
            raise ValueError(f"r_a must be >= 0, got {self.r_a}")
        if not (math.isfinite(self.r_off) and self.r_off >= 0):
            raise ValueError(f"r_off must be >= 0, got {self.r_off}")
        if not (0 < self.d_a < self.d):
            raise ValueError(
                f"plane must sit strictly between transmitter and receiver "
                f"surface: need 0 < d_a < d, got d_a={self.d_a}, d={self.d}")
        if not math.isfinite(self.theta) or not math.isfinite(self.phi_off):
            raise ValueError("theta and phi_off must be finite")
        # The receiver sphere must clear the tilted plane on the far side ...
        nx, ny, nz = self.plane_normal()
        cx, cy, cz = self.aperture_center()
        clearance = nz * (self.r_0 - cz) - nx * cx - ny * cy
        if clearance <= self.r_r:
            raise ValueError(
                f"plane intersects the receiver sphere: clearance "
                f"{clearance:.6g} um <= r_r {self.r_r:.6g} um "
                f"(d_a={self.d_a}, theta={self.theta}, r_off={self.r_off})")
        # ... and the transmitter must sit strictly on the near side.
        if -(nx * cx + ny * cy + nz * cz) >= 0:
            raise ValueError(
                f"transmitter is not strictly on the near side of the plane "
                f"(d_a={self.d_a}, theta={self.theta}, r_off={self.r_off})")

    @property
    def r_0(self) -> float:
        """Transmitter-to-receiver-center distance."""
        return self.d + self.r_r

    @property
    def plane_enabled(self) -> bool:
        return self.r_a is not None

    def receiver_center(self) -> tuple[float, float, float]:
        return (0.0, 0.0, self.r_0)

    def aperture_center(self) -> tuple[float, float, float]:
        return (self.r_off * math.cos(self.phi_off),
                self.r_off * math.sin(self.phi_off),
                self.d_a)

    def plane_normal(self) -> tuple[float, float, float]:
        """Unit normal, pointing from the transmitter side to the receiver side.

        The tilt rotates the plane about the in-plane axis through derived
        aperture center perpendicular to the offset direction, so the normal
        leans along the offset azimuth.
        """
        st, ct = math.sin(self.theta), math.cos(self.theta)
        return (st * math.cos(self.phi_off), st * math.sin(self.phi_off), ct)


def plane_crossing(seg: Segment, topo: Topology) -> tuple[float, Point3] | None:
    """First crossing of the segment through the plane, as (s, point).

    s is the unit-interval parameter of the crossing along the segment.
    Returns None when both endpoints lie on the same side. Endpoints lying
    numerically on the plane are classified by the sign of the segment's
    normal motion component (zero-thickness rule), so degenerate in-plane
    segments never cross.
    """
    if not topo.plane_enabled:
        return None
    nx, ny, nz = topo.plane_normal()
    cx, cy, cz = topo.aperture_center()
    a, b = seg.start, seg.end
    g0 = nx * (a.x - cx) + ny * (a.y - cy) + nz * (a.z - cz)
    g1 = nx * (b.x - cx) + ny * (b.y - cy) + nz * (b.z - cz)
    dg = g1 - g0
    side0 = g0 if abs(g0) >= PLANE_EPS else dg
    side1 = g1 if abs(g1) >= PLANE_EPS else dg
    if side0 == 0.0 or side1 == 0.0 or (side0 > 0) == (side1 > 0):
        return None
    s = g0 / (g0 - g1)
    s = min(max(s, 0.0), 1.0)
    point = Point3(a.x + s * (b.x - a.x),
                   a.y + s * (b.y - a.y),
                   a.z + s * (b.z - a.z))
    return s, point


def in_aperture(point: Point3, topo: Topology) -> bool:
    """True iff a point on the plane is strictly inside the aperture disc."""
    if not topo.plane_enabled:
        return False
    cx, cy, cz = topo.aperture_center()
    dx, dy, dz = point.x - cx, point.y - cy, point.z - cz
    return math.sqrt(dx * dx + dy * dy + dz * dz) < topo.r_a


def reflect_step(seg: Segment, topo: Topology) -> StepOutcome:
    """Resolve one proposed step against the plane.

    Crossing through the aperture passes unchanged; crossing through the
    plane body mirrors the endpoint specularly (the normal component of the
    overshoot beyond the crossing point is negated). After one reflection the
    mirrored endpoint is back on the start side, so a single plane never
    needs iterating.
    """
    crossing = plane_crossing(seg, topo)
    if crossing is None:
        return Free(seg.end)
    _, point = crossing
    if in_aperture(point, topo):
        return Free(seg.end)
    nx, ny, nz = topo.plane_normal()
    cx, cy, cz = topo.aperture_center()
    b = seg.end
    g1 = nx * (b.x - cx) + ny * (b.y - cy) + nz * (b.z - cz)
    return Reflected(Point3(b.x - 2.0 * g1 * nx,
                            b.y - 2.0 * g1 * ny,
                            b.z - 2.0 * g1 * nz))


def sphere_hit(point: Point3, topo: Topology) -> bool:
    """True iff the point lies on or inside the receiver sphere."""
    dz = point.z - topo.r_0
    return math.sqrt(point.x ** 2 + point.y ** 2 + dz * dz) <= topo.r_r


def resolve_step(seg: Segment, topo: Topology) -> StepOutcome:
    """Full per-step outcome: plane resolution first, then the sphere test.

    The ordering matters only in the thin shell where a step could both
    reflect and be absorbed; a molecule bounced off the plane is never
    absorbed at its pre-reflection virtual position.
    """
    outcome = reflect_step(seg, topo)
    if sphere_hit(outcome.point, topo):
        return Absorbed(outcome.point)
    return outcome


def topology_bytes(topo: Topology) -> bytes:
    """Canonical bit-exact serialization, the basis of every topology hash."""
    return struct.pack(
        "<BB8d", _HASH_SCHEMA, 1 if topo.plane_enabled else 0,
        topo.d, topo.r_r, topo.D,
        topo.d_a if topo.plane_enabled else 0.0,
        topo.r_a if topo.plane_enabled else 0.0,
        topo.r_off if topo.plane_enabled else 0.0,
        topo.phi_off if topo.plane_enabled else 0.0,
        topo.theta if topo.plane_enabled else 0.0)


def topology_digest(topo: Topology) -> str:
    """128-bit content hash of the topology."""
    return blake2b(topology_bytes(topo), digest_size=16).hexdigest()
