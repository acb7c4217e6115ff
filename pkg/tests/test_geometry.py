import math

import numpy as np
import pytest

from mcvd.geometry import (Absorbed, Free, Point3, Reflected, Segment,
                           Topology, in_aperture, plane_crossing,
                           reflect_step, resolve_step, sphere_hit,
                           topology_bytes, topology_digest)


def plane_topo(**kw) -> Topology:
    base = dict(r_a=2.0, d_a=3.0)
    base.update(kw)
    return Topology(**base)


class TestTopologyValidation:
    def test_defaults_are_the_benchmark_geometry(self):
        topo = Topology()
        assert topo.d == 5.0 and topo.r_r == 5.0 and topo.D == 79.4
        assert topo.r_0 == 10.0
        assert not topo.plane_enabled

    def test_plane_requires_position_between_tx_and_rx(self):
        with pytest.raises(ValueError):
            plane_topo(d_a=0.0)
        with pytest.raises(ValueError):
            plane_topo(d_a=5.0)
        with pytest.raises(ValueError):
            plane_topo(d_a=-1.0)

    def test_negative_radii_rejected(self):
        with pytest.raises(ValueError):
            Topology(r_r=-1.0)
        with pytest.raises(ValueError):
            plane_topo(r_a=-0.5)
        with pytest.raises(ValueError):
            plane_topo(r_off=-0.1)

    def test_tilt_ceiling_keeps_rx_clear_of_the_plane(self):
        # upright plane at d_a=3 clears the sphere by 2 um; tilting far
        # enough swings the plane into the receiver body
        plane_topo(theta=0.2)
        with pytest.raises(ValueError):
            plane_topo(theta=1.2)

    def test_tx_must_stay_on_the_near_side(self):
        with pytest.raises(ValueError):
            plane_topo(theta=math.pi)  # flipped normal points at Tx

    def test_plane_params_ignored_without_aperture(self):
        # r_a=None disables the plane block entirely
        topo = Topology(r_a=None, d_a=0.0)
        assert not topo.plane_enabled


class TestHashes:
    def test_digest_stable_and_sensitive(self):
        a = plane_topo()
        assert topology_digest(a) == topology_digest(plane_topo())
        assert topology_digest(a) != topology_digest(plane_topo(r_a=2.2))

    def test_noplane_digest_ignores_plane_fields(self):
        assert topology_bytes(Topology()) == topology_bytes(
            Topology(r_a=None, d_a=0.0, r_off=0.0))

    def test_plane_flag_disambiguates_zeroed_fields(self):
        # an enabled plane with r_a=0 must not collide with no plane at all
        assert topology_digest(plane_topo(r_a=0.0)) != \
            topology_digest(Topology())


class TestPlaneGeometry:
    def test_aperture_center_and_normal_upright(self):
        topo = plane_topo()
        assert topo.aperture_center() == (0.0, 0.0, 3.0)
        assert topo.plane_normal() == pytest.approx((0.0, 0.0, 1.0))

    def test_offset_center(self):
        topo = plane_topo(r_off=1.5, phi_off=math.pi / 2)
        cx, cy, cz = topo.aperture_center()
        assert (cx, cy, cz) == pytest.approx((0.0, 1.5, 3.0))

    def test_tilted_normal_unit_length(self):
        topo = plane_topo(theta=0.5, phi_off=1.1)
        n = np.array(topo.plane_normal())
        assert np.linalg.norm(n) == pytest.approx(1.0, abs=1e-12)

    def test_crossing_detects_sign_change(self):
        topo = plane_topo()
        seg = Segment(Point3(0, 0, 2.5), Point3(0, 0, 3.5))
        crossing = plane_crossing(seg, topo)
        assert crossing is not None
        s, point = crossing
        assert s == pytest.approx(0.5)
        assert point.z == pytest.approx(3.0)

    def test_no_crossing_same_side(self):
        topo = plane_topo()
        assert plane_crossing(
            Segment(Point3(0, 0, 1.0), Point3(1, 1, 2.0)), topo) is None

    def test_aperture_membership_is_strict(self):
        topo = plane_topo()
        assert in_aperture(Point3(1.9, 0, 3.0), topo)
        assert not in_aperture(Point3(2.0, 0, 3.0), topo)  # rim blocks
        assert not in_aperture(Point3(2.1, 0, 3.0), topo)

    def test_zero_aperture_admits_nothing(self):
        topo = plane_topo(r_a=0.0)
        assert not in_aperture(Point3(0, 0, 3.0), topo)


class TestStepResolution:
    def test_pass_through_aperture_is_free(self):
        topo = plane_topo()
        out = reflect_step(
            Segment(Point3(0.5, 0, 2.0), Point3(0.5, 0, 4.0)), topo)
        assert isinstance(out, Free)
        assert out.point == Point3(0.5, 0, 4.0)

    def test_blocked_crossing_reflects(self):
        topo = plane_topo()
        out = reflect_step(
            Segment(Point3(4.0, 0, 2.0), Point3(4.0, 0, 4.0)), topo)
        assert isinstance(out, Reflected)
        # mirror of z=4 across z=3
        assert out.point.as_tuple() == pytest.approx((4.0, 0.0, 2.0))

    def test_reflection_is_an_involution(self):
        # mirroring the mirrored endpoint restores the original
        topo = plane_topo(theta=0.3, phi_off=0.7)
        n = np.array(topo.plane_normal())
        c = np.array(topo.aperture_center())
        rng = np.random.default_rng(5)
        for _ in range(50):
            p = rng.normal(0, 4, size=3)
            g = float(np.dot(p - c, n))
            mirrored = p - 2 * g * n
            back = mirrored - 2 * float(np.dot(mirrored - c, n)) * n
            assert np.allclose(back, p, atol=1e-12)

    def test_reflected_point_is_on_the_start_side(self):
        topo = plane_topo(theta=0.4)
        n = np.array(topo.plane_normal())
        c = np.array(topo.aperture_center())
        rng = np.random.default_rng(9)
        for _ in range(200):
            start = rng.normal(0, 3, size=3)
            end = rng.normal(0, 3, size=3)
            seg = Segment(Point3(*start), Point3(*end))
            out = reflect_step(seg, topo)
            if isinstance(out, Reflected):
                g_start = np.dot(start - c, n)
                g_out = np.dot(np.array(out.point.as_tuple()) - c, n)
                assert g_start * g_out >= 0

    def test_absorption_inclusive_boundary(self):
        topo = Topology()
        assert sphere_hit(Point3(0, 0, 5.0), topo)   # exactly on surface
        assert sphere_hit(Point3(0, 0, 7.0), topo)
        assert not sphere_hit(Point3(0, 0, 4.999999), topo)

    def test_resolve_orders_plane_before_sphere(self):
        # a step toward the sphere but blocked by the plane body reflects
        # back instead of being absorbed at its virtual endpoint
        topo = plane_topo(r_a=0.5)
        # free endpoint (3, 0, 8) would sit inside the sphere
        seg = Segment(Point3(3.0, 0, 2.9), Point3(3.0, 0, 8.0))
        out = resolve_step(seg, topo)
        assert isinstance(out, Reflected)
        assert not isinstance(out, Absorbed)

    def test_resolve_absorbs_through_aperture(self):
        topo = plane_topo()
        seg = Segment(Point3(0, 0, 2.5), Point3(0, 0, 5.2))
        out = resolve_step(seg, topo)
        assert isinstance(out, Absorbed)

    def test_point_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            Point3(math.nan, 0, 0)
