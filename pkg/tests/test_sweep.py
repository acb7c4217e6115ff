import numpy as np
import pytest

from mcvd import metrics
from mcvd.channel import ChannelCache, coefficients_from_cdf
from mcvd.geometry import Topology
from mcvd.link import BerEstimate, LinkConfig, run_ber
from mcvd.metrics import RatioValue
from mcvd.sweep import (CellResult, SweepResult, SweepSpec, crossover_offset,
                        offset_sweep, optimal_aperture, optimal_aperture_by,
                        run_sweep)
from mcvd.walker import SimProtocol

TOPO = Topology(r_a=2.0, d_a=3.0)
PROTO = SimProtocol(n_particles=900, dt=1e-3, t_total=0.5, master_seed=3)
LINK = LinkConfig(M=60, t_s=0.1, n_bits=6000, pilot_bits=3000, seed=5)


def make_spec(axes, **kw):
    return SweepSpec(topology=TOPO, link=LINK, protocol=PROTO, axes=axes,
                     **kw)


def synth_cell(ber, ci, r_a, sinar_v=1.0, extra=None, role="cell"):
    n = 10_000
    est = BerEstimate(errors=int(round(ber * n)), n_bits=n, ber=ber, ci95=ci,
                      tau_used=3)
    params = {} if r_a is None else {"r_a": r_a}
    if extra:
        params.update(extra)
    sv = sinar_v if isinstance(sinar_v, RatioValue) else RatioValue(sinar_v)
    return CellResult(params=params, role=role, status="ok", ber=est,
                      sinar=sv, sir=RatioValue(2.0), absorbed_fraction=0.4)


def synth_result(cells, axes):
    return SweepResult(spec=make_spec(axes), rows=tuple(cells))


class TestSpecValidation:
    def test_axis_count_bounds(self):
        with pytest.raises(ValueError):
            make_spec(())
        with pytest.raises(ValueError):
            make_spec((("r_a", (1.0,)), ("d_a", (1.0,)), ("M", (10,))))

    def test_unknown_and_duplicate_params(self):
        with pytest.raises(ValueError):
            make_spec((("radius", (1.0,)),))
        with pytest.raises(ValueError):
            make_spec((("r_a", (1.0,)), ("r_a", (2.0,))))

    def test_empty_axis(self):
        with pytest.raises(ValueError):
            make_spec((("r_a", ()),))

    def test_criterion_checked(self):
        with pytest.raises(ValueError):
            make_spec((("r_a", (1.0, 2.0)),), criterion="fastest")

    def test_axis_values_lookup(self):
        spec = make_spec((("r_a", (1.0, 2.0)),))
        assert spec.axis_values("r_a") == (1.0, 2.0)
        with pytest.raises(KeyError):
            spec.axis_values("d_a")


class TestRunSweep:
    def test_single_cell_equals_direct_chain(self, tmp_path):
        # a degenerate one-cell grid is exactly the library chain by hand
        spec = make_spec((("r_a", (2.0,)),))
        res = run_sweep(spec, cache_dir=tmp_path)
        cell = res.rows[0]

        rec, hit = ChannelCache(tmp_path).get_or_simulate(TOPO, PROTO)
        assert hit  # same record the sweep stored
        h = coefficients_from_cdf(rec, LINK.t_s, 5)
        direct = run_ber(LINK, h)
        assert cell.ber.ber == direct.ber
        assert cell.ber.tau_used == direct.tau_used
        assert cell.sinar.value == metrics.sinar(LINK.M, h).value
        assert cell.absorbed_fraction == rec.absorbed_fraction

    def test_invalid_cells_skip_not_abort(self, tmp_path):
        spec = make_spec((("d_a", (3.0, 6.0)),))
        res = run_sweep(spec, cache_dir=tmp_path)
        status = [r.status for r in res.rows]
        assert status == ["ok", "skipped"]
        assert "d_a" in res.rows[1].error
        assert res.rows[1].ber is None

    def test_benchmark_row_prepended(self, tmp_path):
        spec = make_spec((("r_a", (2.0,)),), include_no_plane=True)
        res = run_sweep(spec, cache_dir=tmp_path)
        assert [r.role for r in res.rows] == ["benchmark", "cell"]
        assert res.benchmark().params == {}

    def test_worker_count_invariant(self, tmp_path):
        spec = make_spec((("r_a", (1.5, 2.5, 3.5)),))
        a = run_sweep(spec, cache_dir=tmp_path, workers=1)
        b = run_sweep(spec, cache_dir=tmp_path, workers=3)
        assert [r.ber.errors for r in a.rows] == \
            [r.ber.errors for r in b.rows]
        assert [r.params for r in a.rows] == [r.params for r in b.rows]

    def test_m_axis_reuses_one_channel_record(self, tmp_path):
        spec = make_spec((("M", (20, 40, 80)),))
        res = run_sweep(spec, cache_dir=tmp_path)
        assert ChannelCache(tmp_path).keys(), "expected a cached record"
        assert len(ChannelCache(tmp_path).keys()) == 1
        hits = [r.cache_hit for r in res.rows]
        assert hits == [False, True, True]


class TestOptimalAperture:
    def test_needs_three_points(self):
        res = synth_result(
            [synth_cell(0.1, (0.05, 0.15), 1.0),
             synth_cell(0.2, (0.15, 0.25), 2.0)],
            (("r_a", (1.0, 2.0)),))
        with pytest.raises(ValueError):
            optimal_aperture(res)

    def test_argmin_with_tie_to_smaller_radius(self):
        cells = [synth_cell(0.30, (0.28, 0.32), 1.0),
                 synth_cell(0.10, (0.08, 0.12), 2.0),
                 synth_cell(0.10, (0.08, 0.12), 3.0),
                 synth_cell(0.20, (0.18, 0.22), 4.0)]
        res = synth_result(cells, (("r_a", (1.0, 2.0, 3.0, 4.0)),))
        opt = optimal_aperture(res)
        assert opt.r_a_star == 2.0
        assert opt.criterion == "min-BER"
        assert not opt.indistinct

    def test_flat_curve_flagged_indistinct(self):
        cells = [synth_cell(0.10, (0.05, 0.15), r) for r in (1.0, 2.0, 3.0)]
        res = synth_result(cells, (("r_a", (1.0, 2.0, 3.0)),))
        assert optimal_aperture(res).indistinct

    def test_sinar_criterion_argmax(self):
        cells = [synth_cell(0.1, (0.05, 0.15), 1.0, sinar_v=1.0),
                 synth_cell(0.1, (0.05, 0.15), 2.0, sinar_v=3.0),
                 synth_cell(0.1, (0.05, 0.15), 3.0, sinar_v=2.0)]
        res = synth_result(cells, (("r_a", (1.0, 2.0, 3.0)),))
        opt = optimal_aperture(res, criterion="max-SINAR")
        assert opt.r_a_star == 2.0
        assert opt.criterion == "max-SINAR"

    def test_infinite_sinar_wins(self):
        inf = RatioValue(float("inf"), True)
        cells = [synth_cell(0.1, (0.05, 0.15), 1.0, sinar_v=5.0),
                 synth_cell(0.1, (0.05, 0.15), 2.0, sinar_v=inf),
                 synth_cell(0.1, (0.05, 0.15), 3.0, sinar_v=1.0)]
        res = synth_result(cells, (("r_a", (1.0, 2.0, 3.0)),))
        assert optimal_aperture(res, criterion="max-SINAR").r_a_star == 2.0

    def test_grouped_optima(self):
        cells = []
        for d_a, best in ((1.0, 2.0), (2.0, 3.0)):
            for r_a in (1.0, 2.0, 3.0):
                ber = 0.05 if r_a == best else 0.2
                cells.append(synth_cell(ber, (ber - 0.01, ber + 0.01), r_a,
                                        extra={"d_a": d_a}))
        res = synth_result(cells, (("d_a", (1.0, 2.0)),
                                   ("r_a", (1.0, 2.0, 3.0)),))
        groups = optimal_aperture_by(res, "d_a")
        assert [(v, o.r_a_star) for v, o in groups] == \
            [(1.0, 2.0), (2.0, 3.0)]


class TestOffsets:
    def test_axis_restriction(self):
        spec = make_spec((("r_a", (1.0, 2.0, 3.0)),))
        with pytest.raises(ValueError):
            offset_sweep(spec)

    def test_forces_benchmark(self, tmp_path):
        spec = make_spec((("r_off", (0.0, 0.6)),))
        res = offset_sweep(spec, cache_dir=tmp_path)
        assert res.benchmark() is not None

    def test_crossover_first_exceedance(self):
        bench = synth_cell(0.010, (0.009, 0.011), None, role="benchmark")
        cells = [bench,
                 synth_cell(0.004, (0.003, 0.005), None,
                            extra={"r_off": 0.5}),
                 synth_cell(0.012, (0.011, 0.013), None,
                            extra={"r_off": 1.0}),
                 synth_cell(0.030, (0.028, 0.032), None,
                            extra={"r_off": 1.5})]
        res = synth_result(cells, (("r_off", (0.5, 1.0, 1.5)),))
        assert crossover_offset(res) == 1.0

    def test_crossover_none_when_always_better(self):
        bench = synth_cell(0.050, (0.045, 0.055), None, role="benchmark")
        cells = [bench,
                 synth_cell(0.004, (0.003, 0.005), None,
                            extra={"r_off": 0.5}),
                 synth_cell(0.012, (0.011, 0.013), None,
                            extra={"r_off": 1.0})]
        res = synth_result(cells, (("r_off", (0.5, 1.0)),))
        assert crossover_offset(res) is None

    def test_crossover_requires_benchmark(self):
        res = synth_result(
            [synth_cell(0.01, (0.009, 0.011), None, extra={"r_off": 0.5})],
            (("r_off", (0.5,)),))
        with pytest.raises(ValueError):
            crossover_offset(res)


def test_zero_radius_cell_never_wins_sinar(tmp_path):
    # r_a=0 blocks everything: dead channel, SINAR 0/0 -> 0, BER ~ 0.5
    spec = make_spec((("r_a", (0.0, 2.0, 4.0)),), criterion="max-SINAR")
    res = run_sweep(spec, cache_dir=tmp_path)
    dead = res.rows[0]
    assert dead.absorbed_fraction == 0.0
    assert dead.sinar.value == 0.0 and not dead.sinar.is_infinite
    assert optimal_aperture(res, criterion="max-SINAR").r_a_star > 0.0
