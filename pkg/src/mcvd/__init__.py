"""Monte Carlo simulation and analysis of diffusive molecular communication
through a reflecting plane with a circular aperture."""

from .geometry import (Absorbed, Free, Point3, Reflected, Segment,
                       StepOutcome, Topology, in_aperture, plane_crossing,
                       reflect_step, resolve_step, sphere_hit,
                       topology_digest)
from .walker import (HitTimeRecord, SimProtocol, SurvivalSummary,
                     simulate_channel, step_particle, survival_summary)
from .channel import (ChannelCache, ChannelResponse, F_hit_analytic,
                      analytic_response, cache_key, coefficients_from_cdf,
                      default_memory, f_hit_analytic, get_or_simulate,
                      simulated_response)
from .link import (BerEstimate, LinkConfig, demodulate, optimize_threshold,
                   run_ber, sample_arrivals)
from .metrics import MetricReport, RatioValue, metric_report, sinar, sir
from .sweep import (CellResult, OptimalAperture, SweepResult, SweepSpec,
                    crossover_offset, offset_sweep, optimal_aperture,
                    optimal_aperture_by, run_sweep)

__version__ = "0.1.0"
