"""Analytic signal-quality metrics for a BCSK channel response.

SINAR divides the intended slot's mean arrival count by the mean ISI count
plus the summed per-tap arrival standard deviations:

    SINAR = M*h_1 / (sum_{k>=2} M*h_k + sum_{k>=1} sqrt(M*h_k*(1-h_k)))

The denominator adds standard deviations tap by tap (not the standard
deviation of the summed count); the metric is defined that way and the
results depend on it. SIR is the M-independent limit h_1 / sum_{k>=2} h_k;
SINAR converges to SIR from below as M grows, at rate 1/sqrt(M).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .channel import ChannelResponse


@dataclass(frozen=True)
class RatioValue:
    """A non-negative ratio whose infinite case is an explicit flag.

    Infinities never travel as raw float sentinels; downstream ordering is
    explicit through sort_key().
    """

    value: float
    is_infinite: bool = False

    def sort_key(self) -> tuple[bool, float]:
        return (self.is_infinite, self.value)

    def __format__(self, spec: str) -> str:
        return "inf" if self.is_infinite else format(self.value, spec)


_INF = RatioValue(math.inf, is_infinite=True)


@dataclass(frozen=True)
class MetricReport:
    sinar: RatioValue
    sir: RatioValue
    M: int
    h_digest: str


def sinar(M: int, h: ChannelResponse) -> RatioValue:
    """Signal-to-interference-and-noise amplitude ratio at M molecules.

    Zero denominator with a live signal (single perfect tap) is infinite;
    a dead channel (h_1 = 0 with no denominator either) scores zero, so grid
    argmax logic never prefers a channel that receives nothing.
    """
    if M < 1:
        raise ValueError(f"M must be >= 1, got {M}")
    signal = M * h.h[0]
    isi = sum(M * hk for hk in h.h[1:])
    noise = sum(math.sqrt(M * hk * (1.0 - hk)) for hk in h.h)
    den = isi + noise
    if den == 0.0:
        return _INF if signal > 0 else RatioValue(0.0)
    return RatioValue(signal / den)


def sir(h: ChannelResponse) -> RatioValue:
    """Signal-to-interference ratio: first tap over the ISI tail sum."""
    tail = sum(h.h[1:])
    if tail == 0.0:
        return _INF if h.h[0] > 0 else RatioValue(0.0)
    return RatioValue(h.h[0] / tail)


def metric_report(M: int, h: ChannelResponse) -> MetricReport:
    return MetricReport(sinar=sinar(M, h), sir=sir(h), M=M,
                        h_digest=h.digest())
