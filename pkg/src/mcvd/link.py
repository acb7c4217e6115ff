"""BCSK link simulation: arrivals, threshold demodulation, BER estimation.

A bit-1 releases M molecules at its slot start, a bit-0 releases none, and
both are equiprobable. The molecule count received in slot i sums binomial
thinnings of the last L emissions through the channel coefficients,

    R_i = sum_k Binomial(N_tx[i-k+1], h_k),

or, in the Gaussian approximation, one normal draw matching that sum's mean
and variance, rounded and clamped to a non-negative count. The demodulator
compares R_i against a single integer threshold; ties go to bit-0.

BER runs are deterministic and worker-count independent: the bit stream is
pre-generated in full, arrivals are simulated over fixed 65536-bit blocks,
and every block reseeds from (seed, stream, block_index). The pilot stream
used for threshold optimization and the evaluation stream use disjoint
stream ids.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .channel import ChannelResponse

log = logging.getLogger(__name__)

BLOCK_BITS = 65536  # fixed block granule; workers only change scheduling

_PILOT_STREAM = 1
_EVAL_STREAM = 2

_MODELS = ("exact", "gaussian")


@dataclass(frozen=True)
class LinkConfig:
    M: int                       # molecules emitted per bit-1
    t_s: float                   # symbol duration (s)
    n_bits: int = 1_000_000
    threshold: int | None = None  # fixed decision threshold; None = optimize
    pilot_bits: int = 100_000    # pilot stream length for the optimizer
    arrival_model: str = "exact"  # "exact" binomial or "gaussian"
    seed: int = 1

    def __post_init__(self):
        if self.M < 1:
            raise ValueError(f"M must be >= 1, got {self.M}")
        if self.t_s <= 0:
            raise ValueError(f"t_s must be positive, got {self.t_s}")
        if self.n_bits < 1 or self.pilot_bits < 1:
            raise ValueError("n_bits and pilot_bits must be >= 1")
        if self.threshold is not None and self.threshold < 0:
            raise ValueError(f"threshold must be >= 0, got {self.threshold}")
        if self.arrival_model not in _MODELS:
            raise ValueError(f"arrival_model must be one of {_MODELS}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass(frozen=True)
class BerEstimate:
    errors: int
    n_bits: int
    ber: float
    ci95: tuple[float, float]
    tau_used: int
    one_sided: bool = False   # True when no errors were observed

    def __post_init__(self):
        lo, hi = self.ci95
        if not lo <= self.ber <= hi:
            raise ValueError("confidence interval must contain the estimate")


def sample_arrivals(tx_history, h: ChannelResponse, model: str,
                    rng: np.random.Generator) -> int:
    """Received molecule count for the newest slot of tx_history.

    tx_history lists per-slot emission counts, oldest first, newest last;
    shorter-than-L histories are treated as zero-padded at the stream start.
    """
    if model not in _MODELS:
        raise ValueError(f"model must be one of {_MODELS}")
    depth = min(h.L, len(tx_history))
    if model == "exact":
        total = 0
        for k in range(1, depth + 1):
            total += int(rng.binomial(tx_history[-k], h.h[k - 1]))
        return total
    mean = 0.0
    var = 0.0
    for k in range(1, depth + 1):
        n = tx_history[-k]
        mean += n * h.h[k - 1]
        var += n * h.h[k - 1] * (1.0 - h.h[k - 1])
    return int(max(round(float(rng.normal(mean, math.sqrt(var)))), 0))


def demodulate(R: int, tau: int) -> int:
    """Single-threshold decision: bit-1 iff R exceeds tau (ties read as 0)."""
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    return 1 if R > tau else 0


def _stream_bits(cfg: LinkConfig, stream: int, n_bits: int) -> np.ndarray:
    seq = np.random.SeedSequence(entropy=cfg.seed, spawn_key=(stream, 0))
    return np.random.default_rng(seq).integers(0, 2, size=n_bits,
                                               dtype=np.uint8)


def _simulate_stream(cfg: LinkConfig, h: ChannelResponse, stream: int,
                     n_bits: int, workers: int = 1,
                     ) -> tuple[np.ndarray, np.ndarray]:
    """(bits, R) for a whole stream, independent of the worker count."""
    bits = _stream_bits(cfg, stream, n_bits)
    emissions = bits.astype(np.int64) * cfg.M
    L = h.L
    taps = np.asarray(h.h, dtype=np.float64)
    padded = np.concatenate([np.zeros(L - 1, dtype=np.int64), emissions])
    spans = [(b, lo, min(lo + BLOCK_BITS, n_bits))
             for b, lo in enumerate(range(0, n_bits, BLOCK_BITS))]

    def job(span):
        b, lo, hi = span
        seq = np.random.SeedSequence(entropy=cfg.seed,
                                     spawn_key=(stream, 1 + b))
        rng = np.random.default_rng(seq)
        if cfg.arrival_model == "exact":
            R = np.zeros(hi - lo, dtype=np.int64)
            for k in range(1, L + 1):
                R += rng.binomial(padded[lo + L - k:hi + L - k], taps[k - 1])
            return R
        mean = np.zeros(hi - lo)
        var = np.zeros(hi - lo)
        for k in range(1, L + 1):
            n = padded[lo + L - k:hi + L - k]
            mean += n * taps[k - 1]
            var += n * taps[k - 1] * (1.0 - taps[k - 1])
        draws = rng.normal(mean, np.sqrt(var))
        return np.maximum(np.rint(draws), 0.0).astype(np.int64)

    if workers > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, spans))
    else:
        parts = [job(s) for s in spans]
    return bits, np.concatenate(parts)


def optimize_threshold(cfg: LinkConfig, h: ChannelResponse,
                       workers: int = 1) -> int:
    """Empirical pilot search over every integer threshold in [0, M].

    Runs a pilot stream seeded disjointly from the evaluation stream and
    returns the threshold minimizing its error count; ties go to the
    smallest threshold.
    """
    if h.L < 1:
        raise ValueError("channel response is empty")
    if all(hk == 0.0 for hk in h.h):
        log.warning("all-zero channel coefficients; threshold defaults to 0")
        return 0
    bits, R = _simulate_stream(cfg, h, _PILOT_STREAM, cfg.pilot_bits, workers)
    ones = bits == 1
    size = max(cfg.M, int(R.max())) + 1
    # errors(tau) = |missed 1s with R <= tau| + |false 1s with R > tau|
    cum1 = np.cumsum(np.bincount(R[ones], minlength=size))
    cum0 = np.cumsum(np.bincount(R[~ones], minlength=size))
    n0 = int((~ones).sum())
    errors = cum1[:cfg.M + 1] + (n0 - cum0[:cfg.M + 1])
    return int(np.argmin(errors))


def run_ber(cfg: LinkConfig, h: ChannelResponse, workers: int = 1,
            ) -> BerEstimate:
    """Full-stream BER estimate with a 95% confidence interval."""
    if abs(h.t_s - cfg.t_s) > 1e-12:
        raise ValueError(
            f"channel response t_s={h.t_s} does not match config t_s={cfg.t_s}")
    tau = cfg.threshold if cfg.threshold is not None \
        else optimize_threshold(cfg, h, workers)
    bits, R = _simulate_stream(cfg, h, _EVAL_STREAM, cfg.n_bits, workers)
    decisions = (R > tau).astype(np.uint8)
    errors = int(np.count_nonzero(decisions != bits))
    n = cfg.n_bits
    ber = errors / n
    if errors == 0:
        ci = (0.0, min(3.0 / n, 1.0))   # rule-of-three upper bound
        return BerEstimate(errors, n, ber, ci, tau, one_sided=True)
    half = 1.96 * math.sqrt(ber * (1.0 - ber) / n)
    ci = (max(ber - half, 0.0), min(ber + half, 1.0))
    return BerEstimate(errors, n, ber, ci, tau)
