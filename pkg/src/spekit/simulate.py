"""Kinetic Monte Carlo photon streams from a 3-level emitter.

A trajectory is simulated with the Gillespie algorithm (exact exponential
waiting times per state); a photon timestamp is recorded at every radiative
|e> -> |g> transition.  Timestamps are quantized to a 1 ps grid at emission,
which bounds histogram bin fidelity downstream.

Streams are plain int64 numpy arrays of picosecond timestamps, sorted
nondecreasing.  All randomness flows through numpy Generators seeded from
(seed, operation tag) so each pipeline stage is independently reproducible:
identical inputs including the seed give bit-identical streams.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .kinetics import ThreeLevelRates, steady_state

__all__ = [
    "PhotonRecord",
    "DetectorModel",
    "PulsedExcitation",
    "SimConfig",
    "simulate_photon_stream",
    "simulate_photon_stream_segmented",
    "apply_detector",
    "split_hbt",
    "PS_PER_NS",
]

PS_PER_NS = 1000

# operation tags for per-stage RNG stream derivation
_TAG_EMIT = 0x45A11
_TAG_DETECT = 0xDE7EC
_TAG_SPLIT = 0x5B117

_BLOCK = 1 << 20  # excitation cycles drawn per vectorized block


@dataclass(frozen=True)
class PhotonRecord:
    """One detection event: integer picosecond timestamp on a channel."""

    timestamp: int
    channel: int

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValidationError("timestamp must be >= 0")
        if self.channel < 0 or self.channel > 255:
            raise ValidationError("channel must fit in one byte")


@dataclass(frozen=True)
class DetectorModel:
    """Detector imperfections applied to a photon stream.

    efficiency       detection probability per photon
    dead_time        non-paralyzable blind window after a click, ps
    dark_rate        Poisson dark counts, 1/ns
    jitter_sigma     Gaussian timing jitter, ps
    background_rate  Poisson background light, 1/ns (callers emulating a
                     power-proportional background scale this per power)
    """

    efficiency: float = 1.0
    dead_time: float = 0.0
    dark_rate: float = 0.0
    jitter_sigma: float = 0.0
    background_rate: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValidationError("efficiency must be in [0, 1]")
        for name in ("dead_time", "dark_rate", "jitter_sigma", "background_rate"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")


@dataclass(frozen=True)
class PulsedExcitation:
    """Rectangular gating of the pump: on during [k*period, k*period+width)."""

    period: float  # ns
    pulse_width: float  # ns

    def __post_init__(self):
        if not self.period > 0:
            raise ValidationError("period must be > 0")
        if not 0 < self.pulse_width < self.period:
            raise ValidationError("pulse_width must be in (0, period)")


@dataclass(frozen=True)
class SimConfig:
    """Trajectory duration (ns), RNG seed, and optional pulsed excitation."""

    duration: float
    seed: int = 0
    pulsed: PulsedExcitation | None = None

    def __post_init__(self):
        if not self.duration > 0:
            raise ValidationError("duration must be > 0")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be a 64-bit unsigned integer")


def _rng(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(tag)]))


def _validate_stream(stream) -> np.ndarray:
    ts = np.asarray(stream, dtype=np.int64)
    if ts.ndim != 1:
        raise ValidationError("stream must be a 1-D array of ps timestamps")
    if ts.size and np.any(np.diff(ts) < 0):
        raise ValidationError("stream must be time-ordered")
    return ts


def _check_rates_for_sim(rates: ThreeLevelRates):
    if rates.gamma_em > 0 and rates.gamma_mg == 0:
        raise ValidationError(
            "gamma_mg = 0 with gamma_em > 0 traps the trajectory in |m>"
        )


def _cw_photon_times(rates: ThreeLevelRates, duration: float, rng) -> np.ndarray:
    """Photon emission times (ns, float) of a CW Gillespie trajectory.

    The trajectory is a renewal sequence of excitation cycles
    g -(wait)-> e -(wait)-> {g: photon | m -(wait)-> g}, so cycles are iid
    and can be drawn in vectorized blocks.
    """
    a, r, s, d = rates.gamma_ge, rates.gamma_eg, rates.gamma_em, rates.gamma_mg
    p_shelve = s / (r + s)
    photons = []
    t0 = 0.0
    while t0 < duration:
        t_g = rng.exponential(1.0 / a, _BLOCK)
        t_e = rng.exponential(1.0 / (r + s), _BLOCK)
        shelved = rng.random(_BLOCK) < p_shelve
        if s > 0:
            t_m = np.where(shelved, rng.exponential(1.0 / d, _BLOCK), 0.0)
        else:
            t_m = np.zeros(_BLOCK)
        ends = t0 + np.cumsum(t_g + t_e + t_m)
        emit = ends[~shelved]  # photon exactly at cycle end when not shelved
        photons.append(emit[emit < duration])
        t0 = ends[-1]
    return np.concatenate(photons) if photons else np.empty(0)


class _DrawBuffer:
    """Buffered scalar draws from a Generator; keeps the sequential pulsed
    loop fast while preserving the exact draw sequence per seed."""

    def __init__(self, rng, size=1 << 16):
        self._rng = rng
        self._size = size
        self._exp = rng.exponential(1.0, size)
        self._uni = rng.random(size)
        self._ie = 0
        self._iu = 0

    def exponential(self):
        if self._ie >= self._size:
            self._exp = self._rng.exponential(1.0, self._size)
            self._ie = 0
        v = self._exp[self._ie]
        self._ie += 1
        return v

    def uniform(self):
        if self._iu >= self._size:
            self._uni = self._rng.random(self._size)
            self._iu = 0
        v = self._uni[self._iu]
        self._iu += 1
        return v


def _advance_through_pulses(t0: float, active: float, period: float, width: float) -> float:
    """Absolute time at which `active` ns of in-pulse exposure has elapsed,
    starting from t0 with pulses on during [k*period, k*period + width)."""
    phase = t0 % period
    if phase < width:
        avail = width - phase
        if active <= avail:
            return t0 + active
        active -= avail
    next_start = t0 - phase + period
    k, rem = divmod(active, width)
    return next_start + k * period + rem


def _pulsed_photon_times(rates: ThreeLevelRates, duration: float,
                         pulsed: PulsedExcitation, rng) -> np.ndarray:
    a, r, s, d = rates.gamma_ge, rates.gamma_eg, rates.gamma_em, rates.gamma_mg
    period, width = pulsed.period, pulsed.pulse_width
    p_shelve = s / (r + s)
    inv_decay = 1.0 / (r + s)
    inv_deshelve = 1.0 / d if d > 0 else math.inf
    draws = _DrawBuffer(rng)
    photons = []
    t = 0.0
    while True:
        # |g>: pump hazard accumulates only inside pulse windows
        t = _advance_through_pulses(t, draws.exponential() / a, period, width)
        if t >= duration:
            break
        # |e>: decay rate is pump-independent
        t += draws.exponential() * inv_decay
        if draws.uniform() < p_shelve:
            t += draws.exponential() * inv_deshelve
        else:
            if t < duration:
                photons.append(t)
    return np.asarray(photons)


def simulate_photon_stream(rates: ThreeLevelRates, cfg: SimConfig) -> np.ndarray:
    """Photon timestamps (int64 ps, sorted) from one emitter trajectory.

    CW mode emits a photon at each radiative transition of a Gillespie
    trajectory starting in |g>; pulsed mode gates gamma_ge on only during
    the pulse windows.  gamma_ge = 0 in CW mode yields an empty stream with
    a warning (dark emitter), not an error.
    """
    _check_rates_for_sim(rates)
    if rates.gamma_ge == 0:
        if cfg.pulsed is None:
            warnings.warn("gamma_ge = 0: no pumping, returning an empty stream")
        return np.empty(0, dtype=np.int64)
    rng = _rng(cfg.seed, _TAG_EMIT)
    if cfg.pulsed is None:
        times = _cw_photon_times(rates, cfg.duration, rng)
    else:
        times = _pulsed_photon_times(rates, cfg.duration, cfg.pulsed, rng)
    return np.rint(times * PS_PER_NS).astype(np.int64)


def simulate_photon_stream_segmented(rates: ThreeLevelRates, cfg: SimConfig,
                                     n_segments: int, burn_in: float | None = None,
                                     max_workers: int | None = None) -> np.ndarray:
    """Approximate a long CW trajectory by independent segments.

    Each segment uses a seed derived from (cfg.seed, segment index), starts
    in |g>, runs for burn_in + duration/n_segments, and only photons after
    the burn-in are kept (shifted onto the global time axis).  The burn-in
    defaults to 20 slow-eigenmode lifetimes.  Output is deterministic for a
    given (seed, n_segments) regardless of worker count; n_segments = 1 is
    exactly the single-trajectory stream.
    """
    if cfg.pulsed is not None:
        raise ValidationError("segmented simulation supports CW mode only")
    if n_segments < 1:
        raise ValidationError("n_segments must be >= 1")
    if n_segments == 1:
        return simulate_photon_stream(rates, cfg)
    if burn_in is None:
        from .kinetics import nonzero_eigenvalue_magnitudes

        _, mu_slow = nonzero_eigenvalue_magnitudes(rates)
        burn_in = 20.0 / mu_slow if mu_slow > 0 else 0.0
    seg = cfg.duration / n_segments
    seeds = np.random.SeedSequence([int(cfg.seed), _TAG_EMIT]).spawn(n_segments)

    def run(i):
        rng = np.random.default_rng(seeds[i])
        times = _cw_photon_times(rates, burn_in + seg, rng)
        kept = times[times >= burn_in] - burn_in + i * seg
        return np.rint(kept * PS_PER_NS).astype(np.int64)

    if max_workers is not None and max_workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            parts = list(pool.map(run, range(n_segments)))
    else:
        parts = [run(i) for i in range(n_segments)]
    return np.concatenate(parts)


def _dead_time_filter(ts: np.ndarray, dead_ps: int) -> np.ndarray:
    """Non-paralyzable dead time: drop events closer than dead_ps to the
    previous accepted event.  Iterative removal of the first violator of
    each run converges to the sequential-scan result."""
    if dead_ps <= 0 or ts.size == 0:
        return ts
    kept = ts
    while kept.size > 1:
        close = np.diff(kept) < dead_ps
        # only drop a violator whose reference event survives this round
        first = close & ~np.concatenate(([False], close[:-1]))
        if not first.any():
            break
        kept = np.delete(kept, np.nonzero(first)[0] + 1)
    return kept


def apply_detector(stream, det: DetectorModel, seed: int,
                   duration_ns: float | None = None) -> np.ndarray:
    """Detection events (int64 ps, sorted) for a photon stream.

    Stages, in order: Bernoulli thinning by efficiency; Gaussian timing
    jitter then re-sort; Poisson dark and background events merged in;
    non-paralyzable dead-time removal last, so the output respects the
    dead-time spacing guarantee.  duration_ns bounds the span over which
    dark/background events are generated (defaults to the stream span).
    Deterministic given the seed.
    """
    ts = _validate_stream(stream)
    rng = _rng(seed, _TAG_DETECT)
    if det.efficiency < 1.0:
        ts = ts[rng.random(ts.size) < det.efficiency]
    if det.jitter_sigma > 0 and ts.size:
        ts = ts + np.rint(rng.normal(0.0, det.jitter_sigma, ts.size)).astype(np.int64)
        np.clip(ts, 0, None, out=ts)
        ts = np.sort(ts)
    extra_rate = det.dark_rate + det.background_rate
    if extra_rate > 0:
        if duration_ns is None:
            duration_ns = ts[-1] / PS_PER_NS if ts.size else 0.0
        n = rng.poisson(extra_rate * duration_ns)
        extras = np.rint(rng.random(n) * duration_ns * PS_PER_NS).astype(np.int64)
        ts = np.sort(np.concatenate([ts, extras]))
    return _dead_time_filter(ts, int(round(det.dead_time)))


def split_hbt(stream, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Route each event through a 50/50 beamsplitter onto two channels.

    The union of the outputs equals the input exactly."""
    ts = _validate_stream(stream)
    to_ch1 = _rng(seed, _TAG_SPLIT).random(ts.size) < 0.5
    return ts[~to_ch1], ts[to_ch1]
