"""Monte-Carlo event chain for a pulsed entangled-pair experiment.

The chain runs source -> delay interferometers -> lossy channels ->
multi-pixel counters -> time digitizers, and hands back two integer
picosecond timestamp streams ready for coincidence analysis. All stages
are vectorized; cost scales with the number of generated events, not with
the number of clock slots, so sparse high-clock-rate runs stay cheap.

Randomness comes exclusively from numpy Generators seeded through
SeedSequence spawning, so a (seed, config) pair maps to bit-identical
output streams.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .coincidence import TimestampStream
from .errors import SaturationWarning
from .model import (ChannelParams, DeadTimeSpec, JitterSpec, MziParams,
                    SourceParams, _require)

PS_PER_S = 1e12


@dataclass(frozen=True)
class DetectorParams:
    """Interleaved multi-pixel counter with a shared readout line.

    Arrivals land on a uniformly random pixel. Each pixel applies its own
    dead time; survivors get Gaussian timing jitter and then pass through a
    pulse combiner that drops anything closer than merge_window_s to the
    previously emitted pulse.
    """

    pixel_count: int = 16
    efficiency: float = 0.67
    dead: DeadTimeSpec = field(default_factory=lambda: DeadTimeSpec(50e-9))
    jitter: JitterSpec = field(default_factory=lambda: JitterSpec(30e-12))
    merge_window_s: float = 400e-12

    def __post_init__(self) -> None:
        _require(self.pixel_count >= 1, "pixel_count must be >= 1")
        _require(0.0 <= self.efficiency <= 1.0, "efficiency must be in [0, 1]")
        _require(self.merge_window_s >= 0.0, "merge_window_s must be >= 0")


@dataclass(frozen=True, eq=False)
class TdcParams:
    """Delay-line time digitizer: a coarse counter plus tap interpolation.

    Reported times sit at the center of the tap bin that caught the
    arrival. tap_widths (picoseconds, summing to one coarse period) default
    to uniform; pass a measured or injected pattern to model nonlinearity.
    """

    tap_count: int = 512
    coarse_clock_hz: float = 500e6
    dead: DeadTimeSpec = field(default_factory=lambda: DeadTimeSpec(2e-9, "paralyzable"))
    max_rate_cps: float = 500e6
    tap_widths: np.ndarray | None = None

    def __post_init__(self) -> None:
        _require(self.tap_count >= 1, "tap_count must be >= 1")
        _require(self.coarse_clock_hz > 0.0, "coarse_clock_hz must be > 0")
        _require(self.max_rate_cps > 0.0, "max_rate_cps must be > 0")
        if self.tap_widths is not None:
            w = np.asarray(self.tap_widths, dtype=np.float64)
            _require(w.size == self.tap_count, "tap_widths length must equal tap_count")
            _require(bool(np.all(w > 0.0)), "tap_widths must all be > 0")
            period = self.coarse_period_ps
            _require(abs(float(w.sum()) - period) <= 1e-6 * period,
                     "tap_widths must sum to one coarse period")
            object.__setattr__(self, "tap_widths", w)

    @property
    def coarse_period_ps(self) -> float:
        return PS_PER_S / self.coarse_clock_hz

    def widths_ps(self) -> np.ndarray:
        if self.tap_widths is not None:
            return self.tap_widths
        return np.full(self.tap_count, self.coarse_period_ps / self.tap_count)


def sawtooth_tap_widths(tap_count: int, amplitude: float,
                        coarse_period_ps: float = 2000.0) -> np.ndarray:
    """Tap widths with a linear ramp of relative error from -amplitude to
    +amplitude across the line, renormalized to the coarse period."""
    _require(0.0 <= amplitude < 1.0, "amplitude must be in [0, 1)")
    ramp = np.linspace(-amplitude, amplitude, tap_count)
    w = (coarse_period_ps / tap_count) * (1.0 + ramp)
    return w * (coarse_period_ps / w.sum())


@dataclass(frozen=True)
class SimRun:
    """One simulation execution: how long to run and which seed to use."""

    seed: int
    n_slots: int
    slot_period_ps: int = 200

    def __post_init__(self) -> None:
        _require(self.seed >= 0, "seed must be >= 0")
        _require(self.n_slots >= 1, "n_slots must be >= 1")
        _require(self.slot_period_ps >= 1, "slot_period_ps must be >= 1")


@dataclass(frozen=True)
class ChainConfig:
    """Full parameter set for the two-arm detection chain.

    Either interferometer may be None to model a direct-detection setup
    (the arrangement used for coincidence-ratio measurements); a None
    digitizer skips quantization and reports rounded arrival times.
    """

    source: SourceParams
    signal_channel: ChannelParams
    idler_channel: ChannelParams
    signal_detector: DetectorParams = field(default_factory=DetectorParams)
    idler_detector: DetectorParams = field(default_factory=DetectorParams)
    signal_mzi: MziParams | None = field(default_factory=MziParams)
    idler_mzi: MziParams | None = field(default_factory=MziParams)
    signal_tdc: TdcParams | None = field(default_factory=TdcParams)
    idler_tdc: TdcParams | None = field(default_factory=TdcParams)

    def __post_init__(self) -> None:
        _require((self.signal_mzi is None) == (self.idler_mzi is None),
                 "interferometers must be present on both arms or neither")


@dataclass(frozen=True)
class ChannelStats:
    """Per-arm bookkeeping of how many events each stage passed on."""

    candidates: int
    darks: int
    after_efficiency: int
    after_deadtime: int
    after_merge: int
    emitted: int


@dataclass(frozen=True)
class ChainResult:
    signal: TimestampStream
    idler: TimestampStream
    n_pairs: int
    signal_stats: ChannelStats
    idler_stats: ChannelStats


def clock_slot_period_ps(clock_hz: float) -> int:
    """Slot period for a source clock, as the integer picosecond count the
    timestamp grid uses. Clocks whose period is not a whole picosecond are
    rejected rather than silently skewed."""
    _require(clock_hz > 0.0, "clock_hz must be > 0")
    period = PS_PER_S / clock_hz
    rounded = round(period)
    _require(rounded >= 1 and abs(period - rounded) <= 1e-6 * period,
             "clock period must be a whole number of picoseconds")
    return int(rounded)


def generate_pairs(mu: float, n_slots: int, rng: np.random.Generator) -> np.ndarray:
    """Slot indices of generated pairs, sorted, one entry per pair.

    The total is Poisson(mu * n_slots) with uniform slot placement, which
    makes the per-slot counts independent Poisson(mu) draws; slots holding
    several pairs simply repeat.
    """
    _require(mu >= 0.0, "mu must be >= 0")
    n = int(rng.poisson(mu * n_slots))
    slots = rng.integers(0, n_slots, n, dtype=np.int64)
    slots.sort()
    return slots


def mzi_outcomes(n_pairs: int, mzi_s: MziParams, mzi_i: MziParams,
                 rng: np.random.Generator,
                 ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Joint interferometer outcomes for n_pairs photon pairs.

    Returns (delay_s, delay_i, survive_s, survive_i). Delays are 0 or 1
    slot. The joint delay distribution carries the two-photon fringe:
    equal delays have probability (1 + u) / 4 each and opposite delays
    (1 - u) / 4 each, with u = V * cos(phase_s + phase_i). V is the
    geometric mean of the two devices' interference visibilities, so a
    matched pair of devices realizes its quoted apparatus ceiling. Each
    photon independently survives its device's insertion loss; the delay
    marginals stay 50/50 regardless of phase.
    """
    v_joint = math.sqrt(mzi_s.interference_visibility * mzi_i.interference_visibility)
    u = v_joint * math.cos(mzi_s.phase_rad + mzi_i.phase_rad)
    r = rng.random(n_pairs, dtype=np.float32)
    c1 = np.float32((1.0 + u) / 4.0)
    c3 = np.float32((3.0 - u) / 4.0)
    half = np.float32(0.5)
    delay_s = r >= half
    delay_i = np.where(delay_s, r >= c3, r >= c1)
    survive_s = rng.random(n_pairs, dtype=np.float32) < np.float32(mzi_s.insertion_transmittance)
    survive_i = rng.random(n_pairs, dtype=np.float32) < np.float32(mzi_i.insertion_transmittance)
    return delay_s, delay_i, survive_s, survive_i


def add_dark_counts(ch: ChannelParams, n_slots: int, slot_period_ps: int,
                    rng: np.random.Generator) -> np.ndarray:
    """Dark-count arrival times in picoseconds, unsorted.

    Each slot hosts a dark candidate with probability dark_prob, landing at
    a uniform time inside the slot.
    """
    if ch.dark_prob == 0.0:
        return np.empty(0, dtype=np.float64)
    n = int(rng.binomial(n_slots, ch.dark_prob))
    slots = rng.integers(0, n_slots, n, dtype=np.int64)
    return slots * float(slot_period_ps) + rng.uniform(0.0, slot_period_ps, n)


@dataclass(frozen=True)
class DetectResult:
    times_ps: np.ndarray        # float64, sorted
    pixels: np.ndarray          # int16, aligned with times_ps
    n_in: int
    n_after_efficiency: int
    n_after_deadtime: int


def detect(times_ps: np.ndarray, det: DetectorParams,
           rng: np.random.Generator) -> DetectResult:
    """Run candidate arrivals through the multi-pixel counter.

    Order of operations: random pixel assignment, efficiency thinning,
    per-pixel dead time on arrival order, jitter, re-sort, merge window.
    Input times must be non-decreasing (picoseconds).
    """
    t = np.asarray(times_ps, dtype=np.float64)
    if t.size and np.any(np.diff(t) < 0.0):
        raise ValueError("detect requires time-ordered candidates")
    n_in = t.size
    pixels = rng.integers(0, det.pixel_count, n_in, dtype=np.int16)

    if det.efficiency < 1.0:
        alive = rng.random(n_in, dtype=np.float32) < np.float32(det.efficiency)
        t = t[alive]
        pixels = pixels[alive]
    n_eff = t.size

    dead_ps = det.dead.dead_time_s * PS_PER_S
    if dead_ps > 0.0 and n_eff:
        keep = _kernels.pixel_deadtime_mask(t, pixels, det.pixel_count, dead_ps,
                                            det.dead.mode == "paralyzable")
        t = t[keep]
        pixels = pixels[keep]
    n_dead = t.size

    sigma_ps = det.jitter.sigma_s * PS_PER_S
    if sigma_ps > 0.0 and n_dead:
        t = t + rng.normal(0.0, sigma_ps, n_dead)
        order = np.argsort(t, kind="stable")
        t = t[order]
        pixels = pixels[order]

    window_ps = det.merge_window_s * PS_PER_S
    if window_ps > 0.0 and t.size:
        keep = _kernels.merge_window_mask(t, window_ps)
        t = t[keep]
        pixels = pixels[keep]

    return DetectResult(t, pixels, n_in, n_eff, n_dead)


@dataclass(frozen=True)
class TdcResult:
    times_ps: np.ndarray        # int64 bin centers, sorted
    codes: np.ndarray           # uint16 tap codes, aligned
    n_in: int
    input_rate_cps: float


def tdc_digitize(times_ps: np.ndarray, tdc: TdcParams) -> TdcResult:
    """Quantize arrival times to tap-bin centers and apply the digitizer's
    dead time.

    Emits a SaturationWarning when the sustained input rate exceeds
    max_rate_cps; the data are still processed. Output times are integer
    picoseconds, non-decreasing, and never closer than the dead time.
    """
    t = np.asarray(times_ps, dtype=np.float64)
    if t.size and np.any(np.diff(t) < 0.0):
        raise ValueError("tdc_digitize requires time-ordered input")
    if t.size and float(t[0]) < 0.0:
        raise ValueError("tdc_digitize requires non-negative times")
    n_in = t.size

    rate = 0.0
    if n_in >= 2:
        span = float(t[-1] - t[0])
        if span > 0.0:
            rate = (n_in - 1) / span * PS_PER_S
            if rate > tdc.max_rate_cps:
                warnings.warn(
                    f"sustained input rate {rate:.3e} cps exceeds digitizer "
                    f"maximum {tdc.max_rate_cps:.3e} cps",
                    SaturationWarning, stacklevel=2)

    period = tdc.coarse_period_ps
    widths = tdc.widths_ps()
    edges = np.concatenate(([0.0], np.cumsum(widths)))
    centers = edges[:-1] + widths / 2.0

    coarse = np.floor(t / period)
    phase = t - coarse * period
    codes = np.searchsorted(edges, phase, side="right") - 1
    np.clip(codes, 0, tdc.tap_count - 1, out=codes)
    out = np.rint(coarse * period + centers[codes]).astype(np.int64)

    dead_ps = tdc.dead.dead_time_s * PS_PER_S
    if dead_ps > 0.0 and out.size:
        keep = _kernels.channel_deadtime_mask(out, dead_ps,
                                              tdc.dead.mode == "paralyzable")
        out = out[keep]
        codes = codes[keep]

    return TdcResult(out, codes.astype(np.uint16), n_in, rate)


def _arm_stream(slots: np.ndarray, delays: np.ndarray | None,
                pair_offsets: np.ndarray | None, survive: np.ndarray,
                ch: ChannelParams, det: DetectorParams, tdc: TdcParams | None,
                run: SimRun, rng_dark: np.random.Generator,
                rng_det: np.random.Generator, channel_id: int,
                ) -> tuple[TimestampStream, ChannelStats]:
    """Carry one arm from surviving pair photons to an emitted stream."""
    period = float(run.slot_period_ps)
    idx = np.flatnonzero(survive)
    t = slots[idx] * period + 0.5 * period
    if delays is not None:
        t = t + delays[idx] * period
    if pair_offsets is not None:
        t = t + pair_offsets[idx]
        t = np.maximum(t, 0.0)

    darks = add_dark_counts(ch, run.n_slots, run.slot_period_ps, rng_dark)
    n_candidates = t.size
    if darks.size:
        t = np.concatenate((t, darks))
    t.sort(kind="stable")

    res = detect(t, det, rng_det)
    emitted_f = np.maximum(res.times_ps, 0.0)
    if tdc is not None:
        dig = tdc_digitize(emitted_f, tdc)
        emitted = dig.times_ps
    else:
        emitted = np.rint(emitted_f).astype(np.int64)

    stats = ChannelStats(
        candidates=n_candidates,
        darks=int(darks.size),
        after_efficiency=res.n_after_efficiency,
        after_deadtime=res.n_after_deadtime,
        after_merge=int(res.times_ps.size),
        emitted=int(emitted.size),
    )
    stream = TimestampStream(times_ps=emitted, channel=channel_id,
                             slot_period_ps=run.slot_period_ps, seed=run.seed)
    return stream, stats


def simulate_chain(cfg: ChainConfig, run: SimRun) -> ChainResult:
    """Simulate the full two-arm chain for run.n_slots clock slots.

    Pair photons are emitted at slot centers (plus the configured source
    spread, shared by both photons of a pair). A one-slot interferometer
    delay lands a photon in the next slot; the joint delay statistics
    carry the phase-dependent two-photon fringe while each arm's singles
    stay phase-independent.
    """
    clock_period_ps = PS_PER_S / cfg.source.clock_hz
    if abs(clock_period_ps - run.slot_period_ps) > 1e-6 * run.slot_period_ps:
        raise ValueError("slot_period_ps must equal one source clock period")

    ss = np.random.SeedSequence(run.seed)
    (k_pairs, k_mzi, k_chan_s, k_chan_i,
     k_dark_s, k_dark_i, k_det_s, k_det_i) = ss.spawn(8)
    rng_pairs = np.random.default_rng(k_pairs)

    slots = generate_pairs(cfg.source.mean_pairs_per_pulse, run.n_slots, rng_pairs)
    n_pairs = slots.size

    pair_offsets = None
    if cfg.source.pulse_fwhm_s > 0.0:
        sigma_ps = JitterSpec(cfg.source.pulse_fwhm_s).sigma_s * PS_PER_S
        pair_offsets = rng_pairs.normal(0.0, sigma_ps, n_pairs)

    if cfg.signal_mzi is not None and cfg.idler_mzi is not None:
        rng_mzi = np.random.default_rng(k_mzi)
        delay_s, delay_i, ins_s, ins_i = mzi_outcomes(
            n_pairs, cfg.signal_mzi, cfg.idler_mzi, rng_mzi)
    else:
        delay_s = delay_i = None
        ins_s = ins_i = None

    def survive_mask(ch: ChannelParams, ins: np.ndarray | None,
                     key) -> np.ndarray:
        rng = np.random.default_rng(key)
        m = rng.random(n_pairs, dtype=np.float32) < np.float32(ch.transmittance)
        if ins is not None:
            m &= ins
        return m

    surv_s = survive_mask(cfg.signal_channel, ins_s, k_chan_s)
    surv_i = survive_mask(cfg.idler_channel, ins_i, k_chan_i)

    stream_s, stats_s = _arm_stream(
        slots, delay_s, pair_offsets, surv_s, cfg.signal_channel,
        cfg.signal_detector, cfg.signal_tdc, run,
        np.random.default_rng(k_dark_s), np.random.default_rng(k_det_s), 0)
    stream_i, stats_i = _arm_stream(
        slots, delay_i, pair_offsets, surv_i, cfg.idler_channel,
        cfg.idler_detector, cfg.idler_tdc, run,
        np.random.default_rng(k_dark_i), np.random.default_rng(k_det_i), 1)

    return ChainResult(stream_s, stream_i, n_pairs, stats_s, stats_i)


def deadtime_veto_coincidence(mu: float, dead_slots: int, n_slots: int,
                              rng: np.random.Generator,
                              chunk: int = 1 << 22) -> tuple[float, float]:
    """Monte-Carlo coincidence probability per pulse under first-order
    dead-time accounting, with a binomial error estimate.

    Pairs are drawn per slot; each pair cancels one count for every pair in
    the dead_slots window behind it. Counting losses with multiplicity is
    the event-level realization of the linear model mu * (1 - mu * D):
    physical blocking models saturate overlapping windows and therefore sit
    above the linear curve once mu * dead_slots is no longer small.
    """
    _require(mu >= 0.0, "mu must be >= 0")
    _require(dead_slots >= 0, "dead_slots must be >= 0")
    _require(n_slots >= 1, "n_slots must be >= 1")
    d = int(dead_slots)
    total = 0
    lost = 0
    tail = np.zeros(d, dtype=np.int64)
    for start in range(0, n_slots, chunk):
        m = min(chunk, n_slots - start)
        c = rng.poisson(mu, m).astype(np.int64)
        total += int(c.sum())
        if d > 0:
            ext = np.concatenate((tail, c))
            p = np.concatenate(([0], np.cumsum(ext)))
            w = p[d:d + m] - p[:m]      # pairs in the d slots behind each slot
            lost += int(np.sum(c * w))
            tail = ext[-d:].copy()
    q = (total - lost) / n_slots
    sigma = math.sqrt(max(q * (1.0 - q), 0.0) / n_slots)
    return q, sigma
