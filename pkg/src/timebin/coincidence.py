"""High-throughput analysis of timestamp streams.

Streams are integer picosecond arrays tied to a slot clock. Coincidences
are defined by slot equality: one signal and one idler event in the same
clock slot form at most one coincidence, extra events in a slot pair off
min-count style. Accidentals are estimated by re-running the same match at
a deliberate slot offset, where only uncorrelated pairings survive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .errors import ClockMismatchError
from .model import _require

PS_PER_S = 1e12


@dataclass(frozen=True, eq=False)
class TimestampStream:
    """A time-ordered detection record for one arm.

    times_ps are integer picoseconds since the run origin; t0_ps shifts the
    slot grid for analysis without touching the data. channel 0 is the
    signal arm, 1 the idler arm.
    """

    times_ps: np.ndarray
    channel: int
    slot_period_ps: int
    seed: int = 0
    t0_ps: int = 0

    def __post_init__(self) -> None:
        t = np.ascontiguousarray(self.times_ps, dtype=np.int64)
        object.__setattr__(self, "times_ps", t)
        _require(self.slot_period_ps >= 1, "slot_period_ps must be >= 1")
        if t.size and np.any(np.diff(t) < 0):
            raise ValueError("timestamps must be non-decreasing")

    @property
    def n_events(self) -> int:
        return int(self.times_ps.size)

    def slots(self) -> np.ndarray:
        slots, _ = slot_assign(self.times_ps, self.slot_period_ps, self.t0_ps)
        return slots


def slot_assign(times_ps: np.ndarray, slot_period_ps: int,
                t0_ps: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Map timestamps onto the slot grid: (slot index, phase inside slot).

    Slots are half-open intervals [t0 + k*T, t0 + (k+1)*T). Times before t0
    are a caller error.
    """
    t = np.asarray(times_ps, dtype=np.int64)
    _require(slot_period_ps >= 1, "slot_period_ps must be >= 1")
    if t.size and int(t.min()) < t0_ps:
        raise ValueError("timestamp precedes the slot-grid origin t0")
    rel = t - t0_ps
    return rel // slot_period_ps, rel % slot_period_ps


@dataclass(frozen=True)
class CoincidenceResult:
    """Matched and offset-matched counts plus derived rates.

    car is the plain ratio of the two counts; car_sigma propagates Poisson
    errors on both.
    """

    cc_count: int
    acc_count: int
    duration_s: float
    offset_slots: int
    accidental_offset_slots: int
    cc_rate_cps: float
    acc_rate_cps: float
    car: float
    car_sigma: float


def _span_duration_s(s: TimestampStream, i: TimestampStream) -> float:
    if s.n_events == 0 and i.n_events == 0:
        return 0.0
    firsts = [int(x.times_ps[0]) for x in (s, i) if x.n_events]
    lasts = [int(x.times_ps[-1]) for x in (s, i) if x.n_events]
    return (max(lasts) - min(firsts) + s.slot_period_ps) / PS_PER_S


def count_coincidences(s: TimestampStream, i: TimestampStream,
                       offset_slots: int = 0,
                       accidental_offset_slots: int = 2,
                       duration_s: float | None = None) -> CoincidenceResult:
    """Count slot-equality coincidences and offset accidentals in one pass each.

    The idler slot index is shifted by offset_slots for the matched count
    and by accidental_offset_slots for the accidental estimate. Both scans
    are linear in the event counts.
    """
    if s.slot_period_ps != i.slot_period_ps or s.t0_ps != i.t0_ps:
        raise ClockMismatchError("streams disagree on slot period or origin")
    _require(accidental_offset_slots != offset_slots,
             "accidental offset must differ from the coincidence offset")
    slots_s = s.slots()
    slots_i = i.slots()
    cc = int(_kernels.count_slot_matches(slots_s, slots_i, offset_slots))
    acc = int(_kernels.count_slot_matches(slots_s, slots_i, accidental_offset_slots))
    dur = _span_duration_s(s, i) if duration_s is None else float(duration_s)
    cc_rate = cc / dur if dur > 0.0 else 0.0
    acc_rate = acc / dur if dur > 0.0 else 0.0
    if acc > 0:
        car = cc / acc
        car_sigma = car * math.sqrt((1.0 / cc if cc > 0 else 0.0) + 1.0 / acc)
    else:
        car = math.inf if cc > 0 else math.nan
        car_sigma = math.nan
    return CoincidenceResult(cc, acc, dur, offset_slots, accidental_offset_slots,
                             cc_rate, acc_rate, car, car_sigma)


@dataclass(frozen=True, eq=False)
class DelayHistogram:
    """Binned arrival-time structure plus the mass that fell outside."""

    bin_centers_ps: np.ndarray
    counts: np.ndarray
    out_of_range: int
    bin_width_ps: int
    mode: str
    n_inputs: int

    def total_mass(self) -> int:
        return int(self.counts.sum()) + self.out_of_range


def delay_histogram(s: TimestampStream, i: TimestampStream | None = None, *,
                    bin_width_ps: int = 2, range_ps: int | None = None,
                    mode: str = "cross") -> DelayHistogram:
    """Histogram timing structure of one or two streams.

    mode 'cross': signed difference between each signal event and its
    nearest idler neighbour, binned symmetrically around zero over range_ps
    (default 2000 ps). mode 'singles': arrival phase inside the slot,
    binned over one slot period; range_ps is ignored. Every input lands in
    exactly one bin or in the out-of-range tally.
    """
    _require(mode in ("cross", "singles"), "mode must be 'cross' or 'singles'")
    _require(bin_width_ps >= 1, "bin_width_ps must be >= 1")

    if mode == "singles":
        period = s.slot_period_ps
        _require(period % bin_width_ps == 0,
                 "bin_width_ps must divide the slot period in singles mode")
        _, phase = slot_assign(s.times_ps, period, s.t0_ps)
        n_bins = period // bin_width_ps
        counts = np.bincount(phase // bin_width_ps, minlength=n_bins)
        centers = np.arange(n_bins, dtype=np.int64) * bin_width_ps + bin_width_ps // 2
        return DelayHistogram(centers, counts.astype(np.int64), 0,
                              bin_width_ps, mode, s.n_events)

    if i is None:
        raise ValueError("cross mode needs both streams")
    if s.slot_period_ps != i.slot_period_ps or s.t0_ps != i.t0_ps:
        raise ClockMismatchError("streams disagree on slot period or origin")
    if range_ps is None:
        range_ps = 2000
    _require(range_ps >= bin_width_ps and range_ps % bin_width_ps == 0,
             "range_ps must be a positive multiple of bin_width_ps")
    if i.n_events == 0:
        n_bins = range_ps // bin_width_ps
        centers = (np.arange(n_bins, dtype=np.int64) * bin_width_ps
                   - range_ps // 2 + bin_width_ps // 2)
        return DelayHistogram(centers, np.zeros(n_bins, dtype=np.int64),
                              s.n_events, bin_width_ps, mode, s.n_events)

    ts = s.times_ps
    ti = i.times_ps
    pos = np.searchsorted(ti, ts)
    left = np.clip(pos - 1, 0, ti.size - 1)
    right = np.clip(pos, 0, ti.size - 1)
    d_left = ts - ti[left]
    d_right = ts - ti[right]
    delta = np.where(np.abs(d_left) <= np.abs(d_right), d_left, d_right)

    half = range_ps // 2
    k = (delta + half) // bin_width_ps
    n_bins = range_ps // bin_width_ps
    in_range = (k >= 0) & (k < n_bins)
    counts = np.bincount(k[in_range], minlength=n_bins).astype(np.int64)
    centers = (np.arange(n_bins, dtype=np.int64) * bin_width_ps
               - half + bin_width_ps // 2)
    return DelayHistogram(centers, counts, int(np.sum(~in_range)),
                          bin_width_ps, mode, s.n_events)


@dataclass(frozen=True)
class CarPoint:
    mu: float
    estimated_mu: float
    cc_rate_cps: float
    acc_rate_cps: float
    car: float
    car_sigma: float
    model_car: float


@dataclass(frozen=True)
class CarCurve:
    points: tuple[CarPoint, ...]


def car_sweep(entries: Sequence[tuple[float, TimestampStream, TimestampStream]],
              accidental_offset_slots: int = 2,
              rate_to_mu: Callable[[float], float] | None = None) -> CarCurve:
    """Coincidence-to-accidental ratio versus pump level.

    Each entry is (configured mu, signal stream, idler stream). When
    rate_to_mu is given it converts the observed signal singles rate back
    to an estimated mu; otherwise that column is NaN. The model column is
    the dark-free prediction 1/mu + 1.
    """
    pts = []
    for mu, s, i in entries:
        res = count_coincidences(s, i, 0, accidental_offset_slots)
        est = math.nan
        if rate_to_mu is not None and res.duration_s > 0.0:
            est = rate_to_mu(s.n_events / res.duration_s)
        model = 1.0 / mu + 1.0 if mu > 0.0 else math.inf
        pts.append(CarPoint(mu, est, res.cc_rate_cps, res.acc_rate_cps,
                            res.car, res.car_sigma, model))
    return CarCurve(tuple(pts))
