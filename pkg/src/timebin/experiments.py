"""Measurement drivers built on the Monte-Carlo chain.

Each driver owns one experiment type: interference fringe scans, CHSH
correlation runs, dead-time saturation sweeps, and visibility-versus-pump
curves. Runs stop on a fixed signal-event quota rather than a fixed slot
count, so every scan point carries the same counting statistics and the
per-point durations are directly comparable.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import curve_fit

from . import model, sim
from .coincidence import CarCurve, TimestampStream, car_sweep, count_coincidences
from .errors import (DegenerateFitError, MultimodalDataError, NumericError,
                     QuotaError)
from .model import _require


def _map_indexed(fn, n: int, threads: int) -> list:
    """Run fn(0..n-1) in order, optionally on a thread pool.

    Every work item draws from its own child seed, so the result is
    independent of scheduling; threads only help when the workload releases
    the interpreter lock (numpy and the compiled kernels do).
    """
    if threads <= 1 or n <= 1:
        return [fn(k) for k in range(n)]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, range(n)))

PS_PER_S = 1e12
FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


# ---------------------------------------------------------------------------
# fringe fitting

@dataclass(frozen=True)
class FringeFit:
    """Result of a sinusoidal fringe fit R(theta) = A (1 + V cos(theta + phi))."""

    visibility: float
    visibility_sigma: float
    mean_rate_cps: float
    mean_rate_sigma_cps: float
    phase_offset_rad: float
    chi2_dof: float
    crosscheck_visibility: float
    n_points: int


def fit_visibility(phases_rad: np.ndarray, rates_cps: np.ndarray,
                   sigmas_cps: np.ndarray | None = None) -> FringeFit:
    """Weighted least-squares fringe fit, linear in (A, A V cos phi, -A V sin phi).

    The sinusoid is linear in that basis, so the solution is the exact
    global optimum; no starting point is involved. Visibility errors come
    from first-order propagation of the coefficient covariance. The
    peak-to-dip ratio of the raw data is reported alongside as a
    cross-check estimator.

    Raises DegenerateFitError when the fitted mean rate is non-positive or
    statistically consistent with zero, or when the phase grid cannot
    separate the three coefficients.
    """
    th = np.asarray(phases_rad, dtype=np.float64)
    y = np.asarray(rates_cps, dtype=np.float64)
    _require(th.ndim == 1 and th.shape == y.shape, "phases and rates must be 1-d and equal length")
    n = th.size
    _require(n >= 4, "need at least 4 fringe points")

    if sigmas_cps is not None:
        sg = np.asarray(sigmas_cps, dtype=np.float64)
        _require(sg.shape == y.shape, "sigmas must match rates")
        _require(bool(np.all(sg > 0.0)), "sigmas must all be > 0")
        w = 1.0 / sg**2
    else:
        w = np.ones(n)

    x = np.column_stack((np.ones(n), np.cos(th), np.sin(th)))
    xtw = x.T * w
    normal = xtw @ x
    # inv does not reliably raise on an exactly singular matrix, so gate on
    # conditioning instead
    cond = np.linalg.cond(normal)
    if not np.isfinite(cond) or cond > 1e12:
        raise DegenerateFitError("phase grid cannot separate the fringe coefficients")
    cov = np.linalg.inv(normal)
    beta = cov @ (xtw @ y)
    resid = y - x @ beta
    chi2 = float(np.sum(w * resid**2))
    dof = n - 3
    chi2_dof = chi2 / dof if dof > 0 else math.nan
    if sigmas_cps is None:
        # scale covariance by the residual variance estimate
        cov = cov * (chi2 / dof if dof > 0 else 1.0)

    a, bc, bs = float(beta[0]), float(beta[1]), float(beta[2])
    sigma_a = math.sqrt(max(cov[0, 0], 0.0))
    if a <= 0.0 or a < 2.0 * sigma_a:
        raise DegenerateFitError("mean rate is consistent with zero; no fringe to normalize")

    b = math.hypot(bc, bs)
    v = b / a
    if b > 0.0:
        g = np.array([-b / a**2, bc / (b * a), bs / (b * a)])
    else:
        # at the origin of (bc, bs) the worst-case direction is any unit vector
        g = np.array([0.0, 1.0 / a, 0.0])
    v_sigma = float(math.sqrt(max(g @ cov @ g, 0.0)))

    peak, dip = float(y.max()), float(y.min())
    cross = (peak - dip) / (peak + dip) if peak + dip > 0.0 else math.nan

    return FringeFit(
        visibility=v,
        visibility_sigma=v_sigma,
        mean_rate_cps=a,
        mean_rate_sigma_cps=sigma_a,
        phase_offset_rad=math.atan2(-bs, bc),
        chi2_dof=chi2_dof,
        crosscheck_visibility=cross,
        n_points=n,
    )


# ---------------------------------------------------------------------------
# peak fitting

@dataclass(frozen=True)
class GaussianFit:
    fwhm_ps: float
    fwhm_sigma_ps: float
    center_ps: float
    amplitude: float
    baseline: float
    n_bins: int


def fit_gaussian_fwhm(centers_ps: np.ndarray, counts: np.ndarray) -> GaussianFit:
    """Fit a single Gaussian peak over a flat baseline to a histogram.

    Refuses clearly multimodal input: after excluding the main peak's
    neighbourhood, any remaining excursion above 20 percent of the main
    peak height raises MultimodalDataError rather than returning a width
    that describes neither structure.
    """
    x = np.asarray(centers_ps, dtype=np.float64)
    y = np.asarray(counts, dtype=np.float64)
    _require(x.ndim == 1 and x.shape == y.shape, "centers and counts must be 1-d and equal length")
    _require(x.size >= 5, "need at least 5 histogram bins")

    base = float(np.median(y))
    peak_idx = int(np.argmax(y))
    height = float(y[peak_idx]) - base
    if height <= 0.0:
        raise DegenerateFitError("histogram has no peak above its baseline")

    # crude width from the half-height crossing, used for masking and seeding
    above = y - base >= 0.5 * height
    half_bins = int(np.sum(above))
    bin_w = float(np.median(np.diff(x))) if x.size > 1 else 1.0
    fwhm_guess = max(half_bins, 1) * bin_w

    keep_out = np.abs(x - x[peak_idx]) <= 2.0 * fwhm_guess
    rest = y[~keep_out]
    if rest.size and float(rest.max()) - base > 0.2 * height:
        raise MultimodalDataError(
            "secondary structure above 20 percent of the main peak; "
            "refusing a single-peak width")

    def gauss(t, amp, mu, sigma, b0):
        return amp * np.exp(-0.5 * ((t - mu) / sigma) ** 2) + b0

    sigma_guess = fwhm_guess / FWHM_PER_SIGMA
    p0 = (height, float(x[peak_idx]), sigma_guess, max(base, 0.0))
    span = float(x[-1] - x[0]) if x.size > 1 else 1.0
    bounds = ((0.0, float(x[0]), bin_w / 10.0, 0.0),
              (np.inf, float(x[-1]), span, np.inf))
    try:
        popt, pcov = curve_fit(gauss, x, y, p0=p0, bounds=bounds, maxfev=10_000)
    except RuntimeError as exc:
        raise NumericError(f"gaussian fit failed to converge: {exc}") from exc

    sigma = float(popt[2])
    sigma_err = float(math.sqrt(max(pcov[2, 2], 0.0)))
    return GaussianFit(
        fwhm_ps=FWHM_PER_SIGMA * sigma,
        fwhm_sigma_ps=FWHM_PER_SIGMA * sigma_err,
        center_ps=float(popt[1]),
        amplitude=float(popt[0]),
        baseline=float(popt[3]),
        n_bins=x.size,
    )


# ---------------------------------------------------------------------------
# quota-stopped simulation

@dataclass(frozen=True)
class QuotaRun:
    signal: TimestampStream
    idler: TimestampStream
    duration_s: float
    n_slots_simulated: int


def _signal_event_prob(cfg: sim.ChainConfig) -> float:
    """Rough per-slot probability of an emitted signal event, for block sizing."""
    p = cfg.source.mean_pairs_per_pulse * cfg.signal_channel.transmittance
    if cfg.signal_mzi is not None:
        p *= cfg.signal_mzi.insertion_transmittance
    p *= cfg.signal_detector.efficiency
    return p + cfg.signal_channel.dark_prob * cfg.signal_detector.efficiency


def simulate_to_quota(cfg: sim.ChainConfig, quota: int, seed: int,
                      block_slots: int | None = None,
                      max_batches: int = 64) -> QuotaRun:
    """Run the chain in batches until the signal arm has emitted `quota`
    events, then crop both streams at the quota-th signal timestamp.

    The crop time is the effective integration duration, so rates derived
    from the result are quota / duration with plain Poisson statistics.
    Raises QuotaError when max_batches blocks cannot reach the quota.
    """
    _require(quota >= 1, "quota must be >= 1")
    period = sim.clock_slot_period_ps(cfg.source.clock_hz)
    if block_slots is None:
        p = _signal_event_prob(cfg)
        if p > 0.0:
            block_slots = int(quota / p * 1.25) + 1024
        else:
            block_slots = 1 << 24
        block_slots = min(max(block_slots, 1 << 16), 1 << 34)
    # keep batch offsets commensurate with common digitizer coarse periods
    block_slots = ((block_slots + 9) // 10) * 10

    children = np.random.SeedSequence(seed).spawn(max_batches)
    parts_s: list[np.ndarray] = []
    parts_i: list[np.ndarray] = []
    got = 0
    slots_done = 0
    for batch in range(max_batches):
        child_seed = int(children[batch].generate_state(1, np.uint64)[0])
        run = sim.SimRun(seed=child_seed, n_slots=block_slots, slot_period_ps=period)
        res = sim.simulate_chain(cfg, run)
        offset = slots_done * period
        parts_s.append(res.signal.times_ps + offset)
        parts_i.append(res.idler.times_ps + offset)
        got += res.signal.n_events
        slots_done += block_slots
        if got >= quota:
            break
    if got < quota:
        raise QuotaError(
            f"{got} signal events after {max_batches} blocks; quota {quota} unreachable")

    ts = np.concatenate(parts_s)
    ti = np.concatenate(parts_i)
    t_cut = int(ts[quota - 1])
    ts = ts[:quota]
    ti = ti[:np.searchsorted(ti, t_cut, side="right")]
    duration_s = max(t_cut, period) / PS_PER_S
    return QuotaRun(
        signal=TimestampStream(times_ps=ts, channel=0, slot_period_ps=period, seed=seed),
        idler=TimestampStream(times_ps=ti, channel=1, slot_period_ps=period, seed=seed),
        duration_s=duration_s,
        n_slots_simulated=slots_done,
    )


# ---------------------------------------------------------------------------
# fringe scans

@dataclass(frozen=True)
class FringePoint:
    phase_rad: float
    temperature_c: float
    cc_count: int
    acc_count: int
    duration_s: float
    rate_cps: float
    rate_sigma_cps: float


@dataclass(frozen=True)
class FringeScan:
    points: tuple[FringePoint, ...]
    scan_arm: str
    quota: int

    @property
    def phases_rad(self) -> np.ndarray:
        return np.array([p.phase_rad for p in self.points])

    @property
    def temperatures_c(self) -> np.ndarray:
        return np.array([p.temperature_c for p in self.points])

    @property
    def rates_cps(self) -> np.ndarray:
        return np.array([p.rate_cps for p in self.points])

    @property
    def rate_sigmas_cps(self) -> np.ndarray:
        return np.array([p.rate_sigma_cps for p in self.points])

    def fit(self) -> FringeFit:
        return fit_visibility(self.phases_rad, self.rates_cps, self.rate_sigmas_cps)


def _check_phase_density(phases: np.ndarray) -> None:
    span = float(phases.max() - phases.min())
    _require(span > 0.0, "fringe scan needs at least two distinct phases")
    per_period = (phases.size - 1) * 2.0 * math.pi / span
    _require(per_period >= 8.0,
             "fringe scan needs at least 8 points per phase period")


def run_fringe_scan(cfg: sim.ChainConfig, phases_rad: Sequence[float] | None = None,
                    temperatures_c: Sequence[float] | None = None,
                    ref_c: float = 43.40, celsius_per_pi: float = 1.40,
                    quota: int = 262_000, seed: int = 0,
                    scan_arm: str = "signal",
                    accidental_offset_slots: int = 2,
                    threads: int = 1) -> FringeScan:
    """Scan one interferometer's phase and record the coincidence fringe.

    The grid comes either as explicit phases or as heater temperatures,
    which map linearly onto phase (celsius_per_pi degrees per half turn
    around ref_c). Each point is a quota-stopped run with its own child
    seed; the slot-matched coincidence rate and its Poisson error form the
    fringe ordinate.
    """
    _require(cfg.signal_mzi is not None and cfg.idler_mzi is not None,
             "fringe scans need interferometers on both arms")
    _require(scan_arm in ("signal", "idler"), "scan_arm must be 'signal' or 'idler'")
    _require((phases_rad is None) != (temperatures_c is None),
             "give exactly one of phases_rad or temperatures_c")

    if temperatures_c is not None:
        temps = np.asarray(temperatures_c, dtype=np.float64)
        phases = np.array([model.phase_from_temperature(t, ref_c, celsius_per_pi)
                           for t in temps])
    else:
        phases = np.asarray(phases_rad, dtype=np.float64)
        temps = np.full(phases.size, math.nan)
    _check_phase_density(phases)

    children = np.random.SeedSequence(seed).spawn(phases.size)

    def one_point(k: int) -> FringePoint:
        theta = float(phases[k])
        if scan_arm == "signal":
            cfg_k = dataclasses.replace(
                cfg, signal_mzi=dataclasses.replace(cfg.signal_mzi, phase_rad=theta))
        else:
            cfg_k = dataclasses.replace(
                cfg, idler_mzi=dataclasses.replace(cfg.idler_mzi, phase_rad=theta))
        child_seed = int(children[k].generate_state(1, np.uint64)[0])
        qr = simulate_to_quota(cfg_k, quota, child_seed)
        res = count_coincidences(qr.signal, qr.idler, 0, accidental_offset_slots,
                                 duration_s=qr.duration_s)
        sigma = math.sqrt(max(res.cc_count, 1)) / qr.duration_s
        return FringePoint(
            phase_rad=theta, temperature_c=float(temps[k]),
            cc_count=res.cc_count, acc_count=res.acc_count,
            duration_s=qr.duration_s, rate_cps=res.cc_rate_cps,
            rate_sigma_cps=sigma)

    points = _map_indexed(one_point, phases.size, threads)
    return FringeScan(points=tuple(points), scan_arm=scan_arm, quota=quota)


# ---------------------------------------------------------------------------
# CHSH

@dataclass(frozen=True)
class ChshSettings:
    """Analyzer phase sets for a CHSH run.

    The two idler settings sit at -pi/4 and +pi/4 relative to the idler
    base; with a fringe in the phase sum this sign assignment is the one
    that drives |S| to its 2 sqrt(2) V maximum (the opposite assignment
    cancels the four correlations to zero). Half-turn companions of every
    setting stand in for each analyzer's complementary output port.
    """

    signal_base: float = 0.0
    signal_alt: float = math.pi / 2.0
    idler_base: float = -math.pi / 4.0
    idler_alt: float = math.pi / 4.0

    @classmethod
    def from_offsets(cls, theta_s0: float = 0.0, theta_i0: float = 0.0) -> "ChshSettings":
        return cls(signal_base=theta_s0, signal_alt=theta_s0 + math.pi / 2.0,
                   idler_base=theta_i0 - math.pi / 4.0,
                   idler_alt=theta_i0 + math.pi / 4.0)


@dataclass(frozen=True)
class ChshResult:
    s_value: float
    s_sigma: float
    violated: bool
    e_values: tuple[float, float, float, float]
    e_sigmas: tuple[float, float, float, float]
    counts: tuple[tuple[int, int, int, int], ...]   # 4 setting pairs x 4 ports
    quota: int
    mean_duration_s: float


def run_chsh(cfg: sim.ChainConfig, settings: ChshSettings | None = None,
             quota: int = 65_536, seed: int = 0, threads: int = 1) -> ChshResult:
    """Estimate the CHSH statistic from sixteen quota-stopped runs.

    Each of the four setting pairs is measured at its four port
    combinations (each analyzer phase and its half-turn companion), giving
    the counts that feed one correlation value. Quota stopping on the
    phase-independent signal singles makes all sixteen integration windows
    statistically identical, so raw counts are directly comparable.
    """
    _require(cfg.signal_mzi is not None and cfg.idler_mzi is not None,
             "CHSH runs need interferometers on both arms")
    st = settings if settings is not None else ChshSettings()
    pairs = ((st.signal_base, st.idler_base),
             (st.signal_base, st.idler_alt),
             (st.signal_alt, st.idler_base),
             (st.signal_alt, st.idler_alt))
    ports = ((0.0, 0.0), (0.0, math.pi), (math.pi, 0.0), (math.pi, math.pi))

    combos = [(a + da, b + db) for a, b in pairs for da, db in ports]
    children = np.random.SeedSequence(seed).spawn(16)

    def one_run(k: int) -> tuple[int, float]:
        theta_s, theta_i = combos[k]
        cfg_k = dataclasses.replace(
            cfg,
            signal_mzi=dataclasses.replace(cfg.signal_mzi, phase_rad=theta_s),
            idler_mzi=dataclasses.replace(cfg.idler_mzi, phase_rad=theta_i))
        child_seed = int(children[k].generate_state(1, np.uint64)[0])
        qr = simulate_to_quota(cfg_k, quota, child_seed)
        res = count_coincidences(qr.signal, qr.idler, duration_s=qr.duration_s)
        return res.cc_count, qr.duration_s

    results = _map_indexed(one_run, 16, threads)
    durations = [d for _, d in results]
    counts: list[tuple[int, int, int, int]] = []
    e_vals: list[float] = []
    e_sigs: list[float] = []
    for block in range(4):
        four = tuple(results[4 * block + j][0] for j in range(4))
        counts.append(four)
        e, sig = model.chsh_correlation(*four)
        e_vals.append(e)
        e_sigs.append(sig)

    s, s_sigma, violated = model.chsh_s(tuple(e_vals), tuple(e_sigs))
    return ChshResult(
        s_value=s, s_sigma=s_sigma, violated=violated,
        e_values=tuple(e_vals), e_sigmas=tuple(e_sigs),
        counts=tuple(counts), quota=quota,
        mean_duration_s=float(np.mean(durations)),
    )


# ---------------------------------------------------------------------------
# saturation and visibility sweeps

@dataclass(frozen=True)
class SaturationPoint:
    mu: float
    coincidence_prob: float
    coincidence_sigma: float
    model_prob: float


def run_saturation_sweep(mus: Sequence[float], dead_slots: int,
                         n_slots: int, seed: int = 0) -> tuple[SaturationPoint, ...]:
    """Coincidence probability versus pump level under first-order dead-time
    accounting, paired with the closed-form curve mu (1 - mu dead_slots)."""
    children = np.random.SeedSequence(seed).spawn(len(mus))
    out = []
    for k, mu in enumerate(mus):
        rng = np.random.default_rng(children[k])
        q, sigma = sim.deadtime_veto_coincidence(mu, dead_slots, n_slots, rng)
        out.append(SaturationPoint(
            mu=float(mu), coincidence_prob=q, coincidence_sigma=sigma,
            model_prob=model.deadtime_limited_coincidence(mu, dead_slots)))
    return tuple(out)


def predicted_visibility(cfg: sim.ChainConfig, mu: float | None = None) -> float:
    """Closed-form fringe visibility for a chain configuration.

    Combines the two interferometers' joint ceiling, multi-pair dilution at
    the given (or configured) pump level, and per-arm slot leakage from the
    two counters' independent jitters. The shared source emission spread
    moves both photons of a pair together and drops out of slot-matched
    coincidences, so it does not enter.
    """
    _require(cfg.signal_mzi is not None and cfg.idler_mzi is not None,
             "predicted visibility needs interferometers on both arms")
    if mu is None:
        mu = cfg.source.mean_pairs_per_pulse
    period_s = sim.clock_slot_period_ps(cfg.source.clock_hz) / PS_PER_S
    v_joint = math.sqrt(cfg.signal_mzi.interference_visibility
                        * cfg.idler_mzi.interference_visibility)
    p_s, _ = model.slot_capture_probability(cfg.signal_detector.jitter, period_s)
    p_i, _ = model.slot_capture_probability(cfg.idler_detector.jitter, period_s)
    return model.predicted_fringe_visibility(float(mu), v_joint, math.sqrt(p_s * p_i))


@dataclass(frozen=True)
class VisibilityPoint:
    mu: float
    visibility: float
    visibility_sigma: float
    predicted: float


def run_visibility_vs_mu(cfg: sim.ChainConfig, mus: Sequence[float],
                         n_phases: int = 16, quota: int = 100_000,
                         seed: int = 0, threads: int = 1) -> tuple[VisibilityPoint, ...]:
    """Fitted fringe visibility versus pump level against the closed-form
    envelope (interferometer ceiling diluted by multi-pair background and
    per-arm slot leakage).

    Slot leakage uses the two counters' independent jitters; the shared
    source emission spread moves both photons of a pair together and drops
    out of the slot-matched coincidence.
    """
    _require(cfg.signal_mzi is not None and cfg.idler_mzi is not None,
             "visibility sweeps need interferometers on both arms")
    _require(n_phases >= 8, "need at least 8 phases per period")
    phases = np.linspace(0.0, 2.0 * math.pi, n_phases, endpoint=False)
    children = np.random.SeedSequence(seed).spawn(len(mus))
    out = []
    for k, mu in enumerate(mus):
        cfg_mu = dataclasses.replace(
            cfg, source=dataclasses.replace(cfg.source, mean_pairs_per_pulse=float(mu)))
        child_seed = int(children[k].generate_state(1, np.uint64)[0])
        scan = run_fringe_scan(cfg_mu, phases_rad=phases, quota=quota,
                               seed=child_seed, threads=threads)
        fit = scan.fit()
        out.append(VisibilityPoint(
            mu=float(mu), visibility=fit.visibility,
            visibility_sigma=fit.visibility_sigma,
            predicted=predicted_visibility(cfg, float(mu))))
    return tuple(out)


# ---------------------------------------------------------------------------
# CAR sweep

def run_car_sweep(cfg: sim.ChainConfig, mus: Sequence[float], n_slots: int,
                  seed: int = 0, accidental_offset_slots: int = 2,
                  threads: int = 1) -> CarCurve:
    """Coincidence-to-accidental ratio versus pump level in direct detection.

    The interferometers are taken out of the path (ratio measurements do
    not use them); everything else in cfg applies. The estimated-mu column
    unfolds the digitizer dead time from the observed signal singles rate
    and divides out the arm's transmittance and counter efficiency. The
    multi-pixel counter's own dead time is left in place: its sixteen-way
    load sharing keeps that correction small, and the ratio largely cancels
    what remains.
    """
    base = dataclasses.replace(cfg, signal_mzi=None, idler_mzi=None)
    period = sim.clock_slot_period_ps(cfg.source.clock_hz)
    children = np.random.SeedSequence(seed).spawn(len(mus))

    def one_mu(k: int) -> tuple[float, TimestampStream, TimestampStream]:
        mu = float(mus[k])
        cfg_mu = dataclasses.replace(
            base, source=dataclasses.replace(base.source, mean_pairs_per_pulse=mu))
        child_seed = int(children[k].generate_state(1, np.uint64)[0])
        run = sim.SimRun(seed=child_seed, n_slots=n_slots, slot_period_ps=period)
        res = sim.simulate_chain(cfg_mu, run)
        return mu, res.signal, res.idler

    entries = _map_indexed(one_mu, len(mus), threads)

    alpha = cfg.signal_channel.transmittance * cfg.signal_detector.efficiency
    tdc_dead = cfg.signal_tdc.dead if cfg.signal_tdc is not None else None
    clock = cfg.source.clock_hz

    def rate_to_mu(observed_cps: float) -> float:
        true_cps = (model.invert_observed_singles_rate(observed_cps, tdc_dead)
                    if tdc_dead is not None else observed_cps)
        return true_cps / (alpha * clock) if alpha > 0.0 else math.nan

    return car_sweep(entries, accidental_offset_slots, rate_to_mu)
