"""Closed-form models for a pulsed entangled-pair source read out through
lossy channels, delay-line interferometers, and dead-time-limited counters.

Everything here is a pure function of plain parameters: per-pulse
probabilities, count rates in counts per second, visibilities, and CHSH
correlation estimates. The Monte-Carlo chain in `timebin.sim` must agree
with these predictions within statistics; tests enforce that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy.special import lambertw

from .errors import NumericError

SQRT2 = math.sqrt(2.0)
# A fitted fringe above this visibility is inconsistent with any local model.
BELL_VISIBILITY = 1.0 / SQRT2


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


@dataclass(frozen=True)
class SourceParams:
    """Pulsed pair source. mean_pairs_per_pulse is the Poisson mean per clock slot."""

    mean_pairs_per_pulse: float
    clock_hz: float = 5e9
    coherence_pulses: int = 50_000   # pump coherence measured in pulse periods
    pulse_fwhm_s: float = 0.0        # optional emission-time spread inside a slot

    def __post_init__(self) -> None:
        _require(self.mean_pairs_per_pulse >= 0.0, "mean_pairs_per_pulse must be >= 0")
        _require(self.clock_hz > 0.0, "clock_hz must be > 0")
        _require(self.coherence_pulses >= 2, "coherence_pulses must be >= 2")
        _require(self.pulse_fwhm_s >= 0.0, "pulse_fwhm_s must be >= 0")


@dataclass(frozen=True)
class ChannelParams:
    """One collection arm. transmittance is the total per-photon survival
    probability in front of the counter (fiber, filters, and detector
    efficiency folded together when used in rate predictions)."""

    transmittance: float
    dark_prob: float = 0.0           # per-slot dark-candidate probability

    def __post_init__(self) -> None:
        _require(0.0 <= self.transmittance <= 1.0, "transmittance must be in [0, 1]")
        _require(0.0 <= self.dark_prob < 1.0, "dark_prob must be in [0, 1)")


@dataclass(frozen=True)
class MziParams:
    """Unbalanced interferometer with a one-slot arm delay."""

    phase_rad: float = 0.0
    interference_visibility: float = 0.95   # device fringe ceiling
    insertion_transmittance: float = 0.5    # per-photon survival through the device

    def __post_init__(self) -> None:
        _require(0.0 <= self.interference_visibility <= 1.0,
                 "interference_visibility must be in [0, 1]")
        _require(0.0 <= self.insertion_transmittance <= 1.0,
                 "insertion_transmittance must be in [0, 1]")


@dataclass(frozen=True)
class DeadTimeSpec:
    """Dead-time behaviour of a counter or digitizer channel."""

    dead_time_s: float
    mode: str = "nonparalyzable"     # 'paralyzable' or 'nonparalyzable'

    def __post_init__(self) -> None:
        _require(self.dead_time_s >= 0.0, "dead_time_s must be >= 0")
        _require(self.mode in ("paralyzable", "nonparalyzable"),
                 "mode must be 'paralyzable' or 'nonparalyzable'")


@dataclass(frozen=True)
class JitterSpec:
    """Gaussian timing jitter given as full width at half maximum."""

    fwhm_s: float

    def __post_init__(self) -> None:
        _require(self.fwhm_s >= 0.0, "fwhm_s must be >= 0")

    @property
    def sigma_s(self) -> float:
        return self.fwhm_s / (2.0 * math.sqrt(2.0 * math.log(2.0)))


@dataclass(frozen=True)
class RatePrediction:
    """Predicted mean rates for one source/channel configuration."""

    singles_s_cps: float
    singles_i_cps: float
    coincidence_cps: float
    accidental_cps: float
    car: float


def singles_prob(src: SourceParams, ch: ChannelParams) -> float:
    """Per-pulse detection probability on one arm: pair term plus darks."""
    return src.mean_pairs_per_pulse * ch.transmittance + ch.dark_prob


def coincidence_probs(src: SourceParams, ch_s: ChannelParams,
                      ch_i: ChannelParams) -> tuple[float, float]:
    """Per-pulse (coincidence, accidental) probabilities.

    The accidental term is the product of the two singles probabilities;
    the full coincidence adds the correlated-pair term on top of it, so
    coincidence - accidental is exactly the true-pair contribution.
    """
    mu = src.mean_pairs_per_pulse
    acc = singles_prob(src, ch_s) * singles_prob(src, ch_i)
    true_pairs = mu * ch_s.transmittance * ch_i.transmittance
    return true_pairs + acc, acc


def car(src: SourceParams, ch_s: ChannelParams, ch_i: ChannelParams) -> float:
    """Coincidence-to-accidental ratio. Approaches 1/mu + 1 when darks vanish."""
    cc, acc = coincidence_probs(src, ch_s, ch_i)
    if acc == 0.0:
        raise ZeroDivisionError("CAR undefined: no accidentals (mu and darks all zero)")
    return cc / acc


def predict_rates(src: SourceParams, ch_s: ChannelParams,
                  ch_i: ChannelParams) -> RatePrediction:
    """Bundle singles, coincidence, accidental rates (cps) and CAR."""
    cc, acc = coincidence_probs(src, ch_s, ch_i)
    f = src.clock_hz
    return RatePrediction(
        singles_s_cps=singles_prob(src, ch_s) * f,
        singles_i_cps=singles_prob(src, ch_i) * f,
        coincidence_cps=cc * f,
        accidental_cps=acc * f,
        car=cc / acc if acc > 0.0 else math.inf,
    )


def observed_singles_rate(true_rate_cps: float, dead: DeadTimeSpec) -> float:
    """Counter output rate for a Poisson input stream at true_rate_cps.

    Paralyzable counters lose everything arriving within the dead time of
    any prior arrival; nonparalyzable ones only block after a recorded count.
    """
    _require(true_rate_cps >= 0.0, "true_rate_cps must be >= 0")
    x = true_rate_cps * dead.dead_time_s
    if dead.mode == "paralyzable":
        return true_rate_cps * math.exp(-x)
    return true_rate_cps / (1.0 + x)


def invert_observed_singles_rate(observed_cps: float, dead: DeadTimeSpec) -> float:
    """Recover the true input rate from a dead-time-loaded observed rate.

    The paralyzable transfer curve is inverted on its rising branch
    (true rate below 1/dead_time) via the principal Lambert W branch.
    Raises NumericError if the observed rate exceeds the curve's maximum.
    """
    _require(observed_cps >= 0.0, "observed_cps must be >= 0")
    td = dead.dead_time_s
    if td == 0.0 or observed_cps == 0.0:
        return observed_cps
    if dead.mode == "nonparalyzable":
        if observed_cps * td >= 1.0:
            raise NumericError("observed rate at or above the nonparalyzable ceiling 1/dead_time")
        return observed_cps / (1.0 - observed_cps * td)
    # paralyzable: peak output is 1/(e*dead_time), reached at input 1/dead_time
    arg = -observed_cps * td
    if arg < -1.0 / math.e - 1e-12:
        raise NumericError("observed rate above the paralyzable maximum 1/(e*dead_time)")
    # lambertw yields NaN at the floating-point branch point itself, so clamp
    # one ulp inside it
    arg = max(arg, math.nextafter(-1.0 / math.e, 0.0))
    w = lambertw(arg, 0).real
    return -w / td


def deadtime_limited_coincidence(mu: float, dead_slots: float) -> float:
    """First-order coincidence probability per pulse when each detection
    blanks the following dead_slots pulse periods: mu * (1 - mu * dead_slots).

    Valid while the blanked fraction mu * dead_slots stays at or below 1.
    """
    _require(mu >= 0.0, "mu must be >= 0")
    _require(dead_slots >= 0.0, "dead_slots must be >= 0")
    if mu * dead_slots > 1.0:
        raise NumericError("mu * dead_slots > 1: outside the model's domain")
    return mu * (1.0 - mu * dead_slots)


def saturation_peak_mu(dead_slots: float) -> float:
    """Pump level that maximizes the dead-time-limited coincidence curve."""
    _require(dead_slots > 0.0, "dead_slots must be > 0")
    return 1.0 / (2.0 * dead_slots)


def fringe_coincidence(theta_s: float, theta_i: float, visibility: float = 1.0) -> float:
    """Two-photon fringe (1 + V cos(theta_s + theta_i)) / 2.

    Normalized so the average over one full phase period is 1/2.
    """
    _require(0.0 <= visibility <= 1.0, "visibility must be in [0, 1]")
    return 0.5 * (1.0 + visibility * math.cos(theta_s + theta_i))


def visibility_multipair(mu: float) -> float:
    """Fringe visibility ceiling set by multi-pair accidentals: 1 / (1 + 2 mu)."""
    _require(mu >= 0.0, "mu must be >= 0")
    return 1.0 / (1.0 + 2.0 * mu)


def visibility_with_jitter(mu: float, p_in: float) -> float:
    """Visibility when only a fraction p_in of photons land in their own slot:
    p_in^2 / (p_in^2 + 2 mu). Reduces to visibility_multipair at p_in = 1."""
    _require(mu >= 0.0, "mu must be >= 0")
    _require(0.0 < p_in <= 1.0, "p_in must be in (0, 1]")
    return p_in * p_in / (p_in * p_in + 2.0 * mu)


def slot_capture_probability(jitter: JitterSpec, slot_period_s: float) -> tuple[float, float]:
    """Probability that a slot-centered arrival smeared by Gaussian jitter is
    recorded inside its own slot, and the complement that leaks to neighbours."""
    _require(slot_period_s > 0.0, "slot_period_s must be > 0")
    sigma = jitter.sigma_s
    if sigma == 0.0:
        return 1.0, 0.0
    p_in = math.erf(slot_period_s / (2.0 * SQRT2 * sigma))
    return p_in, 1.0 - p_in


def predicted_fringe_visibility(mu: float, mzi_visibility: float = 0.95,
                                p_in: float = 1.0) -> float:
    """Fringe visibility expected from the full chain: the interferometer
    ceiling scaled by multi-pair and slot-leakage dilution."""
    return mzi_visibility * visibility_with_jitter(mu, p_in)


def bell_threshold_mu(mzi_visibility: float = 0.95) -> float:
    """Largest mu whose predicted visibility still beats the Bell bound 1/sqrt(2)."""
    _require(0.0 < mzi_visibility <= 1.0, "mzi_visibility must be in (0, 1]")
    if mzi_visibility <= BELL_VISIBILITY:
        raise NumericError("interferometer visibility never exceeds the Bell bound")
    # solve mzi_visibility / (1 + 2 mu) = 1/sqrt(2)
    return (mzi_visibility * SQRT2 - 1.0) / 2.0


def chsh_correlation(n1: float, n2: float, n3: float,
                     n4: float) -> tuple[float, float]:
    """Correlation E and its Poisson uncertainty from the four counts taken at
    a base setting pair and its half-period companions.

    E = (n1 - n2 - n3 + n4) / (n1 + n2 + n3 + n4); the uncertainty follows
    first-order propagation of independent Poisson errors on each count.
    """
    for n in (n1, n2, n3, n4):
        _require(n >= 0.0, "counts must be >= 0")
    total = n1 + n2 + n3 + n4
    if total <= 0.0:
        raise NumericError("correlation undefined on all-zero counts")
    diff = n1 - n2 - n3 + n4
    e = diff / total
    d_outer = (total - diff) / total**2     # dE/dn1 = dE/dn4
    d_inner = -(total + diff) / total**2    # dE/dn2 = dE/dn3
    var = d_outer**2 * (n1 + n4) + d_inner**2 * (n2 + n3)
    return e, math.sqrt(var)


def chsh_s(e_values: tuple[float, float, float, float],
           e_sigmas: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0),
           ) -> tuple[float, float, bool]:
    """CHSH statistic S = E1 + E2 + E3 - E4 with propagated uncertainty.

    The violation flag is true only for S strictly above the classical
    bound of 2.
    """
    for e in e_values:
        _require(-1.0 <= e <= 1.0, "each correlation must be in [-1, 1]")
    s = e_values[0] + e_values[1] + e_values[2] - e_values[3]
    sigma = math.sqrt(sum(x * x for x in e_sigmas))
    return s, sigma, s > 2.0


def phase_from_temperature(temp_c: float, ref_c: float, celsius_per_pi: float) -> float:
    """Interferometer phase set by a thermo-optic heater, linear in temperature
    with celsius_per_pi degrees per half turn; ref_c is the zero-phase point."""
    _require(celsius_per_pi != 0.0, "celsius_per_pi must be nonzero")
    return math.pi * (temp_c - ref_c) / celsius_per_pi


def temperature_from_phase(phase_rad: float, ref_c: float, celsius_per_pi: float) -> float:
    """Inverse of phase_from_temperature."""
    _require(celsius_per_pi != 0.0, "celsius_per_pi must be nonzero")
    return ref_c + phase_rad * celsius_per_pi / math.pi
