"""Simulation and analysis of time-tagged entangled photon pair experiments.

The package splits into closed-form predictions (`timebin.model`), the
Monte-Carlo detection chain (`timebin.sim`), timestamp analysis
(`timebin.coincidence`), measurement drivers (`timebin.experiments`),
stream files (`timebin.streamfile`) and INI configuration
(`timebin.config`). The most commonly used names are re-exported here.
"""

__version__ = "0.1.0"

from .coincidence import (CarCurve, CarPoint, CoincidenceResult,
                          DelayHistogram, TimestampStream, car_sweep,
                          count_coincidences, delay_histogram, slot_assign)
from .config import (ExperimentParams, RunConfig, default_config, echo_config,
                     load_config, parse_config)
from .errors import (ClockMismatchError, ConfigError, DegenerateFitError,
                     MultimodalDataError, NumericError, QuotaError,
                     SaturationWarning, StreamFormatError, TimebinError)
from .experiments import (ChshResult, ChshSettings, FringeFit, FringePoint,
                          FringeScan, GaussianFit, QuotaRun, SaturationPoint,
                          VisibilityPoint, fit_gaussian_fwhm, fit_visibility,
                          predicted_visibility, run_car_sweep, run_chsh,
                          run_fringe_scan, run_saturation_sweep,
                          run_visibility_vs_mu, simulate_to_quota)
from .model import (BELL_VISIBILITY, ChannelParams, DeadTimeSpec, JitterSpec,
                    MziParams, RatePrediction, SourceParams, bell_threshold_mu,
                    car, chsh_correlation, chsh_s, coincidence_probs,
                    deadtime_limited_coincidence, fringe_coincidence,
                    invert_observed_singles_rate, observed_singles_rate,
                    phase_from_temperature, predict_rates,
                    predicted_fringe_visibility, saturation_peak_mu,
                    singles_prob, slot_capture_probability,
                    temperature_from_phase, visibility_multipair,
                    visibility_with_jitter)
from .sim import (ChainConfig, ChainResult, ChannelStats, DetectorParams,
                  SimRun, TdcParams, clock_slot_period_ps,
                  deadtime_veto_coincidence, sawtooth_tap_widths,
                  simulate_chain, tdc_digitize)
from .streamfile import iter_stream, read_stream, write_stream

__all__ = [
    "__version__",
    # errors
    "TimebinError", "ConfigError", "StreamFormatError", "ClockMismatchError",
    "NumericError", "DegenerateFitError", "MultimodalDataError", "QuotaError",
    "SaturationWarning",
    # model
    "BELL_VISIBILITY", "SourceParams", "ChannelParams", "MziParams",
    "DeadTimeSpec", "JitterSpec", "RatePrediction", "singles_prob",
    "coincidence_probs", "car", "predict_rates", "observed_singles_rate",
    "invert_observed_singles_rate", "deadtime_limited_coincidence",
    "saturation_peak_mu", "fringe_coincidence", "visibility_multipair",
    "visibility_with_jitter", "slot_capture_probability",
    "predicted_fringe_visibility", "bell_threshold_mu", "chsh_correlation",
    "chsh_s", "phase_from_temperature", "temperature_from_phase",
    # sim
    "DetectorParams", "TdcParams", "SimRun", "ChainConfig", "ChainResult",
    "ChannelStats", "clock_slot_period_ps", "sawtooth_tap_widths",
    "simulate_chain", "tdc_digitize", "deadtime_veto_coincidence",
    # coincidence
    "TimestampStream", "CoincidenceResult", "DelayHistogram", "CarPoint",
    "CarCurve", "slot_assign", "count_coincidences", "delay_histogram",
    "car_sweep",
    # experiments
    "FringeFit", "FringePoint", "FringeScan", "GaussianFit", "QuotaRun",
    "ChshSettings", "ChshResult", "SaturationPoint", "VisibilityPoint",
    "fit_visibility", "fit_gaussian_fwhm", "simulate_to_quota",
    "run_fringe_scan", "run_chsh", "run_car_sweep", "run_saturation_sweep",
    "run_visibility_vs_mu", "predicted_visibility",
    # stream files
    "read_stream", "write_stream", "iter_stream",
    # config
    "RunConfig", "ExperimentParams", "load_config", "parse_config",
    "default_config", "echo_config",
]
