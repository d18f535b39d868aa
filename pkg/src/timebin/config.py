"""INI configuration for simulation runs.

Every key is optional and falls back to the reference setup: a 5 GHz
clocked pair source at mu = 0.001 feeding 0.447-transmittance arms,
0.95-visibility delay interferometers, 16-pixel counters (67 percent
efficiency, 50 ns pixel dead time, 30 ps jitter, 400 ps merge window) and
512-tap digitizers on a 500 MHz coarse clock. Unknown sections or keys are
rejected rather than ignored; values are validated with the section.key
name in the message.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

from . import sim
from .errors import ConfigError
from .model import ChannelParams, DeadTimeSpec, JitterSpec, MziParams, SourceParams

_BOOL = {"1": True, "true": True, "yes": True, "on": True,
         "0": False, "false": False, "no": False, "off": False}


def _parse_bool(raw: str) -> bool:
    try:
        return _BOOL[raw.strip().lower()]
    except KeyError:
        raise ValueError(f"not a boolean: {raw!r}")


def _parse_float_list(raw: str) -> tuple[float, ...]:
    parts = [p for p in raw.replace(",", " ").split() if p]
    if not parts:
        raise ValueError("empty list")
    return tuple(float(p) for p in parts)


# section -> key -> (parser, default)
_SCHEMA: dict[str, dict[str, tuple]] = {
    "source": {
        "mean_pairs_per_pulse": (float, 0.001),
        "clock_hz": (float, 5e9),
        "coherence_pulses": (int, 50_000),
        "pulse_fwhm_s": (float, 0.0),
    },
    "signal_channel": {
        "transmittance": (float, 0.447),
        "dark_prob": (float, 0.0),
    },
    "idler_channel": {
        "transmittance": (float, 0.447),
        "dark_prob": (float, 0.0),
    },
    "signal_mzi": {
        "enabled": (_parse_bool, True),
        "phase_rad": (float, 0.0),
        "interference_visibility": (float, 0.95),
        "insertion_transmittance": (float, 0.5),
    },
    "idler_mzi": {
        "enabled": (_parse_bool, True),
        "phase_rad": (float, 0.0),
        "interference_visibility": (float, 0.95),
        "insertion_transmittance": (float, 0.5),
    },
    "signal_detector": {
        "pixel_count": (int, 16),
        "efficiency": (float, 0.67),
        "dead_time_s": (float, 50e-9),
        "dead_time_mode": (str, "nonparalyzable"),
        "jitter_fwhm_s": (float, 30e-12),
        "merge_window_s": (float, 400e-12),
    },
    "idler_detector": {
        "pixel_count": (int, 16),
        "efficiency": (float, 0.67),
        "dead_time_s": (float, 50e-9),
        "dead_time_mode": (str, "nonparalyzable"),
        "jitter_fwhm_s": (float, 30e-12),
        "merge_window_s": (float, 400e-12),
    },
    "signal_tdc": {
        "enabled": (_parse_bool, True),
        "tap_count": (int, 512),
        "coarse_clock_hz": (float, 500e6),
        "dead_time_s": (float, 2e-9),
        "dead_time_mode": (str, "paralyzable"),
        "max_rate_cps": (float, 500e6),
        "dnl_sawtooth_amplitude": (float, 0.0),
    },
    "idler_tdc": {
        "enabled": (_parse_bool, True),
        "tap_count": (int, 512),
        "coarse_clock_hz": (float, 500e6),
        "dead_time_s": (float, 2e-9),
        "dead_time_mode": (str, "paralyzable"),
        "max_rate_cps": (float, 500e6),
        "dnl_sawtooth_amplitude": (float, 0.0),
    },
    "run": {
        "seed": (int, 0),
        "n_slots": (int, 500_000_000),
    },
    "experiment": {
        "temp_start_c": (float, 43.0),
        "temp_stop_c": (float, 46.0),
        "temp_points": (int, 31),
        "ref_c": (float, 43.40),
        "celsius_per_pi": (float, 1.40),
        "quota": (int, 262_000),
        "chsh_quota": (int, 65_536),
        "accidental_offset_slots": (int, 2),
        "mus": (_parse_float_list, (0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1)),
        "dead_slots": (int, 5),
        "bin_width_ps": (int, 2),
        "hist_range_ps": (int, 2000),
    },
}


@dataclass(frozen=True)
class ExperimentParams:
    temp_start_c: float = 43.0
    temp_stop_c: float = 46.0
    temp_points: int = 31
    ref_c: float = 43.40
    celsius_per_pi: float = 1.40
    quota: int = 262_000
    chsh_quota: int = 65_536
    accidental_offset_slots: int = 2
    mus: tuple[float, ...] = (0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1)
    dead_slots: int = 5
    bin_width_ps: int = 2
    hist_range_ps: int = 2000

    def temperatures(self) -> tuple[float, ...]:
        n = self.temp_points
        if n == 1:
            return (self.temp_start_c,)
        step = (self.temp_stop_c - self.temp_start_c) / (n - 1)
        return tuple(self.temp_start_c + k * step for k in range(n))


@dataclass(frozen=True)
class RunConfig:
    chain: sim.ChainConfig
    seed: int = 0
    n_slots: int = 500_000_000
    signal_tdc_dnl: float = 0.0
    idler_tdc_dnl: float = 0.0
    experiment: ExperimentParams = field(default_factory=ExperimentParams)


def _read_ini(text: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, strict=True)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        # configparser reports offending line numbers in its message
        raise ConfigError(f"config parse error: {exc}") from exc
    return cp


def _collect(cp: configparser.ConfigParser) -> dict[str, dict[str, object]]:
    values: dict[str, dict[str, object]] = {
        sec: {k: d for k, (_, d) in keys.items()} for sec, keys in _SCHEMA.items()
    }
    for sec in cp.sections():
        if sec not in _SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        for key, raw in cp[sec].items():
            if key not in _SCHEMA[sec]:
                raise ConfigError(f"unknown key {sec}.{key}")
            parser = _SCHEMA[sec][key][0]
            try:
                values[sec][key] = parser(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {sec}.{key}: {exc}") from exc
    return values


def _build(values: dict[str, dict[str, object]]) -> RunConfig:
    def sec(name: str, build):
        # defer construction so nested ctor errors also carry the section name
        try:
            return build()
        except ValueError as exc:
            raise ConfigError(f"[{name}] {exc}") from exc

    v = values
    source = sec("source", lambda: SourceParams(
        mean_pairs_per_pulse=v["source"]["mean_pairs_per_pulse"],
        clock_hz=v["source"]["clock_hz"],
        coherence_pulses=v["source"]["coherence_pulses"],
        pulse_fwhm_s=v["source"]["pulse_fwhm_s"]))

    channels = {}
    for name in ("signal_channel", "idler_channel"):
        channels[name] = sec(name, lambda name=name: ChannelParams(
            transmittance=v[name]["transmittance"],
            dark_prob=v[name]["dark_prob"]))

    mzis = {}
    for name in ("signal_mzi", "idler_mzi"):
        if v[name]["enabled"]:
            mzis[name] = sec(name, lambda name=name: MziParams(
                phase_rad=v[name]["phase_rad"],
                interference_visibility=v[name]["interference_visibility"],
                insertion_transmittance=v[name]["insertion_transmittance"]))
        else:
            mzis[name] = None

    detectors = {}
    for name in ("signal_detector", "idler_detector"):
        detectors[name] = sec(name, lambda name=name: sim.DetectorParams(
            pixel_count=v[name]["pixel_count"],
            efficiency=v[name]["efficiency"],
            dead=DeadTimeSpec(v[name]["dead_time_s"], v[name]["dead_time_mode"]),
            jitter=JitterSpec(v[name]["jitter_fwhm_s"]),
            merge_window_s=v[name]["merge_window_s"]))

    tdcs = {}
    dnls = {}
    for name in ("signal_tdc", "idler_tdc"):
        dnls[name] = float(v[name]["dnl_sawtooth_amplitude"])
        if not v[name]["enabled"]:
            tdcs[name] = None
            continue

        def build_tdc(name=name):
            coarse_hz = v[name]["coarse_clock_hz"]
            if coarse_hz <= 0.0:
                raise ValueError("coarse_clock_hz must be > 0")
            widths = None
            if dnls[name] != 0.0:
                widths = sim.sawtooth_tap_widths(v[name]["tap_count"], dnls[name],
                                                 1e12 / coarse_hz)
            return sim.TdcParams(
                tap_count=v[name]["tap_count"],
                coarse_clock_hz=coarse_hz,
                dead=DeadTimeSpec(v[name]["dead_time_s"], v[name]["dead_time_mode"]),
                max_rate_cps=v[name]["max_rate_cps"],
                tap_widths=widths)

        tdcs[name] = sec(name, build_tdc)

    chain = sec("run", lambda: sim.ChainConfig(
        source=source,
        signal_channel=channels["signal_channel"],
        idler_channel=channels["idler_channel"],
        signal_detector=detectors["signal_detector"],
        idler_detector=detectors["idler_detector"],
        signal_mzi=mzis["signal_mzi"],
        idler_mzi=mzis["idler_mzi"],
        signal_tdc=tdcs["signal_tdc"],
        idler_tdc=tdcs["idler_tdc"]))

    run_sec = v["run"]
    if run_sec["seed"] < 0:
        raise ConfigError("[run] seed must be >= 0")
    if run_sec["n_slots"] < 1:
        raise ConfigError("[run] n_slots must be >= 1")

    e = v["experiment"]
    exp = ExperimentParams(
        temp_start_c=e["temp_start_c"], temp_stop_c=e["temp_stop_c"],
        temp_points=e["temp_points"], ref_c=e["ref_c"],
        celsius_per_pi=e["celsius_per_pi"], quota=e["quota"],
        chsh_quota=e["chsh_quota"],
        accidental_offset_slots=e["accidental_offset_slots"],
        mus=tuple(e["mus"]), dead_slots=e["dead_slots"],
        bin_width_ps=e["bin_width_ps"], hist_range_ps=e["hist_range_ps"])
    for fname in ("temp_points", "quota", "chsh_quota", "bin_width_ps",
                  "hist_range_ps"):
        if getattr(exp, fname) < 1:
            raise ConfigError(f"[experiment] {fname} must be >= 1")
    if exp.dead_slots < 0:
        raise ConfigError("[experiment] dead_slots must be >= 0")
    if exp.celsius_per_pi == 0.0:
        raise ConfigError("[experiment] celsius_per_pi must be nonzero")
    if any(not math.isfinite(m) or m < 0.0 for m in exp.mus):
        raise ConfigError("[experiment] mus must be finite and >= 0")

    return RunConfig(chain=chain, seed=run_sec["seed"], n_slots=run_sec["n_slots"],
                     signal_tdc_dnl=dnls["signal_tdc"], idler_tdc_dnl=dnls["idler_tdc"],
                     experiment=exp)


def parse_config(text: str) -> RunConfig:
    """Parse INI text into a validated RunConfig."""
    return _build(_collect(_read_ini(text)))


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def default_config() -> RunConfig:
    return parse_config("")


def _fmt(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(repr(float(x)) for x in value)
    return str(value)


def echo_config(rc: RunConfig) -> str:
    """Render a RunConfig back to INI with every effective value explicit.

    parse_config(echo_config(x)) reproduces x, which makes the echo a
    complete record of what a run actually used.
    """
    ch = rc.chain

    def mzi_sec(m: MziParams | None) -> dict[str, object]:
        if m is None:
            return {"enabled": False}
        return {"enabled": True, "phase_rad": m.phase_rad,
                "interference_visibility": m.interference_visibility,
                "insertion_transmittance": m.insertion_transmittance}

    def det_sec(d: sim.DetectorParams) -> dict[str, object]:
        return {"pixel_count": d.pixel_count, "efficiency": d.efficiency,
                "dead_time_s": d.dead.dead_time_s, "dead_time_mode": d.dead.mode,
                "jitter_fwhm_s": d.jitter.fwhm_s, "merge_window_s": d.merge_window_s}

    def tdc_sec(t: sim.TdcParams | None, dnl: float) -> dict[str, object]:
        if t is None:
            return {"enabled": False}
        return {"enabled": True, "tap_count": t.tap_count,
                "coarse_clock_hz": t.coarse_clock_hz,
                "dead_time_s": t.dead.dead_time_s, "dead_time_mode": t.dead.mode,
                "max_rate_cps": t.max_rate_cps, "dnl_sawtooth_amplitude": dnl}

    e = rc.experiment
    sections: dict[str, dict[str, object]] = {
        "source": {"mean_pairs_per_pulse": ch.source.mean_pairs_per_pulse,
                   "clock_hz": ch.source.clock_hz,
                   "coherence_pulses": ch.source.coherence_pulses,
                   "pulse_fwhm_s": ch.source.pulse_fwhm_s},
        "signal_channel": {"transmittance": ch.signal_channel.transmittance,
                           "dark_prob": ch.signal_channel.dark_prob},
        "idler_channel": {"transmittance": ch.idler_channel.transmittance,
                          "dark_prob": ch.idler_channel.dark_prob},
        "signal_mzi": mzi_sec(ch.signal_mzi),
        "idler_mzi": mzi_sec(ch.idler_mzi),
        "signal_detector": det_sec(ch.signal_detector),
        "idler_detector": det_sec(ch.idler_detector),
        "signal_tdc": tdc_sec(ch.signal_tdc, rc.signal_tdc_dnl),
        "idler_tdc": tdc_sec(ch.idler_tdc, rc.idler_tdc_dnl),
        "run": {"seed": rc.seed, "n_slots": rc.n_slots},
        "experiment": {f.name: getattr(e, f.name) for f in dataclasses.fields(e)},
    }
    lines = []
    for sec, keys in sections.items():
        lines.append(f"[{sec}]")
        for key, value in keys.items():
            lines.append(f"{key} = {_fmt(value)}")
        lines.append("")
    return "\n".join(lines)
