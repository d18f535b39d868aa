"""Command line front end.

Each subcommand runs one simulation or analysis job and writes its results
under --out: CSV tables with unit-bearing column names, a summary.json
with the headline numbers, and (for configured runs) config_echo.ini
recording every effective parameter. Exit codes: 0 success, 2 bad
configuration or arguments, 3 input/output failure, 4 numeric failure,
5 finished but a rate limit was exceeded along the way.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import experiments, model, sim
from .config import RunConfig, default_config, echo_config, load_config
from .coincidence import count_coincidences, delay_histogram
from .errors import (EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_OK,
                     EXIT_SATURATION, ClockMismatchError, ConfigError,
                     NumericError, SaturationWarning, StreamFormatError)
from .streamfile import read_stream, write_stream


def _load_rc(args: argparse.Namespace) -> RunConfig:
    rc = load_config(args.config) if args.config else default_config()
    if getattr(args, "seed", None) is not None:
        rc = dataclasses.replace(rc, seed=args.seed)
    if getattr(args, "slots", None) is not None:
        rc = dataclasses.replace(rc, n_slots=args.slots)
    if getattr(args, "quota", None) is not None:
        exp = dataclasses.replace(rc.experiment, quota=args.quota,
                                  chsh_quota=args.quota)
        rc = dataclasses.replace(rc, experiment=exp)
    return rc


def _outdir(args: argparse.Namespace) -> Path:
    out = args.out if args.out is not None else Path(f"timebin-{args.command}")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_csv(path: Path, header: list[str], rows: list) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)
    print(f"wrote {path}")


def _write_summary(out: Path, payload: dict) -> None:
    path = out / "summary.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"wrote {path}")


def _write_echo(out: Path, rc: RunConfig) -> None:
    path = out / "config_echo.ini"
    path.write_text(echo_config(rc))
    print(f"wrote {path}")


# ---------------------------------------------------------------------------
# subcommands

def cmd_simulate(args: argparse.Namespace) -> None:
    rc = _load_rc(args)
    out = _outdir(args)
    period = sim.clock_slot_period_ps(rc.chain.source.clock_hz)
    run = sim.SimRun(seed=rc.seed, n_slots=rc.n_slots, slot_period_ps=period)
    res = sim.simulate_chain(rc.chain, run)
    write_stream(out / "signal.pts", res.signal)
    write_stream(out / "idler.pts", res.idler)
    duration_s = rc.n_slots * period / 1e12
    summary = {
        "command": "simulate",
        "seed": rc.seed,
        "n_slots": rc.n_slots,
        "slot_period_ps": period,
        "duration_s": duration_s,
        "n_pairs_generated": res.n_pairs,
        "signal": dataclasses.asdict(res.signal_stats),
        "idler": dataclasses.asdict(res.idler_stats),
        "signal_rate_cps": res.signal.n_events / duration_s,
        "idler_rate_cps": res.idler.n_events / duration_s,
    }
    _write_echo(out, rc)
    _write_summary(out, summary)
    print(f"simulated {rc.n_slots} slots ({duration_s:.6g} s): "
          f"{res.signal.n_events} signal and {res.idler.n_events} idler events")


def cmd_analyze(args: argparse.Namespace) -> None:
    s = read_stream(args.signal)
    i = read_stream(args.idler)
    out = _outdir(args)
    res = count_coincidences(s, i, args.offset, args.accidental_offset)
    hist = delay_histogram(s, i, bin_width_ps=args.bin_width_ps,
                           range_ps=args.range_ps, mode="cross")
    _write_csv(out / "histogram.csv", ["delay_ps", "counts"],
               [(int(c), int(n)) for c, n in zip(hist.bin_centers_ps, hist.counts)])
    summary = {
        "command": "analyze",
        "signal_events": s.n_events,
        "idler_events": i.n_events,
        "duration_s": res.duration_s,
        "cc_count": res.cc_count,
        "acc_count": res.acc_count,
        "cc_rate_cps": res.cc_rate_cps,
        "acc_rate_cps": res.acc_rate_cps,
        "car": res.car,
        "car_sigma": res.car_sigma,
        "histogram_out_of_range": hist.out_of_range,
    }
    _write_summary(out, summary)
    print(f"coincidences {res.cc_count} ({res.cc_rate_cps:.6g} cps), "
          f"accidentals {res.acc_count}, CAR {res.car:.4g} +- {res.car_sigma:.2g}")


def cmd_fringe(args: argparse.Namespace) -> None:
    rc = _load_rc(args)
    out = _outdir(args)
    e = rc.experiment
    scan = experiments.run_fringe_scan(
        rc.chain, temperatures_c=e.temperatures(), ref_c=e.ref_c,
        celsius_per_pi=e.celsius_per_pi, quota=e.quota, seed=rc.seed,
        accidental_offset_slots=e.accidental_offset_slots, threads=args.threads)
    _write_echo(out, rc)
    _write_csv(out / "fringe.csv",
               ["temperature_c", "phase_rad", "duration_s", "cc_count",
                "acc_count", "rate_cps", "rate_sigma_cps"],
               [(p.temperature_c, p.phase_rad, p.duration_s, p.cc_count,
                 p.acc_count, p.rate_cps, p.rate_sigma_cps) for p in scan.points])
    fit = scan.fit()
    predicted = experiments.predicted_visibility(rc.chain)
    summary = {
        "command": "fringe",
        "quota": e.quota,
        "n_points": fit.n_points,
        "visibility": fit.visibility,
        "visibility_sigma": fit.visibility_sigma,
        "predicted_visibility": predicted,
        "crosscheck_visibility": fit.crosscheck_visibility,
        "mean_rate_cps": fit.mean_rate_cps,
        "phase_offset_rad": fit.phase_offset_rad,
        "chi2_dof": fit.chi2_dof,
        "bell_bound": model.BELL_VISIBILITY,
    }
    _write_summary(out, summary)
    print(f"visibility {fit.visibility:.4f} +- {fit.visibility_sigma:.4f} "
          f"(predicted {predicted:.4f}, chi2/dof {fit.chi2_dof:.2f})")


def cmd_chsh(args: argparse.Namespace) -> None:
    rc = _load_rc(args)
    out = _outdir(args)
    e = rc.experiment
    settings = experiments.ChshSettings()
    res = experiments.run_chsh(rc.chain, settings, quota=e.chsh_quota,
                               seed=rc.seed, threads=args.threads)
    pairs = ((settings.signal_base, settings.idler_base),
             (settings.signal_base, settings.idler_alt),
             (settings.signal_alt, settings.idler_base),
             (settings.signal_alt, settings.idler_alt))
    rows = []
    for k, (a, b) in enumerate(pairs):
        n1, n2, n3, n4 = res.counts[k]
        rows.append((a, b, n1, n2, n3, n4, res.e_values[k], res.e_sigmas[k]))
    _write_echo(out, rc)
    _write_csv(out / "chsh.csv",
               ["signal_phase_rad", "idler_phase_rad", "count_00", "count_0pi",
                "count_pi0", "count_pipi", "e_value", "e_sigma"], rows)
    predicted = 2.0 * model.SQRT2 * experiments.predicted_visibility(rc.chain)
    summary = {
        "command": "chsh",
        "quota": e.chsh_quota,
        "s_value": res.s_value,
        "s_sigma": res.s_sigma,
        "violated": res.violated,
        "predicted_s": predicted,
        "e_values": list(res.e_values),
        "e_sigmas": list(res.e_sigmas),
        "mean_duration_s": res.mean_duration_s,
    }
    _write_summary(out, summary)
    verdict = "violates the classical bound" if res.violated else "no violation"
    print(f"S = {res.s_value:.4f} +- {res.s_sigma:.4f} "
          f"(predicted {predicted:.4f}); {verdict}")


def cmd_car_sweep(args: argparse.Namespace) -> None:
    rc = _load_rc(args)
    out = _outdir(args)
    e = rc.experiment
    curve = experiments.run_car_sweep(
        rc.chain, e.mus, n_slots=rc.n_slots, seed=rc.seed,
        accidental_offset_slots=e.accidental_offset_slots, threads=args.threads)
    _write_echo(out, rc)
    _write_csv(out / "car.csv",
               ["mu", "estimated_mu", "cc_rate_cps", "acc_rate_cps",
                "car", "car_sigma", "model_car"],
               [(p.mu, p.estimated_mu, p.cc_rate_cps, p.acc_rate_cps,
                 p.car, p.car_sigma, p.model_car) for p in curve.points])
    summary = {
        "command": "car-sweep",
        "n_slots": rc.n_slots,
        "points": [dataclasses.asdict(p) for p in curve.points],
    }
    _write_summary(out, summary)
    for p in curve.points:
        print(f"mu {p.mu:<8g} CAR {p.car:8.3f} +- {p.car_sigma:<8.3f} "
              f"(model {p.model_car:.3f}, estimated mu {p.estimated_mu:.4g})")


def cmd_saturation(args: argparse.Namespace) -> None:
    rc = _load_rc(args)
    out = _outdir(args)
    e = rc.experiment
    points = experiments.run_saturation_sweep(e.mus, e.dead_slots,
                                              n_slots=rc.n_slots, seed=rc.seed)
    _write_echo(out, rc)
    _write_csv(out / "saturation.csv",
               ["mu", "coincidence_prob", "coincidence_sigma", "model_prob"],
               [(p.mu, p.coincidence_prob, p.coincidence_sigma, p.model_prob)
                for p in points])
    summary = {
        "command": "saturation",
        "dead_slots": e.dead_slots,
        "n_slots": rc.n_slots,
        "peak_mu": (model.saturation_peak_mu(e.dead_slots)
                    if e.dead_slots > 0 else math.inf),
        "points": [dataclasses.asdict(p) for p in points],
    }
    _write_summary(out, summary)
    for p in points:
        print(f"mu {p.mu:<8g} q {p.coincidence_prob:.6g} +- {p.coincidence_sigma:.2g} "
              f"(model {p.model_prob:.6g})")


def cmd_visibility_sweep(args: argparse.Namespace) -> None:
    rc = _load_rc(args)
    out = _outdir(args)
    e = rc.experiment
    points = experiments.run_visibility_vs_mu(
        rc.chain, e.mus, quota=e.quota, seed=rc.seed, threads=args.threads)
    _write_echo(out, rc)
    _write_csv(out / "visibility.csv",
               ["mu", "visibility", "visibility_sigma", "predicted"],
               [(p.mu, p.visibility, p.visibility_sigma, p.predicted)
                for p in points])
    summary = {
        "command": "visibility-sweep",
        "quota": e.quota,
        "bell_bound": model.BELL_VISIBILITY,
        "points": [dataclasses.asdict(p) for p in points],
    }
    _write_summary(out, summary)
    for p in points:
        print(f"mu {p.mu:<8g} V {p.visibility:.4f} +- {p.visibility_sigma:.4f} "
              f"(predicted {p.predicted:.4f})")


def cmd_tdc_calibrate(args: argparse.Namespace) -> None:
    rc = _load_rc(args)
    out = _outdir(args)
    tdc = rc.chain.signal_tdc
    if tdc is None:
        raise ConfigError("tdc-calibrate needs signal_tdc enabled")
    rng = np.random.default_rng(rc.seed)
    # uniform arrivals at 100 Mcps give a flat phase over the coarse period
    span_ps = args.events * 10_000.0
    t = np.sort(rng.uniform(0.0, span_ps, args.events))
    dig = sim.tdc_digitize(t, tdc)
    counts = np.bincount(dig.codes, minlength=tdc.tap_count)
    total = int(counts.sum())
    if total == 0:
        raise NumericError("no digitized events to calibrate on")
    period = tdc.coarse_period_ps
    width_est = counts / total * period
    width_true = tdc.widths_ps()
    nominal = period / tdc.tap_count
    rows = [(k, int(counts[k]), width_est[k], width_true[k],
             width_est[k] / nominal - 1.0, width_true[k] / nominal - 1.0)
            for k in range(tdc.tap_count)]
    _write_echo(out, rc)
    _write_csv(out / "tdc_taps.csv",
               ["tap", "count", "width_est_ps", "width_true_ps",
                "dnl_est", "dnl_true"], rows)
    rel_err = np.abs(width_est - width_true) / width_true
    summary = {
        "command": "tdc-calibrate",
        "events_in": args.events,
        "events_digitized": total,
        "tap_count": tdc.tap_count,
        "worst_rel_width_error": float(rel_err.max()),
        "rms_rel_width_error": float(np.sqrt(np.mean(rel_err**2))),
    }
    _write_summary(out, summary)
    print(f"recovered {tdc.tap_count} tap widths from {total} events; "
          f"worst relative error {float(rel_err.max()):.3%}")


def cmd_bench(args: argparse.Namespace) -> None:
    out = _outdir(args)
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    n = args.events
    period = 200

    def make(ch: int):
        slots = rng.integers(0, 5 * n, n, dtype=np.int64)
        slots.sort()
        from .coincidence import TimestampStream
        return TimestampStream(times_ps=slots * period + period // 2,
                               channel=ch, slot_period_ps=period)

    s, i = make(0), make(1)
    # warm the compiled kernels before timing
    count_coincidences(
        dataclasses.replace(s, times_ps=s.times_ps[:1000]),
        dataclasses.replace(i, times_ps=i.times_ps[:1000]))
    t0 = time.perf_counter()
    res = count_coincidences(s, i)
    dt = time.perf_counter() - t0
    mts = (s.n_events + i.n_events) / dt / 1e6
    summary = {
        "command": "bench",
        "events_per_stream": n,
        "seconds": dt,
        "mega_timestamps_per_s": mts,
        "cc_count": res.cc_count,
        "acc_count": res.acc_count,
    }
    _write_summary(out, summary)
    print(f"matched 2 x {n} timestamps in {dt:.3f} s: {mts:.1f} M timestamps/s")


# ---------------------------------------------------------------------------
# parser and entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="timebin",
        description="Simulate and analyze time-tagged photon pair experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    cfg_common = argparse.ArgumentParser(add_help=False)
    cfg_common.add_argument("--config", type=Path, default=None,
                            help="INI configuration; built-in defaults when omitted")
    cfg_common.add_argument("--out", type=Path, default=None,
                            help="output directory (default timebin-<command>)")
    cfg_common.add_argument("--seed", type=int, default=None,
                            help="override [run] seed")
    cfg_common.add_argument("--threads", type=int, default=1,
                            help="worker threads for multi-point runs")

    q = sub.add_parser("simulate", parents=[cfg_common],
                       help="run the chain and write timestamp stream files")
    q.add_argument("--slots", type=int, default=None, help="override [run] n_slots")
    q.set_defaults(func=cmd_simulate)

    q = sub.add_parser("analyze", help="coincidence analysis of two stream files")
    q.add_argument("--signal", type=Path, required=True, help="signal .pts file")
    q.add_argument("--idler", type=Path, required=True, help="idler .pts file")
    q.add_argument("--out", type=Path, default=None)
    q.add_argument("--offset", type=int, default=0,
                   help="idler slot offset for the matched count")
    q.add_argument("--accidental-offset", type=int, default=2,
                   help="idler slot offset for the accidental estimate")
    q.add_argument("--bin-width-ps", type=int, default=2)
    q.add_argument("--range-ps", type=int, default=2000)
    q.set_defaults(func=cmd_analyze)

    q = sub.add_parser("fringe", parents=[cfg_common],
                       help="temperature-scanned interference fringe plus fit")
    q.add_argument("--quota", type=int, default=None,
                   help="override [experiment] quota")
    q.set_defaults(func=cmd_fringe)

    q = sub.add_parser("chsh", parents=[cfg_common],
                       help="sixteen-setting CHSH correlation run")
    q.add_argument("--quota", type=int, default=None,
                   help="override [experiment] chsh_quota")
    q.set_defaults(func=cmd_chsh)

    q = sub.add_parser("car-sweep", parents=[cfg_common],
                       help="coincidence-to-accidental ratio versus pump level")
    q.add_argument("--slots", type=int, default=None, help="override [run] n_slots")
    q.set_defaults(func=cmd_car_sweep)

    q = sub.add_parser("saturation", parents=[cfg_common],
                       help="dead-time-limited coincidence curve versus pump level")
    q.add_argument("--slots", type=int, default=None, help="override [run] n_slots")
    q.set_defaults(func=cmd_saturation)

    q = sub.add_parser("visibility-sweep", parents=[cfg_common],
                       help="fitted fringe visibility versus pump level")
    q.add_argument("--quota", type=int, default=None,
                   help="override [experiment] quota")
    q.set_defaults(func=cmd_visibility_sweep)

    q = sub.add_parser("tdc-calibrate", parents=[cfg_common],
                       help="recover digitizer tap widths by code density")
    q.add_argument("--events", type=int, default=2_000_000,
                   help="arrivals to digitize")
    q.set_defaults(func=cmd_tdc_calibrate)

    q = sub.add_parser("bench", help="coincidence engine throughput check")
    q.add_argument("--out", type=Path, default=None)
    q.add_argument("--seed", type=int, default=None)
    q.add_argument("--events", type=int, default=5_000_000,
                   help="timestamps per synthetic stream")
    q.set_defaults(func=cmd_bench)

    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            args.func(args)
        saturated = [w for w in caught
                     if issubclass(w.category, SaturationWarning)]
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        if saturated:
            return EXIT_SATURATION
        return EXIT_OK
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StreamFormatError, ClockMismatchError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
