"""End-to-end acceptance checks for the whole package: each test pins one
headline behavior (rate saturation, CAR, fringe visibility, CHSH, dead-time
throughput, TDC calibration, performance, determinism) at its stated
tolerance and prints a one-line verdict."""

import dataclasses
import hashlib
import math
import time

import numpy as np

from timebin import model, sim
from timebin.coincidence import TimestampStream, count_coincidences
from timebin.config import default_config, echo_config, parse_config
from timebin.experiments import (predicted_visibility, run_chsh,
                                 run_fringe_scan, run_saturation_sweep)
from timebin.model import (ChannelParams, DeadTimeSpec, JitterSpec, MziParams,
                           SourceParams)
from timebin.streamfile import read_stream, write_stream

SQRT8 = 2.0 * math.sqrt(2.0)


def _verdict(name, failures, detail):
    status = "FAIL" if failures else "PASS"
    print(f"[acceptance] {name}: {status} ({detail})", flush=True)
    assert not failures, f"{name}: " + "; ".join(failures)


def ideal_chain(mu, mzi_visibility=None):
    """Lossless single-pixel chain; every generated pair reaches both arms."""
    det = sim.DetectorParams(pixel_count=1, efficiency=1.0,
                             dead=DeadTimeSpec(0.0), jitter=JitterSpec(0.0),
                             merge_window_s=0.0)
    kw = {}
    if mzi_visibility is not None:
        kw["signal_mzi"] = MziParams(interference_visibility=mzi_visibility)
        kw["idler_mzi"] = MziParams(interference_visibility=mzi_visibility)
    else:
        kw["signal_mzi"] = None
        kw["idler_mzi"] = None
    return sim.ChainConfig(
        source=SourceParams(mu),
        signal_channel=ChannelParams(1.0), idler_channel=ChannelParams(1.0),
        signal_detector=det, idler_detector=det,
        signal_tdc=None, idler_tdc=None, **kw)


def test_saturation_curve_matches_first_order_model():
    t0 = time.perf_counter()
    failures = []

    rng = np.random.default_rng(32)
    q, _ = sim.deadtime_veto_coincidence(0.1, 5, 20_000_000, rng)
    if abs(q - 0.05) / 0.05 > 0.05:
        failures.append(f"headline point {q:.6f} vs 0.05")

    # the first-order curve mu(1 - mu D) only holds up to mu*D = 0.5
    mus = [0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1]
    worst = 0.0
    for dead_slots in (0, 5, 10):
        grid = [m for m in mus if m * dead_slots <= 0.5]
        for point in run_saturation_sweep(grid, dead_slots,
                                          n_slots=10_000_000, seed=32):
            rel = abs(point.coincidence_prob - point.model_prob) / point.model_prob
            worst = max(worst, rel)
            if rel > 0.05:
                failures.append(
                    f"mu={point.mu} D={dead_slots}: {point.coincidence_prob:.6f} "
                    f"vs {point.model_prob:.6f}")

    elapsed = time.perf_counter() - t0
    if elapsed > 120.0:
        failures.append(f"runtime {elapsed:.0f} s > 120 s")
    _verdict("saturation curve", failures,
             f"peak {q:.5f} vs 0.05, worst grid dev {worst:.2%}, {elapsed:.0f} s")


def test_car_matches_poisson_pair_model():
    t0 = time.perf_counter()
    failures = []
    cars = []
    for mu, n_slots in ((0.001, 100_000_000), (0.01, 100_000_000),
                        (0.1, 30_000_000)):
        res = sim.simulate_chain(ideal_chain(mu),
                                 sim.SimRun(seed=303, n_slots=n_slots))
        cc = count_coincidences(res.signal, res.idler)
        expected = 1.0 / mu + 1.0
        cars.append(cc.car)
        if abs(cc.car - expected) > 3.0 * cc.car_sigma:
            failures.append(
                f"mu={mu}: CAR {cc.car:.2f} vs {expected:.2f} "
                f"(sigma {cc.car_sigma:.3f})")
    elapsed = time.perf_counter() - t0
    if elapsed > 300.0:
        failures.append(f"runtime {elapsed:.0f} s > 300 s")
    _verdict("CAR vs pump level", failures,
             "CAR " + ", ".join(f"{c:.1f}" for c in cars) +
             f" at mu 0.001/0.01/0.1, {elapsed:.0f} s")


def test_fringe_visibility_chain():
    t0 = time.perf_counter()
    failures = []
    rc = default_config()
    exp = rc.experiment

    scan = run_fringe_scan(rc.chain, temperatures_c=exp.temperatures(),
                           ref_c=exp.ref_c, celsius_per_pi=exp.celsius_per_pi,
                           quota=exp.quota, seed=11)
    fit_low = scan.fit()
    if abs(fit_low.visibility - 0.948) > 0.01:
        failures.append(f"low-rate visibility {fit_low.visibility:.4f} vs 0.948")

    # high pump level: dead times off so the multi-pair + jitter closed form
    # is the only effect in play; 80 ps keeps adjacent-slot leakage (which
    # the two-case capture model ignores) inside the comparison budget
    det = sim.DetectorParams(pixel_count=16, efficiency=0.67,
                             dead=DeadTimeSpec(0.0), jitter=JitterSpec(80e-12),
                             merge_window_s=0.0)
    chain_high = dataclasses.replace(
        rc.chain,
        source=dataclasses.replace(rc.chain.source, mean_pairs_per_pulse=0.094),
        signal_detector=det, idler_detector=det,
        signal_tdc=None, idler_tdc=None)
    predicted = predicted_visibility(chain_high)
    scan_high = run_fringe_scan(chain_high, temperatures_c=exp.temperatures(),
                                ref_c=exp.ref_c,
                                celsius_per_pi=exp.celsius_per_pi,
                                quota=exp.quota, seed=22)
    fit_high = scan_high.fit()
    if abs(fit_high.visibility - predicted) > 0.02:
        failures.append(
            f"high-rate visibility {fit_high.visibility:.4f} vs {predicted:.4f}")

    for mu in (0.0, 0.001, 0.01, 0.094, 0.5):
        if model.visibility_with_jitter(mu, 1.0) != model.visibility_multipair(mu):
            failures.append(f"jitter model at p_in=1 deviates for mu={mu}")

    threshold = model.bell_threshold_mu(0.95)
    if round(threshold, 2) != 0.17:
        failures.append(f"Bell threshold mu {threshold:.4f} does not round to 0.17")

    elapsed = time.perf_counter() - t0
    _verdict("fringe visibility", failures,
             f"V {fit_low.visibility:.4f} vs 0.948, "
             f"V {fit_high.visibility:.4f} vs {predicted:.4f}, "
             f"threshold {threshold:.3f}, {elapsed:.0f} s")


def test_chsh_consistency_and_targets():
    t0 = time.perf_counter()
    failures = []
    mu = 0.001

    consistency = []
    for v_int in (0.7071, 0.95):
        cfg = ideal_chain(mu, mzi_visibility=v_int)
        result = run_chsh(cfg, quota=65_536, seed=8)
        phases = np.linspace(0.0, 2.0 * np.pi, 16, endpoint=False)
        fit = run_fringe_scan(cfg, phases_rad=phases, quota=65_536,
                              seed=58).fit()
        combined = math.hypot(result.s_sigma, SQRT8 * fit.visibility_sigma)
        dev = result.s_value - SQRT8 * fit.visibility
        consistency.append(f"{dev / combined:+.2f}")
        if abs(dev) > combined:
            failures.append(
                f"v_int={v_int}: S {result.s_value:.4f} vs "
                f"2*sqrt(2)*V {SQRT8 * fit.visibility:.4f} "
                f"(combined sigma {combined:.4f})")

    # interferometer setting that puts the closed-form S at each target
    targets = []
    for s_target in (2.71, 2.05):
        v_int = s_target / SQRT8 * (1.0 + 2.0 * mu)
        result = run_chsh(ideal_chain(mu, mzi_visibility=v_int),
                          quota=65_536, seed=8)
        targets.append(result.s_value)
        if abs(result.s_value - s_target) > 0.03:
            failures.append(f"S {result.s_value:.4f} vs target {s_target}")
        if not result.violated:
            failures.append(f"S {result.s_value:.4f} not flagged as violation")

    cfg = ideal_chain(mu, mzi_visibility=0.95)
    repeats = [run_chsh(cfg, quota=65_536, seed=400 + k) for k in range(5)]
    spread = float(np.std([r.s_value for r in repeats], ddof=1))
    propagated = float(np.mean([r.s_sigma for r in repeats]))
    if not 0.5 <= spread / propagated <= 2.0:
        failures.append(
            f"sigma_S spread {spread:.4f} vs propagated {propagated:.4f}")

    elapsed = time.perf_counter() - t0
    if elapsed > 600.0:
        failures.append(f"runtime {elapsed:.0f} s > 600 s")
    _verdict("CHSH", failures,
             f"consistency pulls {'/'.join(consistency)}, "
             f"S {targets[0]:.3f} vs 2.71 and {targets[1]:.3f} vs 2.05, "
             f"sigma ratio {spread / propagated:.2f}, {elapsed:.0f} s")


def _exponential_arrivals_ps(rate_cps, n, rng):
    return np.cumsum(rng.exponential(1e12 / rate_cps, size=n))


def test_dead_time_rate_models():
    failures = []
    tau = 50e-9

    worst_np = 0.0
    for i, lam_tau in enumerate((0.1, 0.3, 1.0, 2.0, 3.0)):
        lam = lam_tau / tau
        rng = np.random.default_rng(900 + i)
        times = _exponential_arrivals_ps(lam, 1_000_000, rng)
        det = sim.DetectorParams(pixel_count=1, efficiency=1.0,
                                 dead=DeadTimeSpec(tau), jitter=JitterSpec(0.0),
                                 merge_window_s=0.0)
        out = sim.detect(times, det, rng)
        rate = out.times_ps.size / ((times[-1] - times[0]) / 1e12)
        expected = lam / (1.0 + lam * tau)
        rel = abs(rate - expected) / expected
        worst_np = max(worst_np, rel)
        if rel > 0.01:
            failures.append(f"non-paralyzable lam*tau={lam_tau}: dev {rel:.2%}")

    worst_par = 0.0
    for i, lam_tau in enumerate((0.1, 0.5, 0.9)):
        lam = lam_tau / 2e-9
        rng = np.random.default_rng(910 + i)
        times = _exponential_arrivals_ps(lam, 2_000_000, rng)
        out = sim.tdc_digitize(times, sim.TdcParams())
        rate = out.times_ps.size / ((times[-1] - times[0]) / 1e12)
        expected = lam * math.exp(-lam * 2e-9)
        rel = abs(rate - expected) / expected
        worst_par = max(worst_par, rel)
        if rel > 0.01:
            failures.append(f"paralyzable lam*tau={lam_tau}: dev {rel:.2%}")

    lam = 47e6
    rates = {}
    for i, pixels in enumerate((16, 1)):
        rng = np.random.default_rng(920 + i)
        times = _exponential_arrivals_ps(lam, 2_000_000, rng)
        det = sim.DetectorParams(pixel_count=pixels, efficiency=1.0,
                                 dead=DeadTimeSpec(tau), jitter=JitterSpec(0.0),
                                 merge_window_s=0.0)
        out = sim.detect(times, det, rng)
        rates[pixels] = out.times_ps.size / ((times[-1] - times[0]) / 1e12)
        expected = lam / (1.0 + lam * tau / pixels)
        if abs(rates[pixels] - expected) / expected > 0.01:
            failures.append(f"{pixels}-pixel rate {rates[pixels] / 1e6:.2f} Mcps "
                            f"vs {expected / 1e6:.2f} Mcps")
    ratio = rates[16] / rates[1]
    if ratio < 2.5:
        failures.append(f"16-pixel advantage {ratio:.2f}x < 2.5x")

    _verdict("dead-time models", failures,
             f"worst dev {worst_np:.2%} non-par / {worst_par:.2%} par, "
             f"16-pixel {rates[16] / 1e6:.1f} Mcps vs "
             f"1-pixel {rates[1] / 1e6:.1f} Mcps = {ratio:.2f}x")


def test_tdc_calibration_and_dead_time():
    failures = []

    # code-density calibration against an injected +-20% sawtooth
    rng = np.random.default_rng(60)
    widths = sim.sawtooth_tap_widths(512, 0.2)
    tdc = sim.TdcParams(tap_widths=widths, dead=DeadTimeSpec(0.0, "paralyzable"))
    n = 10_000_000
    times = np.sort(rng.uniform(0.0, n * 10_000.0, size=n))
    out = sim.tdc_digitize(times, tdc)
    counts = np.bincount(out.codes, minlength=512)
    estimated = counts / counts.sum() * tdc.coarse_period_ps
    worst_tap = float(np.max(np.abs(estimated - widths) / widths))
    if worst_tap > 0.05:
        failures.append(f"worst tap-width deviation {worst_tap:.2%}")

    rng = np.random.default_rng(61)
    # span keeps the mean rate under the digitizer's saturation guard
    times = np.sort(rng.uniform(0.0, 2000.0 * 4_000_000, size=2_000_000))
    out = sim.tdc_digitize(times, sim.TdcParams(dead=DeadTimeSpec(0.0, "paralyzable")))
    if out.times_ps.size != times.size:
        failures.append("dead-time-free digitization dropped events")
    rms = float(np.sqrt(np.mean((out.times_ps - times) ** 2)))
    if not 1.128 * 0.95 <= rms <= 1.128 * 1.05:
        failures.append(f"quantization RMS {rms:.4f} ps vs 1.128 ps +-5%")

    rng = np.random.default_rng(62)
    times = _exponential_arrivals_ps(300e6, 10_000_000, rng)
    out = sim.tdc_digitize(times, sim.TdcParams())
    min_gap = int(np.diff(out.times_ps).min())
    if min_gap < 2000:
        failures.append(f"output events {min_gap} ps apart (dead time 2 ns)")

    _verdict("TDC calibration", failures,
             f"worst tap {worst_tap:.2%}, RMS {rms:.4f} ps, "
             f"min output gap {min_gap} ps over 1e7 arrivals")


def test_throughput_and_runtime():
    failures = []

    rng = np.random.default_rng(77)
    n = 5_000_000
    a = TimestampStream(np.cumsum(rng.integers(100, 400, size=n)), 0, 200)
    b = TimestampStream(np.cumsum(rng.integers(100, 400, size=n)), 1, 200)
    count_coincidences(a, b)  # warm the kernel before timing
    t0 = time.perf_counter()
    count_coincidences(a, b)
    engine_rate = 2 * n / (time.perf_counter() - t0)
    if engine_rate < 10e6:
        failures.append(f"engine {engine_rate / 1e6:.1f} M timestamps/s < 10 M")

    rc = default_config()
    chain = dataclasses.replace(
        rc.chain,
        source=dataclasses.replace(rc.chain.source, mean_pairs_per_pulse=0.094))
    t0 = time.perf_counter()
    res = sim.simulate_chain(chain, sim.SimRun(seed=5, n_slots=500_000_000))
    cc = count_coincidences(res.signal, res.idler, duration_s=0.1)
    elapsed = time.perf_counter() - t0
    if elapsed > 300.0:
        failures.append(f"0.1 s experiment took {elapsed:.0f} s > 300 s")
    n_events = res.signal.n_events + res.idler.n_events
    if n_events < 5_000_000:
        failures.append(f"only {n_events} detections from 5e8 slots")
    if not 1e6 <= cc.cc_rate_cps <= 2e7:
        failures.append(f"coincidence rate {cc.cc_rate_cps:.3g} cps not in "
                        "the Mcps regime")

    _verdict("throughput", failures,
             f"engine {engine_rate / 1e6:.0f} M ts/s, 0.1 s experiment in "
             f"{elapsed:.1f} s ({n_events} events), analyzer "
             f"{cc.cc_rate_cps / 1e6:.2f} Mcps")


def test_determinism_and_round_trips(tmp_path):
    failures = []

    def run_hash():
        res = sim.simulate_chain(default_config().chain,
                                 sim.SimRun(seed=99, n_slots=1_000_000))
        digest = hashlib.sha256()
        digest.update(res.signal.times_ps.tobytes())
        digest.update(res.idler.times_ps.tobytes())
        return digest.hexdigest(), res

    hash_a, res = run_hash()
    hash_b, _ = run_hash()
    if hash_a != hash_b:
        failures.append("seed-fixed runs differ")

    path_a = tmp_path / "a.pts"
    path_b = tmp_path / "b.pts"
    write_stream(path_a, res.signal)
    loaded = read_stream(path_a)
    if not (np.array_equal(loaded.times_ps, res.signal.times_ps)
            and loaded.channel == res.signal.channel
            and loaded.slot_period_ps == res.signal.slot_period_ps
            and loaded.seed == res.signal.seed
            and loaded.t0_ps == res.signal.t0_ps):
        failures.append("stream did not round-trip")
    write_stream(path_b, loaded)
    if path_a.read_bytes() != path_b.read_bytes():
        failures.append("stream files not bit-identical")

    custom = "\n".join(["[source]", "mean_pairs_per_pulse = 0.094",
                        "[signal_tdc]", "dnl_sawtooth_amplitude = 0.2",
                        "[idler_tdc]", "enabled = false",
                        "[run]", "seed = 7"])
    for text in ("", custom):
        echoed = echo_config(parse_config(text))
        if echo_config(parse_config(echoed)) != echoed:
            failures.append("config echo is not a fixed point")

    _verdict("determinism", failures,
             f"run hash {hash_a[:12]}..., stream and config round-trips exact")
