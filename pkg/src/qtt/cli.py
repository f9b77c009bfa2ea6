"""Command-line front end.

Subcommands: simulate | sweep | allan | analytic | fiber | ao.  Every command
is reproducible: (config, seed) fully determine the outputs regardless of
--jobs or invocation order.  Exit codes: 0 success, 2 configuration error,
3 runtime failure.
"""
from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import replace as dc_replace
from pathlib import Path

import numpy as np

from . import analytic, links, stats
from .config import (
    BACKGROUND_PRESETS_CPS, CLOCK_PRESETS, ConfigError, DETECTOR_PRESETS,
    Scenario, apply_clock_preset, apply_detector_preset, default_scenario,
    load_config, scenario_to_dict,
)
from .correlator import recover_offset
from .manifest import RunManifest, load_manifest, write_csv, write_json
from .stats import (
    continuous_tracking, overlapping_adev, sweep, threshold_attenuation_curve,
)
from .timetags import build_bob_stream

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None,
                        help="scenario config JSON (defaults to the built-in reference scenario)")
    parser.add_argument("--seed", type=int, default=0, help="master RNG seed")
    parser.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                        help="parallel worker processes")
    parser.add_argument("--out", type=Path, default=Path("."), help="output directory")
    parser.add_argument("--preset", type=str, default=None,
                        help="detector preset applied on top of the config (SPAD|SNSPD|SOTA)")


def _load_scenario(args) -> Scenario:
    scenario = load_config(args.config) if args.config else default_scenario()
    if args.preset:
        scenario = apply_detector_preset(scenario, args.preset)
    return scenario


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {err}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qtt", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="one acquisition: histogram + offset result")
    _common(s)

    s = sub.add_parser("sweep", help="success-probability grid over attenuation x background")
    _common(s)
    s.add_argument("--attenuations-db", type=_float_list, default=[-10, -20, -30, -40, -50])
    s.add_argument("--backgrounds-cps", type=_float_list, default=[0, 2e5, 4e5, 6e5, 8e5])
    s.add_argument("--trials", type=int, default=100)
    s.add_argument("--level", type=float, default=0.99, help="threshold success level")

    s = sub.add_parser("allan", help="continuous tracking run + overlapping Allan deviation")
    _common(s)
    s.add_argument("--n-acq", type=int, default=600)
    s.add_argument("--clock-preset", choices=sorted(CLOCK_PRESETS), default="perfect")
    s.add_argument("--detector-preset", choices=sorted(DETECTOR_PRESETS) + ["SOTA"], default="SPAD")
    s.add_argument("--background", choices=sorted(BACKGROUND_PRESETS_CPS), default="daytime")

    s = sub.add_parser("analytic", help="closed-form success probability and threshold curves")
    _common(s)
    s.add_argument("--attenuations-db", type=_float_list, default=[-10, -20, -30, -40, -50])
    s.add_argument("--backgrounds-cps", type=_float_list, default=[2e5, 4e5, 6e5, 8e5])
    s.add_argument("--n-order", type=int, default=14)
    s.add_argument("--level", type=float, default=0.99)
    s.add_argument("--calibration-trials", type=int, default=3,
                   help="simulated streams per condition used to estimate dead-time factors")

    s = sub.add_parser("fiber", help="success probability versus fiber length")
    _common(s)
    s.add_argument("--lengths-km", type=_float_list,
                   default=[0, 50, 100, 150, 200, 250, 300, 350, 400])
    s.add_argument("--alpha-db-per-km", type=float, default=0.22)
    s.add_argument("--background-cps", type=float, default=1000.0)
    s.add_argument("--trials", type=int, default=100)

    s = sub.add_parser("ao", help="residual phase error and coupling versus zenith angle")
    _common(s)
    s.add_argument("--aperture-m", type=float, default=1.0)
    s.add_argument("--r0-zenith-m", type=float, default=0.05)
    s.add_argument("--f-tracking-greenwood-hz", type=float, default=10.0)
    s.add_argument("--f-tracking-loop-hz", type=float, default=50.0)
    s.add_argument("--f-greenwood-hz", type=float, default=60.0)
    s.add_argument("--f-ao-loop-hz", type=float, default=100.0)
    s.add_argument("--n-actuators", type=int, default=25)
    s.add_argument("--zenith-max-deg", type=float, default=80.0)
    s.add_argument("--zenith-steps", type=int, default=17)
    return p


def _finish(man: RunManifest, out: Path, started: float) -> None:
    man.duration_s = time.monotonic() - started
    man.write(out)


def cmd_simulate(args) -> int:
    started = time.monotonic()
    scenario = _load_scenario(args)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    alice, bob, truth = build_bob_stream(scenario, args.seed)
    params = scenario.correlator_params()
    result = recover_offset(alice, bob, params)

    from .correlator import build_histogram, neighbor_differences
    diffs = neighbor_differences(alice, bob, params.window_ps)
    hist = build_histogram(diffs, params.bin_width_ps, params.window_ps)
    hist_path = write_csv(out / "histogram.csv", ["bin_center_ps", "count"], hist.to_rows())

    payload = result.to_dict()
    payload.update(
        expected_peak_ps=truth.expected_peak_ps,
        n_true_ground_truth=truth.n_true_coincidences,
        alice_singles=len(alice),
        bob_singles=len(bob),
    )
    result_path = write_json(out / "result.json", payload)

    man = RunManifest("simulate", {"preset": args.preset}, scenario_to_dict(scenario), args.seed)
    man.add_output(hist_path)
    man.add_output(result_path)
    _finish(man, out, started)
    return EXIT_OK


def cmd_sweep(args) -> int:
    started = time.monotonic()
    scenario = _load_scenario(args)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    grid = sweep(scenario, args.attenuations_db, args.backgrounds_cps,
                 args.trials, args.seed, jobs=args.jobs)
    grid_path = write_csv(
        out / "sweep.csv",
        ["attenuation_db", "background_cps", "p_success", "mean_n_true"],
        grid.to_rows())
    curve = threshold_attenuation_curve(grid, level=args.level)
    curve_path = write_csv(
        out / "threshold.csv",
        ["background_cps", "threshold_attenuation_db"],
        [(bg, th if th is not None else float("nan")) for bg, th in curve])
    man = RunManifest(
        "sweep",
        {"attenuations_db": args.attenuations_db, "backgrounds_cps": args.backgrounds_cps,
         "trials": args.trials, "level": args.level, "preset": args.preset},
        scenario_to_dict(scenario), args.seed)
    man.add_output(grid_path)
    man.add_output(curve_path)
    _finish(man, out, started)
    return EXIT_OK


def cmd_allan(args) -> int:
    started = time.monotonic()
    if args.n_acq < 3:
        raise ConfigError("allan requires --n-acq >= 3")
    scenario = _load_scenario(args)
    scenario = apply_detector_preset(scenario, args.detector_preset)
    if args.detector_preset != "SOTA":
        scenario = apply_clock_preset(scenario, args.clock_preset)
        scenario = scenario.with_bob_channel(
            background_cps=BACKGROUND_PRESETS_CPS[args.background])
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    series = continuous_tracking(scenario, args.n_acq, seed=args.seed, jobs=args.jobs)
    offsets_path = write_csv(
        out / "offsets.csv",
        ["acquisition_index", "time_s", "tau_hat_ps", "true_tau_ps"],
        [(i, i * series.acquisition_time_s, series.taus_ps[i], series.true_taus_ps[i])
         for i in range(len(series))])
    curve = overlapping_adev(series)
    adev_path = write_csv(out / "adev.csv", ["tau_s", "sigma_y"], curve.to_rows())
    man = RunManifest(
        "allan",
        {"n_acq": args.n_acq, "clock_preset": args.clock_preset,
         "detector_preset": args.detector_preset, "background": args.background,
         "preset": args.preset},
        scenario_to_dict(scenario), args.seed)
    man.add_output(offsets_path)
    man.add_output(adev_path)
    _finish(man, out, started)
    return EXIT_OK


def cmd_analytic(args) -> int:
    started = time.monotonic()
    scenario = _load_scenario(args)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    if args.n_order < 1:
        raise ConfigError("--n-order must be >= 1")
    ps_rows = []
    threshold_rows = []
    for j, bg in enumerate(args.backgrounds_cps):
        if bg <= 0:
            raise ConfigError("analytic backgrounds must be > 0 (the noise model "
                              "degenerates at zero)")
        # Calibrate at mid-grid attenuation: dead-time factors vary weakly.
        mid = args.attenuations_db[len(args.attenuations_db) // 2]
        base = stats.calibrated_analytic_scenario(
            scenario.with_bob_channel(attenuation_db=mid, background_cps=bg),
            n_order=args.n_order, trials=args.calibration_trials,
            seed=args.seed + j)
        mu_b = analytic.accidental_mean(
            base.noise_a_cps, base.noise_b_cps, base.bin_width_ps,
            base.acquisition_time_s)
        for att in args.attenuations_db:
            if att > 0:
                raise ConfigError("attenuations must be <= 0 dB")
            s_att = dc_replace(base, eta_b=10.0 ** (att / 10.0))
            _, s_peak = analytic.peak(s_att)
            ps_rows.append((att, bg, analytic.prob_success(s_peak, mu_b, args.n_order)))
        eta_expansion = analytic.threshold_attenuation(args.level, bg, base)
        eta_exact = analytic.threshold_attenuation_exact(args.level, bg, base)
        threshold_rows.append((
            bg,
            links.efficiency_to_db(eta_expansion) if eta_expansion > 0 else float("nan"),
            links.efficiency_to_db(eta_exact),
        ))
    ps_path = write_csv(out / "analytic_ps.csv",
                        ["attenuation_db", "background_cps", "p_success"], ps_rows)
    th_path = write_csv(
        out / "analytic_threshold.csv",
        ["background_cps", "threshold_db_expansion", "threshold_db_exact"],
        threshold_rows)
    man = RunManifest(
        "analytic",
        {"attenuations_db": args.attenuations_db, "backgrounds_cps": args.backgrounds_cps,
         "n_order": args.n_order, "level": args.level,
         "calibration_trials": args.calibration_trials, "preset": args.preset},
        scenario_to_dict(scenario), args.seed)
    man.add_output(ps_path)
    man.add_output(th_path)
    _finish(man, out, started)
    return EXIT_OK


def cmd_fiber(args) -> int:
    started = time.monotonic()
    scenario = _load_scenario(args)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    rows = links.fiber_success_curve(
        scenario, args.lengths_km, args.trials, args.seed,
        alpha_db_per_km=args.alpha_db_per_km,
        background_cps=args.background_cps, jobs=args.jobs)
    path = write_csv(out / "fiber.csv",
                     ["length_km", "attenuation_db", "p_success", "mean_n_true"], rows)
    man = RunManifest(
        "fiber",
        {"lengths_km": args.lengths_km, "alpha_db_per_km": args.alpha_db_per_km,
         "background_cps": args.background_cps, "trials": args.trials,
         "preset": args.preset},
        scenario_to_dict(scenario), args.seed)
    man.add_output(path)
    _finish(man, out, started)
    return EXIT_OK


def cmd_ao(args) -> int:
    started = time.monotonic()
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    if not 0 < args.zenith_max_deg < 90:
        raise ConfigError("--zenith-max-deg must be in (0, 90)")
    if args.zenith_steps < 2:
        raise ConfigError("--zenith-steps must be >= 2")
    rx = links.FreespaceReceiver(
        diameter_m=args.aperture_m,
        r0_zenith_m=args.r0_zenith_m,
        f_tracking_greenwood_hz=args.f_tracking_greenwood_hz,
        f_tracking_loop_hz=args.f_tracking_loop_hz,
        f_greenwood_hz=args.f_greenwood_hz,
        f_ao_loop_hz=args.f_ao_loop_hz,
        n_actuators=args.n_actuators,
    )
    rows = []
    for z in np.linspace(0.0, args.zenith_max_deg, args.zenith_steps):
        r0_z, fg_z = links.zenith_scaling(rx.r0_zenith_m, rx.f_greenwood_hz, float(z))
        var_track = links.residual_error_tracking(rx, r0_m=r0_z)
        var_ao = links.residual_error_ao(rx, r0_m=r0_z, f_greenwood_hz=fg_z)
        rows.append((float(z), r0_z, fg_z,
                     var_track, links.coupling_efficiency(var_track),
                     var_ao, links.coupling_efficiency(var_ao)))
    path = write_csv(
        out / "ao.csv",
        ["zenith_deg", "r0_m", "f_greenwood_hz",
         "sigma_phi2_tracking_rad2", "eta_coupling_tracking",
         "sigma_phi2_ao_rad2", "eta_coupling_ao"],
        rows)
    man = RunManifest(
        "ao",
        {k: getattr(args, k) for k in
         ("aperture_m", "r0_zenith_m", "f_tracking_greenwood_hz", "f_tracking_loop_hz",
          "f_greenwood_hz", "f_ao_loop_hz", "n_actuators", "zenith_max_deg", "zenith_steps")},
        {"model": "marechal exp(-sigma^2) coupling approximation"}, args.seed)
    man.add_output(path)
    _finish(man, out, started)
    return EXIT_OK


_COMMANDS = {
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "allan": cmd_allan,
    "analytic": cmd_analytic,
    "fiber": cmd_fiber,
    "ao": cmd_ao,
}


def rerun_from_manifest(manifest_path, out_dir) -> int:
    """Re-execute a recorded run into a new directory.

    The manifest's resolved config snapshot is written next to the new
    outputs and fed back through the normal argument path, so the outputs
    come out byte-identical.
    """
    record = load_manifest(manifest_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config_path = out_dir / "_rerun_config.json"
    write_json(config_path, record["config"])
    argv = [record["command"], f"--seed={record['master_seed']}", f"--out={out_dir}"]
    if record["command"] != "ao":
        argv.append(f"--config={config_path}")
    for key, value in record["arguments"].items():
        if value is None or key == "preset":
            continue  # preset already folded into the config snapshot
        flag = "--" + key.replace("_", "-")
        if isinstance(value, list):
            argv.append(f"{flag}=" + ",".join(repr(float(v)) for v in value))
        else:
            argv.append(f"{flag}={value}")
    return main(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return EXIT_CONFIG if err.code not in (0, None) else EXIT_OK
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as err:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
