"""Command-line interface: scenario runs, sweeps, stage harnesses, plot data.

Every verb is a thin wrapper over library calls; anything the CLI produces is
reachable programmatically with identical results.  Exit codes: 0 success,
2 configuration error, 4 infeasible optimization, 3 any other numerical
failure.  Errors print as one ``nfisac: <kind>: <message>`` line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .config import ConfigError, ScenarioConfig, build_config, load_config
from .geometry import SphericalCoord, sph_to_cart, spherical_basis
from .optimize import (InfeasibleProblemError, SolverFailure,
                       UnboundedProblemError)
from .scenario import ScenarioError, run_scenario
from .sensing import GradientSettings, LocalizationGrid, estimate_velocity, \
    localize_coarse_fine
from .signals import KinematicState, make_symbol_block, simulate_echo
from .tracking import (NoiseModel, TrackState, ekf_predict, ekf_update,
                       measurement_cov, measurement_function)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_INFEASIBLE = 4


def _fail(kind: str, message: str) -> None:
    print(f"nfisac: {kind}: {message}", file=sys.stderr)


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _config_from_args(args, extra_overrides: list[str] | None = None,
                      scheme: str | None = None) -> ScenarioConfig:
    overrides = list(args.set or []) + list(extra_overrides or [])
    if scheme is not None:
        overrides.append(f"scheme={scheme}")
    if args.config is not None:
        return load_config(args.config, profile=args.profile,
                           overrides=overrides, seed=args.seed)
    return build_config(profile=args.profile, overrides=overrides,
                        seed=args.seed)


# ---------------------------------------------------------------------------
# run / sweep


def cmd_run(args) -> int:
    schemes = [s.strip() for s in args.scheme.split(",") if s.strip()]
    if not schemes:
        raise ConfigError("--scheme must name at least one scheme")
    summaries = []
    for scheme in schemes:
        config = _config_from_args(args, scheme=scheme)
        result = run_scenario(config, out_dir=args.out)
        summaries.append(result.summary)
    for summary in summaries:
        print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_sweep(args) -> int:
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values must list at least one value")
    rows = []
    for value in values:
        config = _config_from_args(args, extra_overrides=[f"{args.key}={value}"])
        sub_dir = None
        if args.out is not None:
            sub_dir = os.path.join(args.out, f"{args.key}={value}")
        result = run_scenario(config, out_dir=sub_dir)
        summary = result.summary
        rows.append([args.key, value, summary["scheme"],
                     summary["avg_secrecy_true"], summary["avg_nsee"]])
        print(json.dumps({"key": args.key, "value": value, **summary},
                         sort_keys=True))
    if args.out is not None:
        _write_csv(os.path.join(args.out, "sweep_summary.csv"),
                   ["key", "value", "scheme", "avg_secrecy_true", "avg_nsee"],
                   rows)
    return EXIT_OK


# ---------------------------------------------------------------------------
# stage harnesses


def _focused_beams(config: ScenarioConfig, target: np.ndarray):
    """Equal-power beams focused on the target and on the C-UAV start."""
    from .optimize import channel_at

    geom = config.geometry.build()
    h_e = channel_at(geom, config.signal.beta0, target)
    h_c = channel_at(geom, config.signal.beta0,
                     np.asarray(config.c_uav.initial_position, dtype=float))
    scale = np.sqrt(config.power.p_max / 2.0)
    w_c = scale * h_c.coeffs / np.linalg.norm(h_c.coeffs)
    w_e = scale * np.conj(h_e.coeffs) / np.linalg.norm(h_e.coeffs)
    return geom, w_c, w_e


def cmd_sense(args) -> int:
    """Plant-and-recover harness: known target, focused beams, estimate."""
    config = _config_from_args(args)
    sens = config.sensing
    rng = np.random.default_rng(config.seed)
    rows = []
    for trial in range(args.trials):
        sph = SphericalCoord(
            r=float(rng.uniform(*args.r_range)),
            theta=float(rng.uniform(-0.6, 0.6)),
            phi=float(rng.uniform(0.6, 1.4)))
        basis = np.stack(spherical_basis(sph), axis=1)
        v_sph_true = rng.uniform(-config.constraints.v_max / 2,
                                 config.constraints.v_max / 2, size=3)
        truth = KinematicState(position=sph_to_cart(sph),
                               velocity=basis @ v_sph_true)
        geom, w_c, w_e = _focused_beams(config, truth.position)
        symbols = make_symbol_block(config.signal.n_symbols,
                                    config.signal.bandwidth_hz, rng)
        echo = simulate_echo(geom, truth, w_c, w_e, symbols,
                             config.signal.rcs_m2, config.signal.beta0,
                             config.power.sigma2_b, rng)
        grid = LocalizationGrid(
            r_range=(sph.r - sens.r_halfwidth, sph.r + sens.r_halfwidth),
            theta_range=(sph.theta - np.deg2rad(sens.angle_halfwidth_deg),
                         sph.theta + np.deg2rad(sens.angle_halfwidth_deg)),
            phi_range=(sph.phi - np.deg2rad(sens.angle_halfwidth_deg),
                       sph.phi + np.deg2rad(sens.angle_halfwidth_deg)),
            r_step=sens.r_step, theta_step=np.deg2rad(sens.angle_step_deg),
            phi_step=np.deg2rad(sens.angle_step_deg))
        loc = localize_coarse_fine(
            geom, echo, symbols, grid,
            fine_steps=(sens.fine_r_step,
                        np.deg2rad(sens.fine_angle_step_deg),
                        np.deg2rad(sens.fine_angle_step_deg)))
        vel = estimate_velocity(
            geom, echo, symbols, w_c, w_e, loc, np.zeros(3),
            GradientSettings(max_iters=sens.gradient_max_iters,
                             initial_step_mps=sens.gradient_initial_step))
        rows.append([trial, sph.r, sph.theta, sph.phi,
                     loc.r - sph.r, loc.theta - sph.theta, loc.phi - sph.phi,
                     *(vel.v_sph - v_sph_true)])
    header = ["trial", "true_r", "true_theta", "true_phi",
              "err_r", "err_theta", "err_phi",
              "err_vr", "err_vtheta", "err_vphi"]
    if args.out is not None:
        _write_csv(os.path.join(args.out, "sense_trials.csv"), header, rows)
    err = np.asarray([row[4:] for row in rows], dtype=float)
    print(json.dumps({"trials": len(rows),
                      "rmse": dict(zip(header[4:],
                                       np.sqrt(np.mean(err**2, axis=0))))}))
    return EXIT_OK


def cmd_track(args) -> int:
    """EKF on a scripted constant-velocity path with synthetic measurements."""
    config = _config_from_args(args)
    rng = np.random.default_rng(config.seed)
    dt = config.signal.cpi_duration_s
    noise = NoiseModel(
        scale_factors=np.asarray(config.tracking.scale_factors, dtype=float),
        process_cov=config.tracking.process_cov(dt))
    s = np.array([*config.e_uav.center, 1.0, -1.0, 0.5])
    track = TrackState(
        s_hat=np.array([*s[:3], 0.0, 0.0, 0.0]),
        cov=np.diag([config.tracking.init_pos_var] * 3
                    + [config.tracking.init_vel_var] * 3))
    meas_cov = measurement_cov(args.snr, noise)
    rows = []
    for step in range(args.steps):
        s = s + np.array([*(s[3:] * dt), 0.0, 0.0, 0.0])
        pred = ekf_predict(track, dt, noise.process_cov)
        u = measurement_function(s) + rng.normal(
            0.0, np.sqrt(np.diag(meas_cov)))
        track = ekf_update(pred, u, meas_cov)
        err = s - track.s_hat
        rows.append([step, float(np.trace(track.cov)),
                     float(np.linalg.norm(err[:3])),
                     float(np.linalg.norm(err[3:]))])
    if args.out is not None:
        _write_csv(os.path.join(args.out, "track_steps.csv"),
                   ["step", "trace_c", "pos_err", "vel_err"], rows)
    print(json.dumps({"steps": len(rows), "final_trace_c": rows[-1][1],
                      "final_pos_err": rows[-1][2]}))
    return EXIT_OK


def cmd_beamform(args) -> int:
    """One joint design at the initial geometry; emits the AO secrecy trace."""
    from .scenario import _design, ground_truth_step, initial_track

    config = _config_from_args(args)
    truth = ground_truth_step(config, 0)
    track = ekf_predict(initial_track(config), config.signal.cpi_duration_s,
                        config.tracking.process_cov(
                            config.signal.cpi_duration_s))
    res = _design(config, track.s_hat[:3],
                  np.asarray(config.c_uav.initial_position, dtype=float),
                  prior=track)
    rows = [[i + 1, v] for i, v in enumerate(res.secrecy_trace)]
    if args.out is not None:
        _write_csv(os.path.join(args.out, "ao_trace.csv"),
                   ["iteration", "secrecy_rate"], rows)
    print(json.dumps({"iterations": res.iterations,
                      "converged": res.converged,
                      "secrecy_rate": res.secrecy_trace[-1],
                      "q_c": list(map(float, res.q_c)),
                      "e_true": list(map(float, truth.position))}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# plot data


def _read_run_csv(path: str) -> tuple[list[str], list[dict]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        return list(reader.fieldnames or []), rows


def _require_columns(path: str, header: list[str], needed: list[str]) -> None:
    missing = [c for c in needed if c not in header]
    if missing:
        raise ConfigError(f"{path} is missing columns: {', '.join(missing)}")


def cmd_plotdata(args) -> int:
    """Reshape run/sweep CSVs into tidy long-format series files."""
    run_files = []
    for root, _dirs, files in os.walk(args.run_dir):
        for name in sorted(files):
            if name.startswith("run_") and name.endswith(".csv"):
                run_files.append(os.path.join(root, name))
    sweep_files = []
    for root, _dirs, files in os.walk(args.run_dir):
        if "sweep_summary.csv" in files:
            sweep_files.append(os.path.join(root, "sweep_summary.csv"))
    if not run_files and not sweep_files:
        raise ConfigError(f"no run_*.csv or sweep_summary.csv under "
                          f"{args.run_dir!r}")

    secrecy_rows, nsee_rows, traj_rows = [], [], []
    for path in sorted(run_files):
        label = os.path.basename(path)[len("run_"):-len(".csv")]
        header, rows = _read_run_csv(path)
        _require_columns(path, header,
                         ["cpi", "secrecy_true", "nsee", "truth_x", "truth_y",
                          "truth_z", "fused_x", "fused_y", "fused_z",
                          "qc_x", "qc_y", "qc_z"])
        for row in rows:
            cpi = row["cpi"]
            secrecy_rows.append([label, cpi, row["secrecy_true"]])
            nsee_rows.append([label, cpi, row["nsee"]])
            for series, pfx in (("truth", "truth"), ("estimated", "fused"),
                                ("c_uav", "qc")):
                traj_rows.append([label, series, cpi, row[f"{pfx}_x"],
                                  row[f"{pfx}_y"], row[f"{pfx}_z"]])

    out = args.out or args.run_dir
    written = []
    if run_files:
        _write_csv(os.path.join(out, "secrecy_vs_cpi.csv"),
                   ["series", "cpi", "secrecy_rate"], secrecy_rows)
        _write_csv(os.path.join(out, "nsee_vs_cpi.csv"),
                   ["series", "cpi", "nsee"], nsee_rows)
        _write_csv(os.path.join(out, "trajectory.csv"),
                   ["series", "path", "cpi", "x", "y", "z"], traj_rows)
        written += ["secrecy_vs_cpi.csv", "nsee_vs_cpi.csv", "trajectory.csv"]

    sweep_names = {"power.p_max_dbm": "secrecy_vs_pmax.csv",
                   "tracking.gamma": "secrecy_vs_gamma.csv"}
    for path in sorted(sweep_files):
        header, rows = _read_run_csv(path)
        _require_columns(path, header,
                         ["key", "value", "scheme", "avg_secrecy_true",
                          "avg_nsee"])
        for key in sorted({row["key"] for row in rows}):
            name = sweep_names.get(key, f"secrecy_vs_{key.split('.')[-1]}.csv")
            _write_csv(os.path.join(out, name),
                       ["series", "value", "avg_secrecy_rate", "avg_nsee"],
                       [[row["scheme"], row["value"],
                         row["avg_secrecy_true"], row["avg_nsee"]]
                        for row in rows if row["key"] == key])
            written.append(name)
    print(json.dumps({"out_dir": out, "files": written}))
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import app

    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser and entry point


def _add_config_flags(sub) -> None:
    sub.add_argument("--config", help="YAML config file")
    sub.add_argument("--profile", choices=["ci", "desk", "paper"],
                     help="named parameter profile")
    sub.add_argument("--seed", type=int, help="RNG seed (overrides config)")
    sub.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="dotted-key config override (repeatable)")
    sub.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nfisac",
        description="Near-field ISAC secure-UAV simulator")
    subs = parser.add_subparsers(dest="verb", required=True)

    run = subs.add_parser("run", help="run one or more full scenarios")
    _add_config_flags(run)
    run.add_argument("--scheme", default="proposed",
                     help="comma-separated list of schemes to run")
    run.set_defaults(func=cmd_run)

    sweep = subs.add_parser("sweep", help="run a scenario per swept value")
    _add_config_flags(sweep)
    sweep.add_argument("--key", required=True, help="dotted config key")
    sweep.add_argument("--values", required=True,
                       help="comma-separated values for the key")
    sweep.set_defaults(func=cmd_sweep)

    sense = subs.add_parser("sense", help="plant-and-recover sensing harness")
    _add_config_flags(sense)
    sense.add_argument("--trials", type=int, default=10)
    sense.add_argument("--r-range", type=float, nargs=2, default=(5.0, 9.0),
                       help="target range interval in meters")
    sense.set_defaults(func=cmd_sense)

    track = subs.add_parser("track", help="EKF on a scripted path")
    _add_config_flags(track)
    track.add_argument("--steps", type=int, default=50)
    track.add_argument("--snr", type=float, default=100.0,
                       help="echo SNR (linear) for the synthetic measurements")
    track.set_defaults(func=cmd_track)

    beamform = subs.add_parser("beamform",
                               help="one joint design, AO trace out")
    _add_config_flags(beamform)
    beamform.set_defaults(func=cmd_beamform)

    plotdata = subs.add_parser("plotdata",
                               help="tidy plot series from run CSVs")
    plotdata.add_argument("--run-dir", required=True)
    plotdata.add_argument("--out", help="output directory (default: run dir)")
    plotdata.set_defaults(func=cmd_plotdata)

    serve = subs.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    serve.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _fail("config-error", str(exc).replace("\n", " | "))
        return EXIT_CONFIG
    except (InfeasibleProblemError,) as exc:
        _fail("infeasible", str(exc))
        return EXIT_INFEASIBLE
    except ScenarioError as exc:
        if isinstance(exc.cause, InfeasibleProblemError):
            _fail("infeasible", f"CPI {exc.cpi}: {exc.cause}")
            return EXIT_INFEASIBLE
        _fail("numerical-failure", f"CPI {exc.cpi}: {exc.cause}")
        return EXIT_NUMERICAL
    except (SolverFailure, UnboundedProblemError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        _fail("numerical-failure", str(exc))
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
