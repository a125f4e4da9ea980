"""Command-line front end for simulating and calibrating transport gates.

Every subcommand writes its data files, fit or report JSON, and a
``manifest.json`` with the config hash and seed into ``--out``.
Exit status: 0 success, 2 configuration or usage error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .beams import B1, B2
from .calibration import doppler_null, solve_velocity, stark_report
from .errors import ConfigError, TransportGateError
from .fitting import MODELS, fit_scan
from .io import MANIFEST_NAME, write_json, write_manifest, write_trajectory_csv, write_waveform_csv
from .measurement import ScanResult, run_scan
from .scenario import KHZ, doppler_settings, load_config, parse_expression, well_plan
from .waveform import apply_filter, realized_trajectory, synthesize_waveform

logger = logging.getLogger("transport_gates")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
BUILTIN_BEAMS = {"B1": B1, "B2": B2}


class _Run:
    """Collects output paths and writes the manifest at the end."""

    def __init__(self, args, command: str):
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.cfg = load_config(args.config) if args.config else None
        self.seed = args.seed if args.seed is not None else (self.cfg.seed if self.cfg else 0)
        self.threads = max(1, args.threads)
        self.outputs = []
        self.meta = {"manifest": MANIFEST_NAME}

    def path(self, name: str) -> Path:
        p = self.out / name
        self.outputs.append(p)
        return p

    def json(self, name: str, obj: dict) -> None:
        write_json({**obj, **self.meta}, self.path(name))

    def finish(self) -> None:
        write_manifest(self.out, self.cfg.source if self.cfg else None, self.seed,
                       self.outputs, self.command)


def _require_config(run: _Run):
    if run.cfg is None:
        raise ConfigError(f"{run.command} needs --config")
    return run.cfg


# --- subcommands ----------------------------------------------------------------

def cmd_synth(args) -> None:
    run = _Run(args, "synth")
    cfg = _require_config(run)
    plan = well_plan(cfg)
    s = cfg.synthesis
    t0 = time.perf_counter()
    wf = synthesize_waveform(cfg.basis, plan, cfg.species, s.vmax, s.slew)
    logger.info("synthesised %d samples x %d channels in %.2f s", wf.samples.shape[0],
                wf.n_channels, time.perf_counter() - t0)
    write_waveform_csv(wf, run.path("waveform.csv"), comment=f"manifest={MANIFEST_NAME}")
    variants = [("", wf)]
    if cfg.filter is not None:
        fw = apply_filter(wf, cfg.filter)
        write_waveform_csv(fw, run.path("waveform_filtered.csv"), comment=f"manifest={MANIFEST_NAME}")
        variants.append(("_filtered", fw))
    wells = []
    for suffix, w in variants:
        for k in range(plan.n_wells):
            traj = realized_trajectory(cfg.basis, w, cfg.species, plan.positions[k, 0])
            write_trajectory_csv(traj, run.path(f"trajectory_well{k + 1}{suffix}.csv"),
                                 comment=f"manifest={MANIFEST_NAME}")
            err = traj.position - plan.positions[k]
            wells.append({"well": k + 1, "filtered": bool(suffix),
                          "max_position_error_m": float(np.max(np.abs(err))),
                          "max_omega_error_rel": float(np.max(np.abs(traj.omega / plan.omega[k] - 1)))})
    rep = wf.report
    box, slew = wf.constraint_violations()
    run.json("synthesis.json", {
        "samples": int(wf.samples.shape[0]), "channels": int(wf.n_channels),
        "sample_rate_hz": wf.sample_rate, "max_residual": float(np.max(rep.residual)),
        "max_kkt": float(np.max(rep.kkt)), "max_iterations": int(np.max(rep.iterations)),
        "unreachable_samples": list(map(int, rep.unreachable)),
        "box_violations": box, "slew_violations": slew, "wells": wells})
    run.finish()


def _run_scans(args, command: str, variable: str | None = None, min_ions: int = 1) -> None:
    run = _Run(args, command)
    cfg = _require_config(run)
    scans = cfg.scans
    if not scans:
        raise ConfigError("config defines no scans")
    if variable is not None and not any(s.spec.variable == variable for s in scans):
        raise ConfigError(f"{command} needs a {variable} scan")
    scenario = cfg.scenario(run.seed)
    if len(scenario.ions) < min_ions:
        raise ConfigError(f"{command} needs at least {min_ions} ions")
    for sc in scans:
        for res in run_scan(scenario, sc.spec, run.threads, run.seed):
            stem = f"{sc.name}_{res.label}"
            res.to_csv(run.path(f"{stem}.csv"), meta=run.meta)
            if sc.fit:
                fit = fit_scan(sc.fit, res)
                run.json(f"{stem}_fit.json", fit.to_dict())
                logger.info("%s: %s", stem, ", ".join(
                    f"{n}={v:.6g}+-{e:.2g}" for n, v, e in zip(fit.names, fit.values, fit.sigmas)))
    run.finish()


def cmd_rabi(args) -> None:
    _run_scans(args, "rabi", "t_off")


def cmd_ramsey(args) -> None:
    _run_scans(args, "ramsey", "phase")


def cmd_parallel(args) -> None:
    _run_scans(args, "parallel", None, min_ions=2)


def _beam(run: _Run, name: str | None):
    beams = dict(BUILTIN_BEAMS)
    if run.cfg is not None:
        beams.update(run.cfg.beams)
    if name is None:
        if run.cfg is not None and run.cfg.beams:
            name = next(iter(run.cfg.beams))
        else:
            name = "B2"
    if name not in beams:
        raise ConfigError(f"unknown beam {name!r}; available {sorted(beams)}")
    return beams[name]


def cmd_calibrate(args) -> None:
    run = _Run(args, f"calibrate {args.quantity}")
    if args.quantity == "velocity":
        rep = solve_velocity(_beam(run, args.beam), parse_expression(args.theta))
        run.json("calibration_velocity.json", rep.to_dict())
    elif args.quantity == "stark":
        beam = _beam(run, args.beam or "B1")
        detuning = (parse_expression(args.detuning_khz) * KHZ if args.detuning_khz is not None
                    else beam.stark_offset)
        rep = stark_report(beam, detuning, parse_expression(args.theta), args.shape)
        run.json("calibration_stark.json", rep.to_dict())
    else:
        cfg = _require_config(run)
        d = doppler_settings(cfg)
        res = doppler_null(d.beam, d.speed, d.frequencies, d.theta, d.shots, cfg.spam, run.seed,
                           cfg.options, run.threads)
        for scan in res.scans:
            scan.to_csv(run.path(f"doppler_{scan.label}.csv"), meta=run.meta)
        for fit, scan in zip(res.fits, res.scans):
            run.json(f"doppler_{scan.label}_fit.json", fit.to_dict())
        rep = res.report()
        rep.details["alpha_true_rad"] = float(d.beam.misalignment)
        run.json("calibration_doppler.json", rep.to_dict())
    logger.info("%s = %.8g %s", rep.quantity, rep.value, rep.unit)
    run.finish()


def cmd_fit(args) -> None:
    run = _Run(args, f"fit {args.model}")
    try:
        scan = ScanResult.from_csv(args.input)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read {args.input}: {exc}") from None
    fit = fit_scan(args.model, scan)
    run.json(f"{Path(args.input).stem}_{args.model}_fit.json", fit.to_dict())
    run.finish()


# --- entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario YAML file")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--threads", type=int, default=1, help="scan-point worker threads")
    common.add_argument("--verbose", "-v", action="store_true")

    p = argparse.ArgumentParser(prog="transport-gates", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="waveform synthesis and realised trajectories")
    sub.add_parser("rabi", parents=[common], help="t_off scan with transit-Rabi fit")
    sub.add_parser("ramsey", parents=[common], help="phase scan with sinusoid fit")
    sub.add_parser("parallel", parents=[common], help="two-ion time and frequency scans")
    c = sub.add_parser("calibrate", parents=[common], help="velocity, doppler or stark calibration")
    c.add_argument("quantity", choices=("velocity", "doppler", "stark"))
    c.add_argument("--theta", default="pi/2", help="target rotation, e.g. pi/2")
    c.add_argument("--beam", help="beam name (config or built-in B1/B2)")
    c.add_argument("--detuning-khz", help="residual detuning for stark (default: beam's Stark offset)")
    c.add_argument("--shape", choices=("intensity", "constant"), default="intensity")
    f = sub.add_parser("fit", parents=[common], help="fit a scan CSV with a named model")
    f.add_argument("--model", required=True, choices=sorted(MODELS))
    f.add_argument("--input", required=True, help="scan CSV (x,p_hat,sigma,n)")
    return p


COMMANDS = {"synth": cmd_synth, "rabi": cmd_rabi, "ramsey": cmd_ramsey, "parallel": cmd_parallel,
            "calibrate": cmd_calibrate, "fit": cmd_fit}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TransportGateError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
