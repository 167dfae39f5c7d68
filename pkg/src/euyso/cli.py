"""Command-line front end.

Exit codes: 0 ok, 1 input error, 2 convergence failure, 3 rank failure.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import io as fio
from .branching import (
    GammaConvergenceError,
    GammaFitProblem,
    InvertibilityError,
    OpticsConfig,
    check_invertibility,
    dipole_moment,
    fit_damped_cosine,
    fit_gamma,
    power_calibrate,
)
from .fieldfit import ConvergenceError, RankError, fit_field_rhs, fit_field_shb
from .lines import rhs_lines, shb_catalog, subsite_split_slopes
from .pumping import (
    UNIFORM_GAMMA,
    DetuningGrid,
    PumpSequence,
    apply_pump,
    burn,
    chirp,
    class_shifts,
    concat,
    count_extrema,
    init_thermal,
    normalization,
    repeat,
    shb_difference,
    synthesize_spectrum,
)
from .spin import ConfigError, FieldVector, load_model, parse_transition, solve

log = logging.getLogger("euyso")

EXIT_INPUT, EXIT_CONVERGENCE, EXIT_RANK = 1, 2, 3


class CliError(Exception):
    def __init__(self, msg: str, code: int = EXIT_INPUT):
        super().__init__(msg)
        self.code = code


def _require(args, name: str):
    v = getattr(args, name, None)
    if v in (None, ""):
        raise CliError(f"--{name.replace('_', '-')} is required for '{args.command}'")
    return v


def _existing(path: str, what: str) -> str:
    if not Path(path).is_file():
        raise CliError(f"{what} not found: {path}")
    return path


def _model(args):
    return load_model(_existing(_require(args, "config"), "config"))


def _field(args) -> FieldVector:
    try:
        return FieldVector.parse(_require(args, "field"))
    except ValueError as exc:
        raise CliError(str(exc)) from None


def _out_dir(args) -> Path:
    if args.out:
        return Path(args.out)
    stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S")
    return Path("out") / f"{args.command}-{stamp}"


def _emit(args, inputs: dict, params: dict, writers: list) -> Path:
    """Create the output directory only once everything is computed."""
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    manifest = fio.RunManifest.create(args.command, inputs, params)
    for name, write in writers:
        write(out / name)
        manifest.outputs.append(name)
    manifest.write(out)
    print(out)
    return out


def _labels(text: str) -> list[tuple[int, int]]:
    return [parse_transition(t) for t in text.split(",") if t.strip()]


# -- subcommands ----------------------------------------------------------------


def cmd_levels(args):
    model, B = _model(args), _field(args)
    lev = solve(model, B, args.subsite)
    summary = {
        "field_mT": list(B.as_array()),
        "subsite": args.subsite,
        "ground_MHz": lev.ground.energies,
        "excited_MHz": lev.excited.energies,
        "T0_MHz": lev.transition_offsets(),
    }
    log.info("ground %s", np.round(lev.ground.energies, 4))
    log.info("excited %s", np.round(lev.excited.energies, 4))
    return _emit(
        args,
        {"config": args.config},
        {"field": args.field, "subsite": args.subsite},
        [
            ("levels.csv", lambda p: fio.write_levels_csv(p, lev)),
            ("transitions.csv", lambda p: fio.write_transitions_csv(p, lev)),
            ("levels.json", lambda p: fio.write_json(p, summary)),
        ],
    )


def cmd_branching(args):
    model, B = _model(args), _field(args)
    g = solve(model, B, args.subsite).branching()
    return _emit(
        args,
        {"config": args.config},
        {"field": args.field, "subsite": args.subsite},
        [("branching_percent.csv", lambda p: fio.write_matrix_csv(p, g, 100.0))],
    )


def _scheme_pumps(stage: dict, t0: np.ndarray, zero: float, grid: DetuningGrid, where: str) -> PumpSequence:
    seqs = []
    for k, pump in enumerate(stage.get("pumps", [])):
        if "transition" in pump:
            i, j = parse_transition(pump["transition"])
            centre = t0[i - 1, j - 1] - zero
        elif "center_MHz" in pump:
            centre = float(pump["center_MHz"])
        else:
            raise ConfigError(f"{where}.pumps[{k}]: needs 'transition' or 'center_MHz'")
        sweep = float(pump.get("sweep_MHz", 0.0))
        n = int(pump.get("repeat", 1))
        seqs.append(chirp(centre, sweep, grid, n) if sweep > 0 else burn(centre, grid, n))
    return repeat(concat(*seqs), int(stage.get("repeat", 1)))


def run_scheme(model, B: FieldVector, scheme: dict):
    """Run a pumping scheme; returns (before, after, diff, summary)."""
    g = scheme.get("grid", {})
    grid = DetuningGrid.symmetric(
        float(g.get("half_span_MHz", 150.0)),
        float(g.get("step_MHz", 0.01)),
        g.get("profile", "flat"),
        g.get("fwhm_MHz"),
    )
    fwhm = float(scheme.get("lorentz_fwhm_MHz", 0.05))
    lev = solve(model, B, int(scheme.get("subsite", 1)))
    gsrc = scheme.get("gamma", "uniform")
    if gsrc == "uniform":
        gamma = UNIFORM_GAMMA
    elif gsrc == "model":
        gamma = lev.branching()
    else:
        raise ConfigError(f"scheme gamma must be 'uniform' or 'model', got {gsrc!r}")
    t0 = class_shifts(lev, grid) * grid.step
    ref = scheme.get("reference")
    zero = 0.0
    if ref is not None:
        i, j = parse_transition(ref)
        zero = t0[i - 1, j - 1]
    stages = scheme.get("stages", [])
    seqs = [_scheme_pumps(st, t0, zero, grid, f"stages[{n}]") for n, st in enumerate(stages)]
    split = int(scheme.get("split", max(len(stages) - 1, 0)))
    if not 0 <= split <= len(stages):
        raise ConfigError(f"scheme split {split} outside 0..{len(stages)}")
    chi = normalization(grid, gamma, lev, fwhm)
    pop = init_thermal(grid)
    reports, before = [], None
    for n, seq in enumerate(seqs):
        if n == split:
            before = synthesize_spectrum(pop, gamma, lev, lorentz_fwhm=fwhm, chi=chi)
        pop, rep = apply_pump(pop, seq, gamma, lev)
        reports.append({"stage": stages[n].get("name", str(n)), **rep.__dict__})
        if rep.skipped:
            log.warning("stage %s: %d class hits fell outside the grid", n, rep.skipped)
    after = synthesize_spectrum(pop, gamma, lev, lorentz_fwhm=fwhm, chi=chi)
    if before is None:  # split after the last stage
        before = after
    diff = shb_difference(before, after)
    thr = float(scheme.get("extrema_threshold", 1e-4))
    holes, anti = count_extrema(diff, thr)
    summary = {
        "grid": grid.to_dict(),
        "lorentz_fwhm_MHz": fwhm,
        "gamma_source": gsrc,
        "chi": chi,
        "stages": reports,
        "extrema_threshold": thr,
        "holes": len(holes),
        "antiholes": len(anti),
        "od_after_at_zero": after.at(0.0),
    }
    return before, after, diff, summary


def cmd_simulate(args):
    model, B = _model(args), _field(args)
    scheme = fio.read_json(_existing(_require(args, "scheme"), "scheme"))
    try:
        before, after, diff, summary = run_scheme(model, B, scheme)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    sidecar = {**after.metadata(), "summary": summary}
    return _emit(
        args,
        {"config": args.config, "scheme": args.scheme},
        {"field": args.field, "scheme": scheme},
        [
            ("spectrum_before.csv", lambda p: fio.write_spectrum_csv(p, before.freqs, {"od": before.od})),
            ("spectrum_after.csv", lambda p: fio.write_spectrum_csv(p, after.freqs, {"od": after.od})),
            ("spectrum_diff.csv", lambda p: fio.write_spectrum_csv(p, diff.freqs, {"od": diff.od})),
            ("spectrum.json", lambda p: fio.write_json(p, sidecar)),
        ],
    )


def cmd_shb_catalog(args):
    model, B = _model(args), _field(args)
    burn_t = parse_transition(args.burn) if args.burn else None
    try:
        cat = shb_catalog(model, B, args.mode, burn_t, args.tol, args.subsite)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    summary = {"counts": list(cat.counts), "expected": list(cat.expected), "collisions": list(cat.collisions), "mode": cat.mode, "tol_MHz": cat.tolerance}
    return _emit(
        args,
        {"config": args.config},
        {"field": args.field, "mode": args.mode, "burn": args.burn, "tol": args.tol, "subsite": args.subsite},
        [("catalog.csv", lambda p: fio.write_catalog_csv(p, cat)), ("catalog.json", lambda p: fio.write_json(p, summary))],
    )


def cmd_rhs_lines(args):
    model, B = _model(args), _field(args)
    out = rhs_lines(model, B).to_dict()
    if args.slopes:
        s = subsite_split_slopes(model, B, args.b_range)
        out["split_slopes_kHz_per_mT"] = s.slopes
        out["split_crossing_b_mT"] = s.crossing_b
    return _emit(args, {"config": args.config}, {"field": args.field, "slopes": args.slopes, "b_range": args.b_range}, [("rhs_lines.json", lambda p: fio.write_json(p, out))])


def cmd_fit_field(args):
    model = _model(args)
    data = _existing(_require(args, "data"), "data file")
    try:
        B0 = FieldVector.parse(_require(args, "init"))
    except ValueError as exc:
        raise CliError(str(exc)) from None
    try:
        if args.mode == "rhs":
            res = fit_field_rhs(model, fio.read_rhs_csv(data), B0, args.plane)
        else:
            res = fit_field_shb(model, fio.read_shb_csv(data), B0, args.plane)
    except ConvergenceError as exc:
        raise CliError(str(exc), EXIT_CONVERGENCE) from None
    except RankError as exc:
        raise CliError(str(exc), EXIT_RANK) from None
    except ValueError as exc:
        raise CliError(str(exc)) from None
    log.info("B = %s mT, rms %.2f kHz", np.round(res.B.as_array(), 3), res.rms_khz)
    return _emit(
        args,
        {"config": args.config, "data": data},
        {"mode": args.mode, "init": args.init, "plane": args.plane},
        [("field_fit.json", lambda p: fio.write_json(p, res.to_dict()))],
    )


def _calibrated(args):
    data = _existing(_require(args, "data"), "data file")
    recs = fio.read_rabi_csv(data)
    try:
        return data, power_calibrate(recs, parse_transition(args.reference))
    except ValueError as exc:
        raise CliError(str(exc)) from None


def cmd_calibrate(args):
    data, cal = _calibrated(args)
    return _emit(args, {"data": data}, {"reference": args.reference}, [("calibrated.csv", lambda p: fio.write_calibrated_csv(p, cal))])


def cmd_fit_gamma(args):
    data, cal = _calibrated(args)
    zeros = _labels(_require(args, "zeros"))
    if args.initial:
        init = fio.read_percent_table(_existing(args.initial, "initial gamma table"))
    elif args.config and args.field:
        init = solve(_model(args), _field(args)).branching()
    else:
        raise CliError("fit-gamma needs --initial <table> or --config with --field for the starting gamma")
    ref = [r for r in cal if r.element == parse_transition(args.reference)][0]
    try:
        problem = GammaFitProblem(cal, zeros, ref.power, init)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    rank = check_invertibility(problem)
    if not rank.invertible:
        raise CliError(f"element selection not invertible: rank {rank.rank} < 36", EXIT_RANK)
    try:
        res = fit_gamma(problem)
    except InvertibilityError as exc:
        raise CliError(str(exc), EXIT_RANK) from None
    except GammaConvergenceError as exc:
        raise CliError(str(exc), EXIT_CONVERGENCE) from None
    out = res.to_dict()
    out["rank"] = rank.to_dict()
    if args.optics:
        optics = OpticsConfig.from_dict(fio.read_json(_existing(args.optics, "optics config")))
        dip = dipole_moment(res.omega, optics, res.omega_err)
        out["E_V_per_m"] = dip.E
        out["mu_Cm"] = dip.mu
        out["mu_err_Cm"] = dip.mu_err
    if res.saturated:
        log.warning("bound-saturated parameters: %s", ", ".join(res.saturated))
    log.info("Omega_ge = %.1f +- %.1f kHz", res.omega, res.omega_err)
    return _emit(
        args,
        {"data": data, "initial": args.initial, "config": args.config, "optics": args.optics},
        {"reference": args.reference, "zeros": args.zeros, "field": args.field, "penalty": problem.penalty},
        [
            ("gamma_fit.json", lambda p: fio.write_json(p, out)),
            ("gamma_percent.csv", lambda p: fio.write_matrix_csv(p, res.gamma, 100.0, res.gamma_err)),
        ],
    )


def cmd_fit_rabi_trace(args):
    data = _existing(_require(args, "data"), "data file")
    t, y = fio.read_trace_csv(data)
    try:
        fit = fit_damped_cosine(t, y)
    except GammaConvergenceError as exc:
        raise CliError(str(exc), EXIT_CONVERGENCE) from None
    except ValueError as exc:
        raise CliError(str(exc)) from None
    return _emit(args, {"data": data}, {}, [("rabi_trace_fit.json", lambda p: fio.write_json(p, fit.__dict__))])


COMMANDS = {
    "levels": cmd_levels,
    "branching": cmd_branching,
    "simulate": cmd_simulate,
    "shb-catalog": cmd_shb_catalog,
    "rhs-lines": cmd_rhs_lines,
    "fit-field": cmd_fit_field,
    "fit-gamma": cmd_fit_gamma,
    "calibrate": cmd_calibrate,
    "fit-rabi-trace": cmd_fit_rabi_trace,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="spin-Hamiltonian tensor JSON")
    common.add_argument("--field", help='field vector "bD1,bD2,bb" in mT')
    common.add_argument("--out", help="output directory (default ./out/<command>-<timestamp>)")
    common.add_argument("--threads", type=int, default=None, help="worker threads for numba kernels")
    common.add_argument("--verbose", "-v", action="store_true")

    p = argparse.ArgumentParser(prog="euyso", description="Hyperfine level, pumping and fitting tools.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    for name in ("levels", "branching"):
        s = sub.add_parser(name, parents=[common])
        s.add_argument("--subsite", type=int, choices=(1, 2), default=1)

    s = sub.add_parser("simulate", parents=[common], help="run a pumping scheme and emit spectra")
    s.add_argument("--scheme", help="scheme JSON")

    s = sub.add_parser("shb-catalog", parents=[common])
    s.add_argument("--mode", choices=("all", "single"), default="all")
    s.add_argument("--burn", help="burned transition for single mode, e.g. 5g-6e")
    s.add_argument("--tol", type=float, default=1e-3, help="dedupe tolerance (MHz)")
    s.add_argument("--subsite", type=int, choices=(1, 2), default=1)

    s = sub.add_parser("rhs-lines", parents=[common])
    s.add_argument("--slopes", action="store_true", help="also fit subsite split slopes in b")
    s.add_argument("--b-range", type=float, default=5.0)

    s = sub.add_parser("fit-field", parents=[common])
    s.add_argument("--mode", choices=("rhs", "shb"), default="rhs")
    s.add_argument("--data")
    s.add_argument("--init", help='initial field "bD1,bD2,bb" in mT')
    s.add_argument("--plane", action="store_true", help="constrain the field to the D1-D2 plane")

    s = sub.add_parser("fit-gamma", parents=[common])
    s.add_argument("--data", help="rabi CSV: transition,raw_kHz,err_kHz,power_W")
    s.add_argument("--zeros", help='elements held at zero, e.g. "5g-1e,5g-2e,6g-1e,6g-2e"')
    s.add_argument("--reference", default="3g-6e")
    s.add_argument("--initial", help="starting gamma table in percent (ground,1e..6e)")
    s.add_argument("--optics", help="optics JSON (power_W, waist_m, refractive_index)")

    s = sub.add_parser("calibrate", parents=[common])
    s.add_argument("--data")
    s.add_argument("--reference", default="3g-6e")

    s = sub.add_parser("fit-rabi-trace", parents=[common])
    s.add_argument("--data", help="trace CSV: tau_us,od")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads:
        import numba

        numba.set_num_threads(max(1, min(args.threads, numba.config.NUMBA_NUM_THREADS)))
        os.environ.setdefault("OMP_NUM_THREADS", str(args.threads))
    try:
        COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return 0


if __name__ == "__main__":
    sys.exit(main())
