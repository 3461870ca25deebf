"""Command-line entry point ``tlsqsr``.

Subcommands::

    simulate     one ensemble -> moments.csv
    thermo-scan  equilibrium observables over a temperature grid -> thermo.csv
    qsr-scan     driven steady state over omega or T -> qsr_<axis>.csv
    reference    analytic tables over T (or omega) -> reference.csv
    spectrum     Fourier analysis of an existing moments.csv -> fourier.csv

``qsr-scan`` starts from ``epsilon1 = 0.5`` instead of the undriven
default.  Every configuration key is also a long flag (``--n_traj 100`` or
``--n-traj 100``); flags override ``--config``.  On failure a JSON error
object is printed on stderr and the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__, analytic, ensemble, spectral
from . import io as rio
from .results import rows_to_columns

log = logging.getLogger("tlsqsr")

EXIT_USAGE = 2
EXIT_RUNTIME = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def _add_config_flags(ap: argparse.ArgumentParser) -> None:
    g = ap.add_argument_group("configuration keys (override --config)")
    for key in rio.config_keys():
        if key in ("seed", "out"):
            continue
        flags = [f"--{key}"]
        if "_" in key:
            flags.append(f"--{key.replace('_', '-')}")
        g.add_argument(*flags, dest=f"cfg_{key}", metavar="VALUE", default=None)


def _common(ap: argparse.ArgumentParser) -> None:
    ap.add_argument("--config", type=Path, help="key = value configuration file")
    ap.add_argument("--seed", default=None, help="master seed")
    ap.add_argument("--out", default=None, help="output directory")
    ap.add_argument("--force", action="store_true", help="overwrite existing outputs")
    ap.add_argument("--threads", type=int, default=None, help="worker threads (or SIM_THREADS)")
    ap.add_argument("--no-plots", action="store_true", help="skip PNG figures")
    ap.add_argument("-v", "--verbose", action="store_true")
    _add_config_flags(ap)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="tlsqsr", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="run one ensemble")
    _common(p)

    p = sub.add_parser("thermo-scan", help="equilibrium scan over temperature")
    _common(p)

    p = sub.add_parser("qsr-scan", help="driven steady-state scan")
    p.add_argument("--axis", choices=("omega", "temperature"), default="omega")
    _common(p)

    p = sub.add_parser("reference", help="analytic reference tables")
    p.add_argument("--axis", choices=("temperature", "omega"), default="temperature")
    _common(p)

    p = sub.add_parser("spectrum", help="Fourier analysis of a moments CSV")
    p.add_argument("input", type=Path, help="moments.csv written by simulate")
    _common(p)
    return ap


# subcommand defaults that differ from the plain configuration defaults
_BASE = {"qsr-scan": {"epsilon1": 0.5}}


def resolve_config(args) -> rio.RunConfig:
    """Defaults, then ``--config``, then flags."""
    base = rio.RunConfig(**_BASE.get(getattr(args, "command", None), {}))
    cfg = rio.load_config(args.config, base) if args.config else base
    changes = {}
    for key in rio.config_keys():
        raw = getattr(args, f"cfg_{key}", None)
        if raw is not None:
            changes[key] = rio.coerce_value(key, raw)
    if args.seed is not None:
        changes["seed"] = rio.coerce_value("seed", args.seed)
    if args.out is not None:
        changes["out"] = args.out
    return cfg.replace(**changes) if changes else cfg


def _summary(cfg, t0, **extra) -> dict:
    out = {"tool": "tlsqsr", "version": __version__, "wall_time_s": time.time() - t0}
    out.update(extra)
    return out


def _plots(args) -> bool:
    return not args.no_plots


def cmd_simulate(args, cfg: rio.RunConfig) -> list[Path]:
    t0 = time.time()
    p = cfg.system_params()
    icfg = cfg.integrator_config()
    if p.driven:
        icfg = ensemble.align_to_period(icfg, p)
    names = ["moments.csv", "summary.json"]
    rio.prepare_output_dir(cfg.out, names, args.force)
    ms = ensemble.run_ensemble(p, cfg.noise_config(), icfg, cfg.ensemble_config(args.threads))
    cols = {k: getattr(ms, k) for k in ms.CSV_COLUMNS}
    cols.update(mean_H0=ms.mean_H0, var_H0=ms.var_H0, mean_sx=ms.mean_sx, mean_sy=ms.mean_sy)
    extra = {"exclusions": ms.summary(), "dt_used": icfg.dt}
    try:
        aa = ensemble.asymptotic_average(ms, n_blocks=cfg.n_blocks)
        extra["asymptotic"] = {
            "z": aa.z, "se_z": aa.se_z, "cos_phi": aa.cos_phi, "se_cos_phi": aa.se_cos_phi,
            "E": aa.E, "se_E": aa.se_E, "H0": aa.H0, "se_H0": aa.se_H0,
        }
        if p.temperature > 0:
            extra["asymptotic"]["cv_fluct"] = ensemble.heat_capacity_fluct(ms, None, p.temperature).value
            extra["asymptotic"]["cv_fluct_h0"] = ensemble.heat_capacity_fluct(
                ms, None, p.temperature, estimator="h0").value
    except ensemble.WindowError as exc:
        extra["asymptotic"] = {"error": str(exc)}
    out = rio.persist({"moments.csv": cols}, _summary(cfg, t0, **extra), cfg.out, cfg, force=True)
    if _plots(args):
        from . import plotting

        out.append(plotting.plot_moments(cols, Path(cfg.out) / "moments.png", ms.window))
    return out


def cmd_thermo_scan(args, cfg: rio.RunConfig) -> list[Path]:
    t0 = time.time()
    rio.prepare_output_dir(cfg.out, ["thermo.csv", "summary.json"], args.force)
    res = ensemble.thermo_scan(
        cfg.system_params(), cfg.temperature_grid(), cfg.noise_config(),
        cfg.integrator_config(), cfg.ensemble_config(args.threads), e0=cfg.e0,
    )
    out = rio.persist({"thermo.csv": res.columns}, _summary(cfg, t0, failures=res.meta["failures"]),
                      cfg.out, cfg, force=True)
    if _plots(args):
        from . import plotting

        refs = {"z_eq": ["z_ref", "z_cl"], "cos_phi_eq": ["cos_phi_ref", "cos_phi_cl"],
                "cv_fluct_h0": ["cv_ref", "cv_cl"]}
        out.append(plotting.plot_scan(res.columns, "T", ["z_eq", "cos_phi_eq", "cv_fluct_h0"],
                                      Path(cfg.out) / "thermo.png", refs=refs))
    return out


def cmd_qsr_scan(args, cfg: rio.RunConfig) -> list[Path]:
    t0 = time.time()
    p = cfg.system_params()
    name = f"qsr_{args.axis}.csv"
    rio.prepare_output_dir(cfg.out, [name, "summary.json", "peaks.json"], args.force)
    cfgs = (cfg.noise_config(), cfg.integrator_config(), cfg.ensemble_config(args.threads),
            cfg.spectral_config())
    if args.axis == "omega":
        res = spectral.qsr_scan_omega(p, cfg.omega_grid(), *cfgs, threshold=cfg.peak_threshold)
    else:
        res = spectral.qsr_scan_temperature(p, cfg.temperature_grid(), *cfgs)
    summary = _summary(cfg, t0, failures=res.meta["failures"])
    out = rio.persist({name: res.columns}, summary, cfg.out, cfg, force=True)
    out.append(rio.write_json(Path(cfg.out) / "peaks.json", res.report))
    if _plots(args):
        from . import plotting

        peaks = {"eta1": res.report.get("peaks", [])}
        out.append(plotting.plot_scan(res.columns, res.control, ["eta1", "z0"],
                                      Path(cfg.out) / f"qsr_{args.axis}.png", peaks=peaks))
    return out


def reference_table(cfg: rio.RunConfig, axis: str = "temperature") -> dict[str, np.ndarray]:
    """Analytic observables on the configured grid."""
    p = cfg.system_params()
    if axis == "omega":
        omegas = cfg.omega_grid()
        rows = []
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            for w in omegas:
                lr = analytic.linear_response_p1(w, p.beta, p, cfg.omega_c, warn=False)
                rows.append({"omega": w, "p1": lr.p1.real, "lambda": lr.lam,
                             "omega_c": lr.omega_c, "f": lr.f_value,
                             "eta1": 4 * math.pi * abs(lr.p1 / p.epsilon1) ** 2 if p.epsilon1 else math.nan})
        return rows_to_columns(rows)
    rows = []
    for temp in cfg.temperature_grid():
        beta = 1.0 / temp
        ref = analytic.thermal_averages(beta, p, cfg.e0)
        row = {
            "T": temp, "beta": beta,
            "Z": analytic.quantum_partition(beta, p),
            "z_avg": ref.z_avg, "sigmax_avg": ref.sigmax_avg,
            "coherence": ref.coherence_factor, "energy": ref.energy_avg,
            "entropy": ref.entropy, "cv": ref.heat_capacity,
            "Z_cl": analytic.classical_partition(beta, p),
            "z_cl": analytic.classical_z_average(beta, p),
            "energy_cl": analytic.classical_energy(beta, p),
            "cv_cl": analytic.classical_heat_capacity(beta, p),
        }
        if p.driven:
            lr = analytic.linear_response_p1(p.omega, beta, p, cfg.omega_c, warn=False)
            row["p1_lr"] = lr.p1.real
        rows.append(row)
    return rows_to_columns(rows)


def cmd_reference(args, cfg: rio.RunConfig) -> list[Path]:
    t0 = time.time()
    rio.prepare_output_dir(cfg.out, ["reference.csv", "summary.json"], args.force)
    cols = reference_table(cfg, args.axis)
    extra = {
        "critical_temperature": analytic.critical_temperature(cfg.system_params()),
        "schottky_peak_temperature": analytic.schottky_peak_temperature(cfg.system_params()),
    }
    if cfg.epsilon > 0:
        extra["T_qsr"] = analytic.qsr_temperature(cfg.system_params())
    out = rio.persist({"reference.csv": cols}, _summary(cfg, t0, **extra), cfg.out, cfg, force=True)
    if _plots(args):
        from . import plotting

        x = "T" if args.axis == "temperature" else "omega"
        ys = ["z_avg", "coherence", "cv"] if x == "T" else ["p1"]
        out.append(plotting.plot_scan(cols, x, ys, Path(cfg.out) / "reference.png"))
    return out


def cmd_spectrum(args, cfg: rio.RunConfig) -> list[Path]:
    t0 = time.time()
    cols, comments = rio.read_csv(args.input)
    sib = args.input.with_name("summary.json")
    window = None
    if sib.exists():
        info = json.loads(sib.read_text())
        w = info.get("exclusions", {}).get("window")
        window = tuple(w) if w else None
        # drive parameters of the source run, unless given explicitly
        src = info.get("config", {})
        inherit = {k: src[k] for k in ("epsilon", "delta", "epsilon1", "omega")
                   if k in src and getattr(args, f"cfg_{k}") is None}
        if args.seed is None and "seed" in src:
            inherit["seed"] = src["seed"]
        cfg = cfg.replace(**inherit)
    if cfg.window_start is not None:
        window = (cfg.window_start, cfg.window_end)
    if window is None:
        raise rio.ConfigError("no window: give window_start/window_end or keep summary.json beside the CSV")
    rio.prepare_output_dir(cfg.out, ["fourier.csv", "summary.json"], args.force)
    p = cfg.system_params()
    fc = spectral.fourier_coefficients((cols["t"], cols["mean_z"]), p.omega, window,
                                       cfg.m_max, p.epsilon1)
    table = {"m": fc.m, "nu": fc.m * fc.omega, "re": fc.p.real, "im": fc.p.imag,
             "abs": np.abs(fc.p), "weight": np.abs(fc.p) ** 2}
    if p.epsilon1 > 0:
        table["eta"] = spectral.power_amplitudes(fc).eta
    extra = {
        "source": str(args.input), "source_config_hash": comments.get("config_hash"),
        "window": list(window), "n_periods": fc.n_periods,
        "hermitian_defect": fc.hermitian_defect(), "parseval_defect": fc.parseval_defect(),
        "mean_square": fc.mean_square, "line_power": fc.line_power,
        "residual_power": fc.residual_power,
    }
    out = rio.persist({"fourier.csv": table}, _summary(cfg, t0, **extra), cfg.out, cfg, force=True)
    if _plots(args):
        from . import plotting

        out.append(plotting.plot_lines(fc.m, np.abs(fc.p) ** 2, Path(cfg.out) / "fourier.png"))
    return out


COMMANDS = {
    "simulate": cmd_simulate,
    "thermo-scan": cmd_thermo_scan,
    "qsr-scan": cmd_qsr_scan,
    "reference": cmd_reference,
    "spectrum": cmd_spectrum,
}

def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        return _fail("usage", str(exc), EXIT_USAGE)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        written = COMMANDS[args.command](args, cfg)
    except rio.ConfigError as exc:
        return _fail("config", str(exc), EXIT_USAGE)
    except rio.OutputExistsError as exc:
        return _fail("output_exists", str(exc), EXIT_USAGE)
    except (ensemble.EnsembleError, ensemble.WindowError, OSError, ValueError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_RUNTIME)
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
