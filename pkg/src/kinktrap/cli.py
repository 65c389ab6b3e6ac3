"""Command-line entry point: ``kinktrap <command> [options]``.

Every run writes its outputs plus ``manifest.json`` (resolved config,
parameters, seeds, version, SHA-256 digests of the outputs and wall time)
into ``--out``. Exit codes: 0 success, 2 configuration error, 3 physics
error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import configparser
import copy
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np
import scipy.constants as const

from . import __version__
from .errors import ConfigError, PhysicsError

FORMAT_VERSION = 1
EXIT_CONFIG, EXIT_PHYSICS, EXIT_IO = 2, 3, 4

# Axial frequency of the default trap, used to express scaled defaults in SI.
_W0 = 2.0 * math.pi * 56e3

DEFAULTS = {
    "species": {
        "mass_amu": 24.0,
        "charge_e": 1.0,
        "wavelength_m": 280e-9,
        "linewidth_hz": 42e6,
    },
    "trap": {
        "model": "harmonic",
        "rf_hz": 6.22e6,
        "axial_hz": 56e3,
        "radial_y_hz": 620e3,
        "ratio": 1.05,
    },
    "laser": {
        "detuning_linewidths": -1.0,
        "saturation": 0.2,
        "tilt_deg": 5.0,
    },
    "integration": {
        "timestep_s": 0.01 / _W0,
        "damping_per_s": 20.0 * _W0,
    },
    "quench": {
        "initial_temperature_td": 50.0,
        "ramp_time_s": 200.0 / _W0,
        "damping_per_s": 0.05 * _W0,
        "settle_time_s": 1500.0 / _W0,
        "settle_temperature_td": 6.0,
        "final_time_s": 100.0 / _W0,
        "final_damping_per_s": 0.5 * _W0,
        "stationary_time_s": 50.0 / _W0,
        "max_extensions": 2,
        "laser": False,
    },
    "camera": {
        "pixel_size_m": 0.8e-6,
        "width_px": 1024,
        "height_px": 64,
        "exposure_s": 1e-3,
        "psf_sigma_m": 1e-6,
        "tilt_x_deg": 0.0,
        "tilt_y_deg": 0.0,
    },
}


def _coerce(default, text: str, key: str):
    if isinstance(default, bool):
        low = text.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {text!r}")
    if isinstance(default, int):
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {text!r}") from None
    if isinstance(default, float):
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {text!r}") from None
    return text.strip()


def _set(cfg: dict, dotted: str, text: str) -> None:
    section, _, key = dotted.partition(".")
    if section not in cfg or key not in cfg[section]:
        raise ConfigError(f"unknown config key {dotted!r}")
    cfg[section][key] = _coerce(DEFAULTS[section][key], text, dotted)


def load_config(path=None, overrides=()) -> dict:
    """Defaults, then an INI file (or a manifest's resolved config), then ``section.key=value`` overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        if path.suffix == ".json":
            try:
                resolved = json.loads(path.read_text())["config"]
            except (ValueError, KeyError) as exc:
                raise ConfigError(f"{path} is not a run manifest: {exc}") from None
            for section, values in resolved.items():
                for key, value in values.items():
                    _set(cfg, f"{section}.{key}", str(value))
        else:
            parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
            try:
                parser.read(path)
            except configparser.Error as exc:
                raise ConfigError(f"cannot parse {path}: {exc}") from None
            for section in parser.sections():
                if section not in cfg:
                    raise ConfigError(f"unknown config section [{section}]")
                for key, value in parser.items(section):
                    _set(cfg, f"{section}.{key}", value)
    for item in overrides:
        dotted, eq, value = item.partition("=")
        if not eq:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        _set(cfg, dotted.strip(), value)
    return cfg


class Context:
    """Typed objects built from a resolved config."""

    def __init__(self, cfg: dict):
        from .imaging import CameraConfig
        from .model import LaserConfig, SpeciesConfig, UnitScale, make_trap

        sp = cfg["species"]
        self.species = SpeciesConfig(sp["mass_amu"] * const.atomic_mass, sp["charge_e"] * const.e,
                                     sp["wavelength_m"], 2.0 * math.pi * sp["linewidth_hz"])
        tr = cfg["trap"]
        wy = 2.0 * math.pi * tr["radial_y_hz"]
        self.trap = make_trap(2.0 * math.pi * tr["rf_hz"], 2.0 * math.pi * tr["axial_hz"], wy, tr["ratio"] * wy,
                              tr["model"], species=self.species)
        self.scale = UnitScale.from_trap(self.trap)
        la = cfg["laser"]
        t = math.radians(la["tilt_deg"])
        self.laser = LaserConfig(la["detuning_linewidths"] * self.species.natural_linewidth, la["saturation"],
                                 (math.cos(t), math.sin(t), 0.0), 2.0 * math.pi / self.species.transition_wavelength)
        ca = cfg["camera"]
        self.camera = CameraConfig(ca["pixel_size_m"], ca["width_px"], ca["height_px"], ca["exposure_s"],
                                   ca["psf_sigma_m"], math.radians(ca["tilt_x_deg"]), math.radians(ca["tilt_y_deg"]))
        self.cfg = cfg

    def scaled_time(self, seconds: float) -> float:
        return seconds / self.scale.time

    def scaled_rate(self, per_second: float) -> float:
        return per_second * self.scale.time

    @property
    def timestep(self) -> float:
        return self.scaled_time(self.cfg["integration"]["timestep_s"])

    def schedule(self):
        from .quenchlab import QuenchSchedule

        q = self.cfg["quench"]
        return QuenchSchedule(
            initial_temperature=q["initial_temperature_td"],
            ramp_time=self.scaled_time(q["ramp_time_s"]),
            gamma=self.scaled_rate(q["damping_per_s"]),
            settle_time=self.scaled_time(q["settle_time_s"]),
            settle_temperature=q["settle_temperature_td"],
            final_time=self.scaled_time(q["final_time_s"]),
            final_gamma=self.scaled_rate(q["final_damping_per_s"]),
            dt=self.timestep,
            stationary_time=self.scaled_time(q["stationary_time_s"]),
            max_extensions=q["max_extensions"],
        )


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if ".." in part:
                a, b = part.split("..")
                out.extend(range(int(a), int(b) + 1))
            else:
                out.append(int(part))
        except ValueError:
            raise ConfigError(f"expected integers or ranges like 40..56, got {text!r}") from None
    return out


def _write_json(path: Path, data) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _structure(ctx: Context, n: int, kink: bool, seed: int):
    from .statics import centered_kink, ground_state

    if n < 1:
        raise ConfigError("ion count must be at least 1")
    return centered_kink(n, ctx.trap) if kink else ground_state(n, ctx.trap, seed=seed)


def cmd_relax(ctx: Context, args, out: Path) -> list[str]:
    from .statics import write_config_csv, write_summary_json

    cfg = _structure(ctx, args.ions, args.kink, args.seed)
    write_config_csv(cfg, out / "positions.csv", ctx.scale)
    write_summary_json(cfg, out / "summary.json", ctx.scale)
    return ["positions.csv", "summary.json"]


def cmd_modes(ctx: Context, args, out: Path) -> list[str]:
    from .modes import anharmonic_scan, kink_mode, localization, normal_modes, write_spectrum_csv, write_table_csv
    from .statics import find_kinks

    cfg = _structure(ctx, args.ions, args.kink, args.seed)
    spec = normal_modes(cfg)
    axial_hz = ctx.cfg["trap"]["axial_hz"]
    write_spectrum_csv(spec, out / "spectrum.csv", axial_hz)
    files = ["spectrum.csv"]
    kinks = find_kinks(cfg)
    info = {"N": cfg.n, "kink_count": len(kinks), "lowest_nonzero_frequency_Hz": float(spec.frequencies[0] * axial_hz)}
    if len(kinks) == 1:
        m = kink_mode(spec, kinks[0].core_ion_indices)
        loc = localization(spec)
        info.update({"kink_mode_index": m, "omega_low_over_omega_x": float(spec.frequencies[m]),
                     "kink_mode_IPR": float(loc.ipr[m]), "kink_mode_top_ions": list(loc.dominant_ions[m]),
                     "core_ions": list(kinks[0].core_ion_indices)})
        if args.amplitudes:
            amps = _floats(args.amplitudes)
            rows = anharmonic_scan(spec, m, [a / ctx.scale.length for a in amps])
            write_table_csv([(a, r.frequency * axial_hz, r.status) for a, r in zip(amps, rows)],
                            ["amplitude_m", "frequency_Hz", "status"], out / "anharmonic.csv")
            files.append("anharmonic.csv")
    _write_json(out / "modes.json", info)
    return files + ["modes.json"]


def cmd_quench(ctx: Context, args, out: Path) -> list[str]:
    from .dynamics import CoolingParams
    from .quenchlab import kink_statistics, write_table

    ns = _ints(args.ions_list)
    if not ns:
        raise ConfigError("no ion numbers given")
    cooling = CoolingParams.doppler(ctx.laser, ctx.scale) if ctx.cfg["quench"]["laser"] else None
    table = kink_statistics(ns, args.trials, args.seed, ctx.trap, ctx.schedule(), cooling=cooling,
                            workers=args.workers)
    write_table(table, out / "occurrence.csv", out / "trials.jsonl")
    return ["occurrence.csv", "trials.jsonl"]


def cmd_pn(ctx: Context, args, out: Path) -> list[str]:
    from .pnscan import pn_barrier, write_profile_csv

    gamma = ctx.scaled_rate(ctx.cfg["integration"]["damping_per_s"])
    res = pn_barrier(args.ions, ctx.trap, gamma)
    files = []
    if res.profile is not None:
        write_profile_csv(res.profile, out / "profile.csv", ctx.scale)
        files.append("profile.csv")
    kt = ctx.scale.kT_doppler
    info = {"N": args.ions, "barrier_over_kB_TD": res.barrier / kt, "status": res.status,
            "saddle_position_um": res.saddle_position * ctx.scale.length * 1e6}
    if res.profile is not None:
        info["asymmetry"] = res.profile.asymmetry()
    _write_json(out / "pn_summary.json", info)
    return files + ["pn_summary.json"]


def cmd_sweep(ctx: Context, args, out: Path) -> list[str]:
    from .pnscan import barrier_sweep, write_sweep

    ns = _ints(args.ions_list)
    if len(ns) < 1:
        raise ConfigError("no ion numbers given")
    res = barrier_sweep(ns, ctx.trap, workers=args.workers)
    write_sweep(res, out / "sweep.csv", out / "sweep.json", ctx.scale)
    return ["sweep.csv", "sweep.json"]


def cmd_render(ctx: Context, args, out: Path) -> list[str]:
    from .dynamics import NO_COOLING, ScaledLaser, simulate
    from .imaging import blur_metric, write_pgm, render_frame
    from .modes import kink_mode, normal_modes, thermal_sample, write_table_csv
    from .statics import find_kinks

    cfg = _structure(ctx, args.ions, args.kink, args.seed)
    spec = normal_modes(cfg)
    modes = None
    if args.single_mode:
        kinks = find_kinks(cfg)
        if len(kinks) != 1:
            raise ConfigError("--single-mode needs a structure with exactly one kink")
        modes = [kink_mode(spec, kinks[0].core_ion_indices)]
    rng = np.random.default_rng(args.seed)
    state = thermal_sample(spec, args.temperature * ctx.scale.kT_doppler, rng, modes=modes)
    dt = ctx.timestep
    exposure = ctx.camera.exposure
    traj = simulate(state, ctx.trap, NO_COOLING, ctx.scaled_time(exposure) + 2 * args.stride * dt, dt, args.stride,
                    args.seed)
    laser = ScaledLaser.from_laser(ctx.laser, ctx.scale) if args.laser_weighting else None
    frame = render_frame(traj, ctx.camera, ctx.scale, laser)
    write_pgm(frame, out / "frame.pgm", out / "frame.json")
    spread = blur_metric(frame, cfg.positions * ctx.scale.length)
    write_table_csv([(i, float(s)) for i, s in enumerate(spread)], ["ion_index", "radial_spread_m"], out / "blur.csv")
    return ["frame.pgm", "frame.json", "blur.csv"]


def cmd_tune(ctx: Context, args, out: Path) -> list[str]:
    from .modes import tune_scan, write_table_csv

    ratios = _floats(args.ratios)
    if not ratios:
        raise ConfigError("no ratios given")
    rows = tune_scan(args.ions, ctx.trap, ratios)
    write_table_csv([(p.ratio, p.omega_low, p.ipr, p.status) for p in rows],
                    ["ratio", "omega_low_over_omega_x", "IPR", "status"], out / "tune.csv")
    return ["tune.csv"]


COMMANDS = {
    "relax": cmd_relax,
    "modes": cmd_modes,
    "quench": cmd_quench,
    "pn": cmd_pn,
    "sweep": cmd_sweep,
    "render": cmd_render,
    "tune": cmd_tune,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kinktrap", description="Kink defects in trapped-ion Coulomb crystals.")
    p.add_argument("--version", action="version",
                   version=f"kinktrap {__version__} (output format version {FORMAT_VERSION})")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="INI config file or a previous run's manifest.json")
    common.add_argument("-s", "--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("-o", "--out", default=".", help="output directory (created if missing)")
    common.add_argument("--seed", type=int, default=0, help="base seed for every stochastic step")
    common.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, help_text):
        return sub.add_parser(name, parents=[common], help=help_text, description=help_text)

    for name, text in (("relax", "equilibrium structure and summary"),
                       ("modes", "normal-mode spectrum and kink-mode analysis")):
        s = add(name, text)
        s.add_argument("-n", "--ions", type=int, required=True)
        s.add_argument("--kink", action="store_true", help="relax a centered kink instead of the ground state")
        if name == "modes":
            s.add_argument("--amplitudes", default="", help="comma-separated kink-mode amplitudes in metres")
    s = add("quench", "cloud-to-crystal quench statistics")
    s.add_argument("-n", "--ions-list", required=True, help="e.g. 30,44,50 or 27..56")
    s.add_argument("--trials", type=int, default=100)
    s = add("pn", "Peierls-Nabarro profile and barrier for one ion number")
    s.add_argument("-n", "--ions", type=int, required=True)
    s = add("sweep", "barrier versus ion number with a quadratic fit")
    s.add_argument("-n", "--ions-list", required=True, help="e.g. 40..56")
    s = add("render", "synthetic fluorescence frame of a thermal crystal")
    s.add_argument("-n", "--ions", type=int, required=True)
    s.add_argument("--kink", action="store_true")
    s.add_argument("--temperature", type=float, default=1.0, help="mode energy in units of kB T_D")
    s.add_argument("--single-mode", action="store_true", help="excite only the kink's localized mode")
    s.add_argument("--laser-weighting", action="store_true", help="weight by the instantaneous scattering rate")
    s.add_argument("--stride", type=int, default=10, help="integration steps per rendered snapshot")
    s = add("tune", "kink-mode frequency versus radial anisotropy")
    s.add_argument("-n", "--ions", type=int, required=True)
    s.add_argument("--ratios", required=True, help="comma-separated wz/wy values")
    return p


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run(argv=None) -> int:
    """Parse ``argv``, execute the command and write the manifest; returns the exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    start = time.perf_counter()
    try:
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        cfg = load_config(args.config, args.set)
        ctx = Context(cfg)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        files = COMMANDS[args.command](ctx, args, out)
        params = {k: v for k, v in sorted(vars(args).items()) if k not in ("config", "set", "out", "command", "workers")}
        manifest = {
            "command": args.command,
            "parameters": params,
            "seed": args.seed,
            "config": cfg,
            "version": __version__,
            "format_version": FORMAT_VERSION,
            "outputs": {f: _digest(out / f) for f in files},
            "timing": {"wall_seconds": time.perf_counter() - start, "workers": args.workers},
        }
        _write_json(out / "manifest.json", manifest)
    except ConfigError as exc:
        print(f"kinktrap: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PhysicsError as exc:
        print(f"kinktrap: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PHYSICS
    except OSError as exc:
        print(f"kinktrap: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


def main(argv=None) -> None:
    sys.exit(run(argv))
