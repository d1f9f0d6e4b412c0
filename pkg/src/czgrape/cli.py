"""Command line front end.

Examples::

    czgrape optimize --config table1 --out runs/t35 --set pulse.gate_time_ns=35
    czgrape scan qsl --config table1 --workers 1
    czgrape scan noise --config dimensionless --set scan.noise.pulse_csv=runs/d/dimensionless_pulse.csv
    czgrape jc --config jc-fig3
    czgrape check --config my.toml

Exit codes: 0 success, 2 configuration error, 3 optimizer did not reach its
target (artifacts are still written).
"""

from __future__ import annotations

import argparse
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import analysis, config as cfgmod
from .config import ConfigError
from .dynamics import strauch_phase_deviation, strauch_rotation_trace
from .fileio import read_pulse_csv, write_json, write_pulse_csv
from .model import jc_spectrum
from .optimizer import optimize

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STALL = 3

log = logging.getLogger("czgrape")

PLOT_STUB = """\
# Plot stub: python {name}
import csv
import matplotlib.pyplot as plt

with open("{csv}") as fh:
    rows = list(csv.reader(fh))
header, data = rows[0], [[float(v) for v in r] for r in rows[1:]]
x = [r[0] for r in data]
for i, name in enumerate(header[1:], start=1):
    plt.plot(x, [r[i] for r in data], label=name)
plt.xlabel(header[0])
plt.legend()
plt.show()
"""


def _common(parser):
    parser.add_argument("--config", required=True, help="TOML file or preset name")
    parser.add_argument("--out", help="output directory (default: [output] dir or 'out')")
    parser.add_argument("--seed", type=int, help="override the optimizer seed")
    parser.add_argument("--workers", type=int, default=1, help="processes for scans")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. pulse.gate_time_ns=30")
    parser.add_argument("--check", action="store_true", help="validate the config and exit")
    parser.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="czgrape", description="GRAPE design of controlled-Z pulses")
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("optimize", help="optimize one pulse"))
    scan = sub.add_parser("scan", help="speed-limit sweep or robustness scan")
    scan.add_argument("kind", choices=cfgmod.SCAN_KINDS)
    _common(scan)
    _common(sub.add_parser("jc", help="three-level Jaynes-Cummings spectra and Strauch rotation"))
    _common(sub.add_parser("check", help="validate a config without running"))
    return parser


def _output(cfg, args) -> tuple[Path, str]:
    out = cfg.get("output", {})
    directory = Path(args.out or out.get("dir", "out"))
    directory.mkdir(parents=True, exist_ok=True)
    basename = out.get("basename") or Path(str(args.config)).stem
    return directory, basename


def _stub(cfg, directory: Path, csv_path: Path):
    if cfg.get("output", {}).get("plot_stubs", False):
        name = csv_path.with_suffix(".plot.py").name
        (directory / name).write_text(PLOT_STUB.format(name=name, csv=csv_path.name))


def _timing(wall_time):
    return {"wall_time_s": wall_time, "created": datetime.now(timezone.utc).isoformat()}


def _check(cfg, command, kind=None):
    """Build everything a command needs without running it."""
    if command in ("optimize", "check") and "device" in cfg:
        params = cfgmod.device_from_config(cfg)
        if "pulse" in cfg:
            cfgmod.optimization_config(cfg, params)
    if command == "scan":
        params = cfgmod.device_from_config(cfg)
        section = cfg.get(f"scan.{kind}")
        if section is None:
            raise ConfigError(f"missing [scan.{kind}] section")
        if kind == "qsl":
            cfgmod.optimization_config(cfg, params)
            if "gate_times_ns" not in section:
                raise ConfigError("[scan.qsl] needs gate_times_ns")
        else:
            if "pulse_csv" not in section:
                raise ConfigError(f"[scan.{kind}] needs pulse_csv")
            path = cfgmod.resolve_path(cfg, section["pulse_csv"])
            if not path.exists():
                raise ConfigError(f"pulse file {path} not found")
    if command == "jc" and "jc" not in cfg:
        raise ConfigError("missing [jc] section")
    for section, body in cfg.items():
        if section.startswith("scan."):
            for key, value in body.items():
                if _is_grid_key(section, key):
                    cfgmod.grid(value)


def _is_grid_key(section, key) -> bool:
    return cfgmod.SCHEMA[section][key][1] == "grid"


def cmd_optimize(cfg, args) -> int:
    params = cfgmod.device_from_config(cfg)
    oc = cfgmod.optimization_config(cfg, params, seed=args.seed)
    result = optimize(oc, params)
    directory, base = _output(cfg, args)
    pulse_path = write_pulse_csv(directory / f"{base}_pulse.csv", result.pulse, result.filtered)
    payload = result.to_dict()
    timing = _timing(payload.pop("wall_time_s"))
    payload["gate_time_ns"] = oc.gate_time
    payload["pulse_csv"] = pulse_path.name
    payload["timing"] = timing
    write_json(directory / f"{base}_result.json", payload)
    cfgmod.dump_resolved(cfg, directory / f"{base}_config.json")
    _stub(cfg, directory, pulse_path)
    print(f"{result.termination}: 1-Phi = {result.error:.3e} after {result.iterations} iterations")
    print(f"wrote {pulse_path}")
    return EXIT_OK if result.success else EXIT_STALL


def _scan_pulse(cfg, section):
    path = cfgmod.resolve_path(cfg, section["pulse_csv"])
    if not path.exists():
        raise ConfigError(f"pulse file {path} not found")
    try:
        return read_pulse_csv(path)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_scan(cfg, args) -> int:
    kind = args.kind
    params = cfgmod.device_from_config(cfg)
    section = cfg.get(f"scan.{kind}", {})
    filter_sigma = cfg.get("optimizer", {}).get("filter_sigma_ns")
    directory, base = _output(cfg, args)
    if kind == "qsl":
        oc = cfgmod.optimization_config(cfg, params, seed=args.seed)
        if "max_iterations" in section:
            oc = oc.replace(max_iterations=section["max_iterations"])
        oc = oc.replace(target_error=min(oc.target_error, 1e-12))
        result = analysis.qsl_scan(
            cfgmod.grid(section["gate_times_ns"]), oc, params,
            restarts=section.get("restarts", 1),
            threshold=section.get("success_error", analysis.QSL_SUCCESS_ERROR),
        )
        print(f"speed-limit knee: {result.metadata['t_qsl_ns']} ns")
    else:
        pulse = _scan_pulse(cfg, section)
        if kind == "noise":
            seed = section.get("seed", 0) if args.seed is None else args.seed
            result = analysis.amplitude_noise_scan(
                pulse, params, cfgmod.grid(section.get("relative_sigmas", [0.0, 0.001, 0.003, 0.01])),
                n_samples=section.get("n_samples", 100), seed=seed,
                filter_sigma=filter_sigma, workers=args.workers,
            )
        elif kind == "calibration":
            result = analysis.calibration_scan(
                pulse, params, cfgmod.grid(section["offsets1_ghz"]), cfgmod.grid(section["offsets2_ghz"]),
                filter_sigma=filter_sigma, workers=args.workers,
            )
        elif kind == "timing":
            result = analysis.timing_scan(
                pulse, params, cfgmod.grid(section["delays_ns"]),
                filter_sigma=filter_sigma, workers=args.workers,
            )
        else:
            result = analysis.parameter_error_scan(
                pulse, params, cfgmod.grid(section["rel_errors_g1"]), cfgmod.grid(section["rel_errors_delta1"]),
                filter_sigma=filter_sigma, workers=args.workers,
            )
        result.metadata["pulse_csv"] = str(section["pulse_csv"])
    csv_path, json_path = result.save(directory / f"{base}_{kind}")
    cfgmod.dump_resolved(cfg, directory / f"{base}_{kind}_config.json")
    _stub(cfg, directory, csv_path)
    print(f"wrote {csv_path} and {json_path}")
    return EXIT_OK


def cmd_jc(cfg, args) -> int:
    jc = cfg["jc"]
    omega_b = jc.get("omega_b_ghz", 6.1)
    if "g_mhz" in jc:
        g = jc["g_mhz"] * 1e-3
    else:
        g = 1.0 / (2.0 * jc.get("swap_time_ns", 12.0))
    anharms = np.array(jc.get("anharmonicity_mhz", [-75.0, -250.0])) * 1e-3
    deltas = cfgmod.grid(jc.get("detunings_ghz", {"start": -0.4, "stop": 0.4, "num": 801}))
    n = jc.get("n_samples", 2001)
    directory, base = _output(cfg, args)

    spectra = np.stack([jc_spectrum(omega_b, a, g, deltas) for a in anharms])
    spec = analysis.ScanResult(
        "jc-spectrum",
        [analysis.ScanAxis("anharmonicity", anharms, "GHz"), analysis.ScanAxis("delta", deltas, "GHz")],
        {f"E{i}_GHz": spectra[..., i] for i in range(3)},
        {"omega_b_ghz": omega_b, "g_ghz": g, "branches": "eigenvalues sorted ascending at each delta"},
    )
    summary = {"omega_b_ghz": omega_b, "g_ghz": g, "cases": []}
    paths = [spec.save(directory / f"{base}_spectrum")]
    if g > 0:
        pops, phases = [], []
        for a in anharms:
            trace = strauch_rotation_trace(omega_b, a, g, n_samples=n)
            phase = strauch_phase_deviation(omega_b, a, g, n_samples=n)
            pops.append(trace.populations)
            phases.append(phase.phase)
            summary["cases"].append({
                "anharmonicity_ghz": float(a),
                "rotation_time_ns": trace.rotation_time,
                "max_leakage_02": trace.max_leakage,
                "end_phase_deviation_rad": phase.end_deviation,
            })
        tnorm = trace.normalized_times
        pops = np.stack(pops)
        dyn = analysis.ScanResult(
            "jc-strauch",
            [analysis.ScanAxis("anharmonicity", anharms, "GHz"), analysis.ScanAxis("normalized_time", tnorm)],
            {"p_20": pops[..., 0], "p_11": pops[..., 1], "p_02": pops[..., 2], "phase_rad": np.stack(phases)},
            {"omega_b_ghz": omega_b, "g_ghz": g, "phase_gaps": "NaN where |<1,1|U|1,1>| < 1e-12"},
        )
        paths.append(dyn.save(directory / f"{base}_strauch"))
    write_json(directory / f"{base}_jc_summary.json", summary)
    cfgmod.dump_resolved(cfg, directory / f"{base}_jc_config.json")
    for csv_path, _ in paths:
        _stub(cfg, directory, csv_path)
    for case in summary["cases"]:
        print(f"Delta = {case['anharmonicity_ghz'] * 1e3:.0f} MHz: max |0,2> population "
              f"{case['max_leakage_02']:.4f}, end phase deviation {case['end_phase_deviation_rad']:+.4f} rad")
    return EXIT_OK


COMMANDS = {"optimize": cmd_optimize, "scan": cmd_scan, "jc": cmd_jc}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = cfgmod.load_config(args.config, args.overrides)
        _check(cfg, args.command, getattr(args, "kind", None))
        if args.command == "check" or args.check:
            print(f"{args.config}: ok")
            return EXIT_OK
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
