import json
import subprocess
import sys

import numpy as np
import pytest

from czgrape import config as cfgmod
from czgrape.analysis import ScanResult
from czgrape.cli import EXIT_CONFIG, EXIT_OK, EXIT_STALL, main
from czgrape.config import ConfigError
from czgrape.dynamics import ControlPulse
from czgrape.fileio import read_pulse_csv, write_pulse_csv

FAST = ["--set", "optimizer.target_error=1e-3"]


def write(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


# configuration


@pytest.mark.parametrize("name", cfgmod.PRESETS)
def test_presets_load_and_check(name):
    cfg = cfgmod.load_config(name)
    assert main(["check", "--config", name]) == EXIT_OK
    if "device" in cfg:
        cfgmod.device_from_config(cfg)


def test_table1_preset_values():
    cfg = cfgmod.load_config("table1")
    params = cfgmod.device_from_config(cfg)
    assert params.omega_b == 6.1
    assert params.g == pytest.approx((0.040, 0.054))
    assert params.anharmonicity[0].value == pytest.approx(-0.071)
    assert cfgmod.gate_time_ns(cfg, params) == 35.0


def test_gate_time_in_units_of_g():
    cfg = cfgmod.load_config("dimensionless")
    params = cfgmod.device_from_config(cfg)
    assert cfgmod.gate_time_ns(cfg, params) == pytest.approx(9 / (2 * np.pi * 0.1))


def test_unknown_key_rejected(tmp_path):
    path = write(tmp_path, "[pulse]\ngate_time_ns = 10\nbogus = 1\n")
    with pytest.raises(ConfigError, match="bogus"):
        cfgmod.load_config(path)


def test_unknown_section_rejected(tmp_path):
    with pytest.raises(ConfigError):
        cfgmod.load_config(write(tmp_path, "[nonsense]\na = 1\n"))


def test_bad_value_rejected(tmp_path):
    with pytest.raises(ConfigError, match="dt_ns"):
        cfgmod.load_config(write(tmp_path, "[pulse]\ngate_time_ns = 10\ndt_ns = -1\n"))


def test_exclusive_keys_rejected(tmp_path):
    with pytest.raises(ConfigError):
        cfgmod.load_config(write(tmp_path, "[pulse]\ngate_time_ns = 10\ngate_time_tg = 3\n"))


def test_malformed_toml(tmp_path):
    with pytest.raises(ConfigError):
        cfgmod.load_config(write(tmp_path, "[pulse\n"))


def test_missing_file_and_preset():
    with pytest.raises(ConfigError):
        cfgmod.load_config("no-such-thing")


def test_overrides_parse_and_replace():
    cfg = cfgmod.load_config("table1", ["pulse.gate_time_ns=30", "optimizer.initial=nudge", "output.basename=x"])
    assert cfg["pulse"]["gate_time_ns"] == 30
    assert cfg["optimizer"]["initial"] == "nudge"
    cfg = cfgmod.load_config("dimensionless", ["pulse.gate_time_ns=12.5"])
    assert "gate_time_tg" not in cfg["pulse"]


def test_override_syntax_errors():
    with pytest.raises(ConfigError):
        cfgmod.parse_override("novalue")
    with pytest.raises(ConfigError):
        cfgmod.parse_override("flat=1")
    with pytest.raises(ConfigError):
        cfgmod.load_config("table1", ["pulse.dt_ns=abc"])


@pytest.mark.parametrize(
    "spec, expect",
    [
        ([1, 2, 3], [1, 2, 3]),
        ({"start": 0, "stop": 1, "num": 3}, [0, 0.5, 1]),
        ({"start": 60, "stop": 57, "step": -1}, [60, 59, 58, 57]),
        ({"start": 0, "stop": 0.3, "step": 0.1}, [0, 0.1, 0.2, 0.3]),
    ],
)
def test_grid(spec, expect):
    np.testing.assert_allclose(cfgmod.grid(spec), expect)


def test_grid_rejects_empty():
    with pytest.raises(ConfigError):
        cfgmod.grid({"start": 0, "stop": 1, "step": -1})


def test_table_csv_relative_to_config(tmp_path):
    (tmp_path / "a1.csv").write_text("detuning_GHz,anharmonicity_MHz\n-1,-70\n0,-71\n1,-72\n2,-73\n")
    path = write(
        tmp_path,
        '[device]\nomega_b_ghz = 6.1\nomega_park_ghz = [6.8, 6.6]\ng_mhz = [40, 54]\n'
        'anharmonicity_mhz = [-71, -59]\nanharmonicity_table_csv = ["a1.csv", ""]\n',
    )
    params = cfgmod.device_from_config(cfgmod.load_config(path))
    assert not params.anharmonicity[0].is_constant
    assert params.anharmonicity[0](0.0) == pytest.approx(-0.071)
    assert params.anharmonicity[1].value == pytest.approx(-0.059)


def test_resolved_config_is_json(tmp_path):
    cfg = cfgmod.load_config("table1")
    path = cfgmod.dump_resolved(cfg, tmp_path / "c.json")
    assert json.loads(path.read_text())["device"]["omega_b_ghz"] == 6.1


# pulse files


def test_pulse_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    pulse = ControlPulse(0.25, rng.normal(size=(2, 9)), 3, (0.7, 0.5))
    filtered = rng.normal(size=(2, pulse.n_total))
    path = write_pulse_csv(tmp_path / "p.csv", pulse, filtered)
    header = path.read_text().splitlines()[0].split(",")
    assert header == ["time_ns", "delta1_GHz", "delta2_GHz", "optimizable", "delta1_filtered_GHz", "delta2_filtered_GHz"]
    back = read_pulse_csv(path)
    np.testing.assert_array_equal(back.channels, pulse.channels)
    assert back.dt == pytest.approx(0.25) and back.n_buffer == 3
    assert back.buffer_values == pulse.buffer_values


def test_pulse_csv_rejects_garbage(tmp_path):
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_pulse_csv(tmp_path / "bad.csv")


# command line


@pytest.fixture(scope="module")
def optimized(tmp_path_factory):
    out = tmp_path_factory.mktemp("opt")
    code = main(["optimize", "--config", "dimensionless", "--out", str(out), *FAST])
    return code, out


def test_optimize_writes_outputs(optimized):
    code, out = optimized
    assert code == EXIT_OK
    names = sorted(p.name for p in out.iterdir())
    assert names == ["dimensionless_config.json", "dimensionless_pulse.csv", "dimensionless_result.json"]
    result = json.loads((out / "dimensionless_result.json").read_text())
    assert result["termination"] == "target-reached" and result["error"] <= 1e-3
    assert "wall_time_s" in result["timing"]


def test_optimize_reruns_are_identical(optimized, tmp_path):
    _, out = optimized
    assert main(["optimize", "--config", "dimensionless", "--out", str(tmp_path), *FAST]) == EXIT_OK
    for name in ("dimensionless_pulse.csv", "dimensionless_config.json"):
        assert (tmp_path / name).read_bytes() == (out / name).read_bytes()
    a = json.loads((out / "dimensionless_result.json").read_text())
    b = json.loads((tmp_path / "dimensionless_result.json").read_text())
    a.pop("timing"), b.pop("timing")
    assert a == b


def test_seed_flag_changes_result(optimized, tmp_path):
    _, out = optimized
    main(["optimize", "--config", "dimensionless", "--out", str(tmp_path), "--seed", "5", *FAST])
    assert (tmp_path / "dimensionless_pulse.csv").read_bytes() != (out / "dimensionless_pulse.csv").read_bytes()
    assert json.loads((tmp_path / "dimensionless_result.json").read_text())["seed"] == 5


def test_stall_exit_code(tmp_path):
    code = main(["optimize", "--config", "dimensionless", "--out", str(tmp_path),
                 "--set", "optimizer.max_iterations=2", "--set", "optimizer.target_error=1e-12"])
    assert code == EXIT_STALL
    assert (tmp_path / "dimensionless_pulse.csv").exists()


def test_config_error_exit_code(tmp_path, capsys):
    assert main(["optimize", "--config", "table1", "--set", "pulse.bogus=1"]) == EXIT_CONFIG
    assert "bogus" in capsys.readouterr().err
    assert main(["check", "--config", str(tmp_path / "missing.toml")]) == EXIT_CONFIG


def test_scan_without_pulse_is_config_error(tmp_path):
    assert main(["scan", "noise", "--config", "table1", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_scan_noise_from_cli(optimized, tmp_path):
    _, out = optimized
    pulse = out / "dimensionless_pulse.csv"
    args = ["scan", "noise", "--config", "dimensionless", "--out", str(tmp_path),
            "--set", f"scan.noise.pulse_csv='{pulse}'", "--set", "scan.noise.n_samples=4",
            "--set", "scan.noise.relative_sigmas=[0.0, 0.01]", "--workers", "2"]
    assert main(args) == EXIT_OK
    scan = ScanResult.load(tmp_path / "dimensionless_noise")
    assert scan.shape == (2,)
    result = json.loads((out / "dimensionless_result.json").read_text())
    assert scan["mean_error"][0] == pytest.approx(result["error"], abs=1e-12)


def test_scan_timing_and_params_from_cli(optimized, tmp_path):
    _, out = optimized
    pulse = out / "dimensionless_pulse.csv"
    for kind, grids in [
        ("timing", ["scan.timing.delays_ns=[-0.1, 0.0, 0.1]"]),
        ("params", ["scan.params.rel_errors_g1=[0.0, 0.01]", "scan.params.rel_errors_delta1=[0.0]"]),
        ("calibration", ["scan.calibration.offsets1_ghz=[0.0]", "scan.calibration.offsets2_ghz=[0.0, 0.001]"]),
    ]:
        sets = [f"scan.{kind}.pulse_csv='{pulse}'", *grids, "output.plot_stubs=true"]
        argv = ["scan", kind, "--config", "dimensionless", "--out", str(tmp_path)]
        for s in sets:
            argv += ["--set", s]
        assert main(argv) == EXIT_OK
        assert (tmp_path / f"dimensionless_{kind}.csv").exists()
        assert (tmp_path / f"dimensionless_{kind}.json").exists()
        assert (tmp_path / f"dimensionless_{kind}.plot.py").exists()


def test_qsl_scan_from_cli(tmp_path):
    argv = ["scan", "qsl", "--config", "dimensionless", "--out", str(tmp_path),
            "--set", "scan.qsl.gate_times_ns=[15.0]", "--set", "scan.qsl.max_iterations=20",
            "--set", "scan.qsl.restarts=0"]
    assert main(argv) == EXIT_OK
    meta = json.loads((tmp_path / "dimensionless_qsl.json").read_text())
    assert meta["metadata"]["config"]["target_error"] <= 1e-12


def test_jc_outputs(tmp_path):
    argv = ["jc", "--config", "jc-fig3", "--out", str(tmp_path),
            "--set", "jc.detunings_ghz={start=-0.4, stop=0.4, num=21}", "--set", "jc.n_samples=51"]
    assert main(argv) == EXIT_OK
    spec = ScanResult.load(tmp_path / "jc-fig3_spectrum")
    assert spec.shape[-1] == 21 or 21 in spec.shape
    summary = json.loads((tmp_path / "jc-fig3_jc_summary.json").read_text())
    assert summary
    assert (tmp_path / "jc-fig3_strauch.csv").exists()


def test_check_flag_runs_nothing(tmp_path):
    assert main(["optimize", "--config", "table1", "--out", str(tmp_path / "o"), "--check"]) == EXIT_OK
    assert not (tmp_path / "o").exists()


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "czgrape.cli", "check", "--config", "table1"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "ok" in proc.stdout
