import json
import os
import subprocess
import sys

import numpy as np
import pytest

from cavity_spinwave import __version__
from cavity_spinwave.cli import main
from cavity_spinwave.config import ConfigError, SCHEMA, describe_defaults, load_config

SMALL = {
    "scan": ["scan.dc_points=3", "scan.dr_points=9"],
    "odsweep": ["odsweep.od_values=4 16", "odsweep.dr_points=61"],
}


def run(tmp_path, *argv, sets=()):
    args = list(argv) + ["--output-dir", str(tmp_path)]
    for s in sets:
        args += ["--set", s]
    return main(args)


def test_version(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_print_defaults(capsys):
    assert main(["--print-defaults"]) == 0
    out = capsys.readouterr().out
    assert "[cavity]" in out and "mirror_reflectivity" in out


def test_no_command_is_usage_error():
    assert main([]) == 2


def test_unknown_subcommand():
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "cavity_spinwave", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and __version__ in out.stdout


def test_derive(tmp_path, capsys):
    assert run(tmp_path, "derive", "--json") == 0
    doc = json.loads((tmp_path / "derive.json").read_text())
    assert doc["toolkit_version"] == __version__
    assert doc["config"]["cavity"]["mirror_reflectivity"] == "0.86"
    assert "finesse" in capsys.readouterr().out


def test_unknown_key_reports_line(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[cavity]\nmirror_reflectivity = 0.9\n\nbogus_key = 3\n")
    with pytest.raises(ConfigError) as info:
        load_config(cfg)
    assert info.value.line == 4 and info.value.key == "bogus_key"
    assert f"{cfg}:4" in str(info.value)


def test_unknown_section(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[cavity]\nlength_m = 1\n[nonsense]\nx = 1\n")
    with pytest.raises(ConfigError, match="unknown section"):
        load_config(cfg)


def test_bad_value_reports_key(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[system]\n\ng_MHz = fifteen\n")
    with pytest.raises(ConfigError) as info:
        load_config(cfg)
    assert info.value.line == 3 and info.value.key == "g_MHz"


def test_config_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[atom]\nwrong = 1\n")
    assert run(tmp_path, "derive", "--config", str(cfg)) == 3
    assert "run.ini:2" in capsys.readouterr().err


def test_unknown_override(tmp_path):
    assert run(tmp_path, "derive", sets=["cavity.nope=1"]) == 3


def test_domain_error_exit_code(tmp_path):
    assert run(tmp_path, "derive", sets=["cavity.mirror_reflectivity=1.5"]) == 4


def test_override_changes_result(tmp_path):
    run(tmp_path / "a", "derive", "--json")
    run(tmp_path / "b", "derive", "--json", sets=["cavity.length_m=1.76"])
    a = json.loads((tmp_path / "a" / "derive.json").read_text())
    b = json.loads((tmp_path / "b" / "derive.json").read_text())
    assert b["derived"]["fsr_Hz"] == pytest.approx(a["derived"]["fsr_Hz"] / 2)


def test_every_schema_key_documented():
    text = describe_defaults()
    for section, keys in SCHEMA.items():
        for key, (_, _, desc) in keys.items():
            assert key in text and desc


def test_retrieve_flags(tmp_path):
    assert run(tmp_path, "retrieve", "--g-MHz", "10", "--delta-r-MHz", "5") == 0
    doc = json.loads((tmp_path / "retrieve.json").read_text())
    assert doc["config"]["system"]["g_MHz"] == "10"
    assert 0 < doc["chi"] < 1
    header = (tmp_path / "retrieve.csv").read_text().splitlines()[0]
    assert header.startswith("t_us")


def test_reflectance_outputs(tmp_path):
    assert run(tmp_path, "reflectance") == 0
    rows = (tmp_path / "reflectance.csv").read_text().splitlines()
    assert len(rows) == 602


def test_simulate_then_stats(tmp_path, capsys):
    assert run(tmp_path, "simulate-events", "--trials", "20000", "--seed", "3") == 0
    assert run(tmp_path, "stats") == 0
    doc = json.loads((tmp_path / "stats.json").read_text())
    assert doc["record"]["trials"] == 20000
    assert doc["seed"] == 3
    assert "g2_wr" in capsys.readouterr().out


def test_stats_from_record(tmp_path):
    rec = tmp_path / "rec.json"
    rec.write_text(json.dumps(dict(trials=10000, write_any=300, read_any=80, coincidences=40,
                                   background_trials=10000, background_read_any=20)))
    assert run(tmp_path, "stats", "--record", str(rec)) == 0


def test_stats_noise_dominated(tmp_path):
    rec = tmp_path / "rec.json"
    rec.write_text(json.dumps(dict(trials=1000, write_any=10, read_any=80, coincidences=2,
                                   background_trials=1000, background_read_any=20)))
    assert run(tmp_path, "stats", "--record", str(rec)) == 4


def test_fit_reflectance_from_csv(tmp_path):
    from cavity_spinwave.fitting import reflectance_model
    from cavity_spinwave.units import CavityGeometry, derive_cavity, mhz
    cav = derive_cavity(CavityGeometry())
    x = np.linspace(-60, 60, 121)
    y = reflectance_model(mhz(x), 4e5, cav.g0, mhz(7.25), cav.kappa0, mhz(6.07) / 2)
    data = tmp_path / "refl.csv"
    data.write_text("x_MHz,y\n" + "\n".join(f"{a:.17g},{b:.17g}" for a, b in zip(x, y)) + "\n")
    assert run(tmp_path, "fit", "--data", str(data), sets=["fit.model=reflectance_spectrum"]) == 0
    doc = json.loads((tmp_path / "fit.json").read_text())
    assert doc["estimates"]["n_atoms"] == pytest.approx(4e5, rel=1e-3)


def test_fit_bad_csv(tmp_path):
    data = tmp_path / "bad.csv"
    data.write_text("x_MHz,y\n1.0,abc\n")
    assert run(tmp_path, "fit", "--data", str(data)) == 3


def test_fit_without_data(tmp_path):
    assert run(tmp_path, "fit") == 3


def test_outputs_stay_in_output_dir(tmp_path, monkeypatch):
    work = tmp_path / "cwd"
    work.mkdir()
    monkeypatch.chdir(work)
    out = tmp_path / "out"
    assert run(out, "scan", sets=SMALL["scan"]) == 0
    assert os.listdir(work) == []
    assert {"scan.csv", "scan.json"} <= set(os.listdir(out))


@pytest.mark.parametrize("command", ["derive", "reflectance", "retrieve", "scan", "odsweep", "simulate-events"])
def test_deterministic_across_workers(tmp_path, command):
    extra = ["--json"] if command == "derive" else []
    sets = SMALL.get(command, []) + ["output.cache_dir=none", "stats.trials=30000"]
    outputs = []
    for workers in ("1", "2"):
        out = tmp_path / "out"
        if out.exists():
            for f in out.iterdir():
                f.unlink()
        assert run(out, command, *extra, "--workers", workers, sets=sets) == 0
        outputs.append({f.name: f.read_bytes() for f in sorted(out.iterdir())})
    assert outputs[0] == outputs[1]
    assert outputs[0]
