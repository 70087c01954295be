import json

import pytest

from gaplab.cli import ConfigError, RunConfig, main, table_from_csv

BASE_CONFIG = """
[geometry]
kind = disks
epsilon = 1e-2
dim = 2

[solver]
p = 2.0
eta = 0.0
grid_ns = 17
grid_nt = 9
outer_radius = 0.5

[sweep]
epsilons = [1e-2, 3e-3, 1e-3, 5e-4, 3e-4]
drop_largest = true

[output]
seed = 0
"""

CERT_CONFIG = """
[geometry]
kind = quadratic
epsilon = 1e-4
dim = 2
upper_matrix = [[1.0]]
lower_matrix = [[-1.0]]

[solver]
p = 5.0

[barrier]
variant = supersolution_v
delta = 0.5
gamma = {gamma}
samples = 5000
"""


def write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_config_parses_and_hashes(tmp_path):
    cfg = RunConfig.from_path(write(tmp_path, BASE_CONFIG))
    assert cfg.get("geometry", "kind") == "disks"
    assert cfg.get("sweep", "epsilons") == [1e-2, 3e-3, 1e-3, 5e-4, 3e-4]
    h1 = cfg.hash()
    cfg2 = RunConfig.from_path(write(tmp_path, BASE_CONFIG, "again.ini"))
    assert cfg2.hash() == h1


def test_config_rejects_unknown_key(tmp_path):
    bad = BASE_CONFIG + "\n[solver]\nwarp_factor = 9\n"
    # configparser merges duplicate sections; write a clean variant instead
    bad = BASE_CONFIG.replace("grid_nt = 9", "grid_nt = 9\nwarp_factor = 9")
    with pytest.raises(ConfigError, match="warp_factor"):
        RunConfig.from_path(write(tmp_path, bad))


def test_config_rejects_unknown_section(tmp_path):
    bad = BASE_CONFIG + "\n[quantum]\nfoo = 1\n"
    with pytest.raises(ConfigError, match="quantum"):
        RunConfig.from_path(write(tmp_path, bad))


def test_unknown_geometry_kind(tmp_path):
    bad = BASE_CONFIG.replace("kind = disks", "kind = torus")
    path = write(tmp_path, bad)
    rc = main(["solve", "--config", str(path), "--out", str(tmp_path / "o")])
    assert rc == 1


def test_malformed_config_exit_code(tmp_path):
    path = write(tmp_path, "[solver]\np = 0.5\n" + "[geometry]\nkind = disks\n")
    rc = main(["solve", "--config", str(path), "--out", str(tmp_path / "o")])
    assert rc == 1


def test_cmd_solve_writes_container(tmp_path, capsys):
    path = write(tmp_path, BASE_CONFIG)
    out = tmp_path / "out"
    rc = main(["solve", "--config", str(path), "--out", str(out)])
    assert rc == 0
    assert (out / "field.json").exists()
    data = json.loads((out / "field.json").read_text())
    assert data["format"] == "gaplab-field-v1"
    captured = capsys.readouterr().out
    assert "max|Du|" in captured
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config_hash"] == RunConfig.from_path(path).hash()


def test_cmd_sweep_and_fit(tmp_path):
    path = write(tmp_path, BASE_CONFIG)
    out = tmp_path / "sweep"
    rc = main(["sweep", "--config", str(path), "--out", str(out)])
    assert rc == 0
    csv1 = (out / "rates.csv").read_text()
    assert len(csv1.strip().split("\n")) == 6  # header + 5 rows

    rc = main(["fit", "--config", str(path), "--out", str(out)])
    assert rc == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["reused_rates_csv"] is True
    assert 0.3 < manifest["fit"]["slope"] < 0.7
    assert (out / "rates.svg").exists()
    assert (out / "fitdata.csv").exists()

    # replot without re-solving: identical SVG and CSV
    svg1 = (out / "rates.svg").read_text()
    rc = main(["fit", "--config", str(path), "--out", str(out)])
    assert rc == 0
    assert (out / "rates.svg").read_text() == svg1
    assert (out / "rates.csv").read_text() == csv1


def test_sweep_determinism_bit_identical(tmp_path):
    path = write(tmp_path, BASE_CONFIG)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["sweep", "--config", str(path), "--out", str(out1)]) == 0
    assert main(["sweep", "--config", str(path), "--out", str(out2)]) == 0
    assert (out1 / "rates.csv").read_bytes() == (out2 / "rates.csv").read_bytes()


def test_fit_needs_enough_rows(tmp_path):
    short = BASE_CONFIG.replace("epsilons = [1e-2, 3e-3, 1e-3, 5e-4, 3e-4]",
                                "epsilons = [1e-2, 3e-3, 1e-3]")
    path = write(tmp_path, short)
    rc = main(["fit", "--config", str(path), "--out", str(tmp_path / "o")])
    assert rc == 1


def test_cmd_certify_admissible(tmp_path):
    path = write(tmp_path, CERT_CONFIG.format(gamma=0.3))
    out = tmp_path / "cert"
    rc = main(["certify", "--config", str(path), "--out", str(out)])
    assert rc == 0
    cert = json.loads((out / "certificate.json").read_text())
    assert cert["admissible"] is True
    assert cert["violations"] == []


def test_cmd_certify_inadmissible_names_bound(tmp_path, capsys):
    path = write(tmp_path, CERT_CONFIG.format(gamma=0.45))
    rc = main(["certify", "--config", str(path), "--out", str(tmp_path / "o")])
    assert rc == 1
    err = capsys.readouterr().err
    assert "gamma" in err and "(p-n-1-delta)/(p-1)" in err


def test_cmd_check_transform(tmp_path):
    config = """
[geometry]
kind = disks
epsilon = 1e-6

[sweep]
transform_radii = [0.1, 0.2]
transform_samples = 40
"""
    path = write(tmp_path, config)
    out = tmp_path / "tr"
    rc = main(["check-transform", "--config", str(path), "--out", str(out)])
    assert rc == 0
    rep = json.loads((out / "transform_report.json").read_text())
    assert len(rep["reports"]) == 2
    for r in rep["reports"]:
        assert r["parallelism_residual_max"] < 1e-8
        assert r["violations"] == []


def test_table_csv_round_trip(tmp_path):
    path = write(tmp_path, BASE_CONFIG)
    out = tmp_path / "rt"
    assert main(["sweep", "--config", str(path), "--out", str(out)]) == 0
    text = (out / "rates.csv").read_text()
    table = table_from_csv(text, {}, {}, 0.25)
    assert table.csv_text() == text
