import json

import numpy as np
import pytest

from hieranderson.cli import main
from hieranderson.config import RunConfig, load_config
from hieranderson.errors import ConfigError


def run(tmp_path, *args):
    out = tmp_path / "out"
    code = main(list(args) + ["--out", str(out)])
    return code, out


def test_config_layers(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"L": 5, "g": 0.2}))
    cfg = load_config(str(path), g=0.3, seed=None)
    assert (cfg.L, cfg.g, cfg.seed) == (5, 0.3, 0)
    path.write_text(json.dumps({"bogus": 1}))
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_config_lists_every_violation():
    with pytest.raises(ConfigError) as err:
        RunConfig(L=4, g=2.0, r=0.5, kappa_s=1.5).validate()
    msg = err.value.violations
    assert len(msg) == 4
    assert any("L must be odd" in m for m in msg)


def test_config_hash_ignores_output_location():
    a = RunConfig(output_dir="a", workers=1)
    b = RunConfig(output_dir="b", workers=4)
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != RunConfig(seed=1).config_hash()


def test_rejects_even_scale(tmp_path, capsys):
    code, _ = run(tmp_path, "flow", "--L", "4")
    assert code == 2
    assert "L must be odd" in capsys.readouterr().err


def test_unknown_command_is_usage_error(tmp_path):
    code, _ = run(tmp_path, "frobnicate")
    assert code == 2


def test_selftest_passes(tmp_path):
    code, out = run(tmp_path, "selftest", "--Nmax", "2")
    assert code == 0
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["Nmax"] == 2
    assert json.loads((out / "summary.json").read_text())["passed"]


def test_solve_without_noise(tmp_path):
    code, out = run(tmp_path, "solve", "--g", "0", "--r", "2", "--Nmax", "2")
    assert code == 0
    s = json.loads((out / "summary.json").read_text())
    assert s["mean_u"] == pytest.approx(-0.5, abs=1e-14)
    lines = (out / "trajectory.csv").read_text().splitlines()
    assert lines[0].startswith("# hieranderson")
    assert lines[1] == "level,index,v"


def test_flow_without_noise_has_zero_psi(tmp_path):
    code, out = run(tmp_path, "flow", "--g", "0", "--Nmax", "3")
    assert code == 0
    rows = (out / "flow_stats.csv").read_text().splitlines()[2:]
    for row in rows:
        vals = [float(x) for x in row.split(",")[1:3]]
        assert vals == [0.0, 0.0]
    coeffs = np.loadtxt(out / "coefficients.csv", delimiter=",", skiprows=2)
    assert coeffs[:, 4] == pytest.approx(1.0)


def test_sample_writes_noise(tmp_path):
    code, out = run(tmp_path, "sample", "--Nmax", "2", "--seed", "3")
    assert code == 0
    first = (out / "base.csv").read_text().splitlines()[0]
    assert '"seed": 3' in first
    rows = (out / "enhanced_noise.csv").read_text().splitlines()
    assert len(rows) == 2 + 1 + 9 + 81


def test_floats_use_full_precision(tmp_path):
    code, out = run(tmp_path, "flow", "--g", "0.3", "--Nmax", "2")
    row = (out / "coefficients.csv").read_text().splitlines()[3]
    lam = float(row.split(",")[1])
    assert lam == 0.3 / 3 ** 1


@pytest.mark.parametrize("cmd,extra", [
    ("verify-moments", ["--samples", "300"]),
    ("tail", ["--Nmax", "2", "--samples", "200", "--kappa-s", "0.3"]),
    ("moments-growth", ["--Nmax", "2", "--samples", "200"]),
    ("converge", ["--Nmax", "4", "--samples", "10", "--kappa-s", "0.25"]),
    ("ablate", ["--Nmax", "3", "--samples", "20", "--g", "0.5"]),
])
def test_experiment_commands_run(tmp_path, cmd, extra):
    code, out = run(tmp_path, cmd, *extra)
    assert code in (0, 1)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["passed"] == (code == 0)
    assert summary["seed"] == 0
    assert len(summary["config_hash"]) == 16
