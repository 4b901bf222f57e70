import json

import pytest

from twomatrix import cli
from twomatrix.config import ConfigError, DEFAULTS, resolve


def run(tmp_path, name, *args):
    out = tmp_path / name
    code = cli.main([*args, "--out", str(out)])
    return code, out


def manifest(out, cmd):
    return json.loads((out / f"{cmd.replace('-', '_')}_manifest.json").read_text())


def test_config_rejects_unknown_keys(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("sampler:\n  n_chain: 3\n")
    with pytest.raises(ConfigError):
        resolve(p)
    p.write_text("potential: 3\n")
    with pytest.raises(ConfigError):
        resolve(p)
    q = tmp_path / "c.json"
    q.write_text(json.dumps({"seed": 4, "potential": {"tau": 2.0}}))
    cfg = resolve(q)
    assert cfg["seed"] == 4 and cfg["potential"]["tau"] == 2.0
    assert cfg["potential"]["alpha"] == DEFAULTS["potential"]["alpha"]


def test_output_root_env(monkeypatch, tmp_path):
    monkeypatch.setenv("TWOMATRIX_OUTPUT_ROOT", str(tmp_path))
    assert resolve()["output_dir"].startswith(str(tmp_path))


def test_input_data_closed_forms(tmp_path):
    code, out = run(tmp_path, "a", "input-data", "--alpha", "0", "--tau", "1",
                    "--check-closed-forms")
    assert code == 0
    m = manifest(out, "input-data")
    cf = m["results"]["closed_forms"]
    assert max(cf["max_dev_v1"], cf["max_dev_sigma2"]) <= 1e-10
    header = (out / "input_data.csv").read_text().split("\n")[0]
    assert header == "x,v1,v3,sigma2_density"


def test_input_errors_exit_one(tmp_path):
    code, out = run(tmp_path, "b", "input-data", "--alpha", "1", "--check-closed-forms")
    assert code == 1
    assert manifest(out, "input-data")["error"]["code"] == "input_error"
    p = tmp_path / "bad.yaml"
    p.write_text("nonsense: 1\n")
    assert cli.main(["equilibrium", "--config", str(p), "--out", str(tmp_path / "c")]) == 1
    assert cli.main(["phase", "--tau", "-1", "--out", str(tmp_path / "d")]) == 1


def test_non_convergence_exit_two(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("equilibrium:\n  max_iter: 3\n  resolution: coarse\n")
    code, out = run(tmp_path, "e", "equilibrium", "--config", str(p))
    assert code == 2
    assert manifest(out, "equilibrium")["error"]["code"] == "non_convergence"


def test_phase_multicritical(tmp_path, capsys):
    code, out = run(tmp_path, "f", "phase", "--alpha", "-1", "--tau", "1")
    assert code == 0
    assert "Multicritical" in capsys.readouterr().out
    m = manifest(out, "phase")["results"]
    assert m["closed_form"]["case_label"] == "Multicritical"
    assert m["numeric"]["case_label"] == "Multicritical"


def test_equilibrium_deterministic(tmp_path):
    runs = [run(tmp_path, f"eq{i}", "equilibrium", "--resolution", "coarse", "--seed", "3")
            for i in range(2)]
    assert all(code == 0 for code, _ in runs)
    a, b = (out / "equilibrium.csv" for _, out in runs)
    assert a.read_bytes() == b.read_bytes()
    m = manifest(runs[0][1], "equilibrium")
    assert m["config"]["equilibrium"]["tol"] == 1e-6 and "version" in m


def test_kernel_and_biortho_outputs(tmp_path):
    code, out = run(tmp_path, "k", "kernel", "--n", "3", "--n-matrix", "4", "--which", "12")
    assert code == 0
    assert (out / "kernel_12.csv").read_text().count("\n") == 17
    code, out = run(tmp_path, "bo", "biortho", "--n", "3", "--J", "5")
    assert code == 0
    r = manifest(out, "biortho")["results"]
    assert r["p_interlacing"] and r["biorthogonality"]["max_offdiag_scaled"] < 1e-8
