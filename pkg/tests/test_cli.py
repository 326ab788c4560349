import json

import pytest

from artifact.cli import ConfigError, main, parse_config_text, resolve_config


def test_parse_config_text():
    cfg = parse_config_text("# header\nseed = 4\n\nn-list = 1,2  # trailing\n")
    assert cfg == {"seed": "4", "n_list": "1,2"}
    with pytest.raises(ConfigError):
        parse_config_text("seed 4")


def test_resolve_config(monkeypatch):
    monkeypatch.setenv("ARTIFACT_OUT", "/tmp/somewhere")
    cfg = resolve_config("records", {"trials": "1e3"}, {"seed": "7"})
    assert cfg["trials"] == 1000 and cfg["seed"] == 7 and cfg["out"] == "/tmp/somewhere"
    # flags win over the file
    assert resolve_config("records", {"seed": "3"}, {"seed": "9"})["seed"] == 9
    with pytest.raises(ConfigError):
        resolve_config("records", {"bogus": "1"}, {})
    with pytest.raises(ConfigError):
        resolve_config("records", {}, {"workers": "0"})
    with pytest.raises(ConfigError):
        resolve_config("records", {"trials": "many"}, {})


def test_exit_codes(tmp_path):
    out = str(tmp_path)
    base = ["switching-freq", "--out", out, "--n-list", "10", "--paths", "200"]
    assert main(base + ["--min-frequency", "0.1"]) == 0
    rep = json.loads((tmp_path / "switching-freq" / "report.json").read_text())
    assert rep["passed"] and rep["schema_version"] == 1
    assert set(rep) >= {"config", "metrics", "verdicts", "wall_seconds", "artifact_version"}
    assert main(base + ["--min-frequency", "1.0"]) == 2
    assert main(["no-such-experiment"]) == 1
    assert main(["walk", "--bogus", "1"]) == 1
    assert main(["walk", "--out", out, "--measure", "other"]) == 1


def test_config_file(tmp_path):
    conf = tmp_path / "walk.conf"
    conf.write_text(f"measure = mu\nn_steps = 12\nout = {tmp_path}\n")
    assert main(["walk", "--config", str(conf)]) == 0
    rows = (tmp_path / "walk" / "trajectory.csv").read_text().splitlines()
    assert rows[0] == "i,increment,word,projected" and len(rows) == 13


def _csvs(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*.csv"))}


def test_outputs_are_byte_identical(tmp_path):
    runs = []
    for tag, workers in (("a", 1), ("b", 1), ("c", 2)):
        out = tmp_path / tag
        args = ["hitting", "--out", str(out), "--paths", "4000", "--depth", "2", "--mu-steps", "60",
                "--mu-margin", "10", "--workers", str(workers)]
        assert main(args) in (0, 2)
        assert main(["records", "--out", str(out), "--trials", "300", "--horizon", "1e4",
                     "--decay-n", "1000", "--csv-traces", "5"]) in (0, 2)
        runs.append(_csvs(out))
    assert runs[0] and runs[0] == runs[1] == runs[2]
