import csv
import hashlib
import json
from pathlib import Path

import pytest

from ecrflow.cli import main, parse_value, resolve_config
from ecrflow.errors import ConfigError

SYNC1 = """
scenario = "sync1"
experiment = "stability"
seed = 0

[params]
d = 2
nu = 1.0
delta = 0.5

[integrator]
rel_tol = 1e-12
abs_tol = 1e-14
"""

CUSTOM = """
scenario = "custom-piecewise-constant"
experiment = "words"
"""


@pytest.fixture
def cfg(tmp_path):
    def write(text, name="run.cfg"):
        p = tmp_path / name
        p.write_text(text)
        return str(p)

    return write


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


@pytest.mark.parametrize("text,value", [("3", 3), ("1e-5", 1e-5), ("true", True), ("beta", "beta")])
def test_parse_value(text, value):
    assert parse_value(text) == value


def test_stability_report(cfg, tmp_path, capsys):
    assert main(["run", cfg(SYNC1), "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "report.txt").read_text())
    assert doc["verdict"] == "ExponentiallyStable"
    assert doc["contraction"] == pytest.approx(1 / 3, abs=1e-6)
    assert "ExponentiallyStable" in capsys.readouterr().out


def test_words_listing(cfg, tmp_path):
    assert main(["run", cfg(CUSTOM), "--n", "3", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "words.csv")
    assert rows[0] == ["index", "word"] and len(rows) == 14


def test_manifest_records_everything(cfg, tmp_path):
    assert main(["run", cfg(SYNC1), "--experiment", "simulate", "--seed", "7",
                 "--tol-override", "event_tol=1e-11", "--out", str(tmp_path)]) == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["seed"] == 7
    assert man["tolerances"]["event_tol"] == 1e-11
    assert man["config"]["params"] == {"d": 2, "nu": 1.0, "delta": 0.5}
    assert set(man["versions"]) >= {"python", "numpy", "scipy", "ecrflow"}
    for name, digest in man["artifacts"].items():
        assert hashlib.sha256((tmp_path / name).read_bytes()).hexdigest() == digest
    assert set(man["artifacts"]) == {"trajectory.csv", "events.csv"}


def test_manifest_alone_reproduces_the_run(cfg, tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    first.mkdir()
    second.mkdir()
    assert main(["run", cfg(SYNC1), "--experiment", "flowbox", "--seed", "3", "--out", str(first)]) == 0
    man = json.loads((first / "manifest.json").read_text())
    conf = man["config"]
    lines = [f'scenario = "{conf["scenario"]}"', f'experiment = "{conf["experiment"]}"', f"seed = {conf['seed']}"]
    for sec in ("params", "integrator"):
        lines.append(f"[{sec}]")
        lines += [f"{k} = {v!r}" for k, v in conf[sec].items()]
    assert main(["run", cfg("\n".join(lines), "again.cfg"), "--out", str(second)]) == 0
    assert (first / "flowbox.csv").read_bytes() == (second / "flowbox.csv").read_bytes()


def test_byte_identical_csv(cfg, tmp_path):
    outs = []
    for k in range(2):
        d = tmp_path / f"o{k}"
        d.mkdir()
        assert main(["run", cfg(SYNC1), "--experiment", "simulate", "--out", str(d)]) == 0
        outs.append((d / "trajectory.csv").read_bytes())
    assert outs[0] == outs[1]


def test_csv_floats_round_trip(cfg, tmp_path):
    main(["run", cfg(SYNC1), "--experiment", "simulate", "--out", str(tmp_path)])
    rows = read_csv(tmp_path / "trajectory.csv")
    for row in rows[1:]:
        for v in row[:-1]:
            assert repr(float(v)) == v


def test_sweep_writes_summary(cfg, tmp_path, monkeypatch):
    monkeypatch.setenv("ECRFLOW_THREADS", "2")
    assert main(["run", cfg(SYNC1), "--sweep", "delta=0.3,0.5", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "sweep.csv")
    assert rows[0][:2] == ["delta", "contraction"]
    got = [float(r[1]) for r in rows[1:]]
    assert got == pytest.approx([0.7 / 1.3, 0.5 / 1.5], abs=1e-6)
    assert (tmp_path / "point_001" / "report.txt").exists()


def test_sweep_is_independent_of_thread_count(cfg, tmp_path, monkeypatch):
    texts = []
    for threads in ("1", "2"):
        monkeypatch.setenv("ECRFLOW_THREADS", threads)
        d = tmp_path / threads
        d.mkdir()
        assert main(["run", cfg(SYNC1), "--experiment", "poincare", "--sweep", "delta=0.3,0.5",
                     "--out", str(d)]) == 0
        texts.append((d / "sweep.csv").read_text())
    assert texts[0] == texts[1]


def test_missing_output_dir(cfg, tmp_path, capsys):
    code = main(["run", cfg(SYNC1), "--out", str(tmp_path / "nope")])
    assert code == 2
    rec = json.loads(capsys.readouterr().err)
    assert rec["error"] == "ConfigError"


@pytest.mark.parametrize("extra", ['colour = "red"', "[params]\nomega = 2.0", "[output]\npath = 'x'"])
def test_unknown_keys_rejected(cfg, tmp_path, extra):
    text = SYNC1.replace("[params]", extra + "\n[params]", 1) if not extra.startswith("[params]") else \
        SYNC1.replace("d = 2", "d = 2\nomega = 2.0")
    assert main(["run", cfg(text), "--out", str(tmp_path)]) == 2


def test_parameter_constraints_enforced_at_load():
    with pytest.raises(ConfigError):
        resolve_config({"scenario": "sync1", "experiment": "stability", "params": {"delta": 2.0}})
    with pytest.raises(ConfigError):
        resolve_config({"scenario": "torus", "experiment": "stability"})
    with pytest.raises(ConfigError):
        resolve_config({"scenario": "sync1", "experiment": "stability", "options": {"words": {"n": 3}, "m": 1}})


def test_experiment_error_record(cfg, tmp_path, capsys):
    text = 'scenario = "sync2"\n[options.simulate]\nx0 = [0.0, 0.1, 0.2, -0.1]\nt = 1.0\n'
    assert main(["run", cfg(text), "--experiment", "simulate", "--out", str(tmp_path)]) == 3
    rec = json.loads((tmp_path / "error.json").read_text())
    assert rec["error"] == "ExperimentError" and rec["cause"] == "ZeroVelocityRegion"


def test_poincare_needs_an_orbit(cfg, tmp_path):
    assert main(["run", cfg(CUSTOM), "--experiment", "poincare", "--out", str(tmp_path)]) == 2


def test_acceptance_subset_and_summary(tmp_path, capsys):
    assert main(["acceptance", "--only", "7,8", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "[PASS] criterion  7" in out and "2/2 criteria passed" in out
    rows = read_csv(tmp_path / "acceptance.csv")
    assert [r[0] for r in rows[1:]] == ["7", "8"]


def test_acceptance_mutation_is_caught(capsys):
    assert main(["acceptance", "--only", "7", "--mutation", "saltation-sign"]) == 1
    assert "[FAIL] criterion  7" in capsys.readouterr().out


def test_acceptance_missing_output_dir(tmp_path):
    assert main(["acceptance", "--only", "8", "--out", str(tmp_path / "missing")]) == 2


def test_shipped_configs_parse():
    root = Path(__file__).resolve().parents[1] / "configs"
    from ecrflow.cli import load_config

    for name in ("sync1.cfg", "sync2.cfg", "custom.cfg"):
        resolve_config(load_config(root / name))
