import json
import os
import subprocess
import sys

import pytest

from wsnad import config as cfgmod
from wsnad.cli import main
from wsnad.seeding import derive_seed, tag_hash


def run(*args):
    return main([str(a) for a in args])


# ------------------------------------------------------------------------ config


def test_seed_derivation_rule():
    import hashlib
    h = int.from_bytes(hashlib.sha256(b"signal").digest()[:8], "little")
    assert tag_hash("signal") == h
    assert derive_seed(5, "signal") == (5 + h) % 2**64
    assert derive_seed(2**64 - 1, "x") == (2**64 - 1 + tag_hash("x")) % 2**64


def test_config_defaults_and_derived_seeds(toy_config):
    cfg = cfgmod.load(toy_config)
    assert cfg.sim.signal.seed == derive_seed(7, "signal")
    assert cfg.sim.training.seed == derive_seed(7, "training")
    assert cfg.sim.shape.hidden_dim == 34
    assert cfg.sweeps["frequency"]["k"] == [2, 4, 8]
    assert cfg.sweeps["frequency"]["mu_v"] == cfgmod.SWEEP_DEFAULTS["frequency"]["mu_v"]


def test_overrides_and_seed_flag(toy_config):
    cfg = cfgmod.load(toy_config, overrides=["signal.days=12", "policy.scheme=random"], seed=3)
    assert cfg.sim.signal.days == 12 and cfg.sim.policy.scheme == "random"
    assert cfg.sim.anomalies.seed == derive_seed(3, "anomalies")


def test_unknown_field_names_its_path(tmp_path, toy_config):
    raw = json.loads(toy_config.read_text())
    raw["signal"]["dayz"] = 3
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(raw))
    with pytest.raises(cfgmod.ConfigError, match="signal.dayz"):
        cfgmod.load(p)


def test_missing_required_field(tmp_path, toy_config):
    raw = json.loads(toy_config.read_text())
    del raw["network"]
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(raw))
    with pytest.raises(cfgmod.ConfigError, match="network.hidden_dim"):
        cfgmod.load(p)


def test_syntax_error_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "seed": 1,\n  oops\n}')
    with pytest.raises(cfgmod.ConfigError, match="line 3"):
        cfgmod.load(p)


def test_type_error_names_field(toy_config):
    with pytest.raises(cfgmod.ConfigError, match="training.epochs"):
        cfgmod.load(toy_config, overrides=["training.epochs=ten"])


def test_resolved_config_reloads_identically(tmp_path, toy_config):
    cfg = cfgmod.load(toy_config)
    p = tmp_path / "resolved.json"
    p.write_text(json.dumps(cfgmod.resolved(cfg)))
    assert cfgmod.resolved(cfgmod.load(p)) == cfgmod.resolved(cfg)


# --------------------------------------------------------------------------- CLI


def test_exit_code_config_error(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text("{")
    assert run("simulate", p, tmp_path / "out") == 2
    assert "config error" in capsys.readouterr().err


def test_exit_code_io_error(tmp_path):
    assert run("simulate", tmp_path / "missing.json", tmp_path / "out") == 3


def test_exit_code_report_missing_manifest(tmp_path, capsys):
    (tmp_path / "run").mkdir()
    assert run("report", tmp_path / "run") == 4
    assert "manifest" in capsys.readouterr().err


def test_generate_writes_dataset(tmp_path, toy_config):
    out = tmp_path / "gen"
    assert run("generate", toy_config, out) == 0
    assert (out / "dataset.csv").exists() and (out / "dataset.labels.json").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["kind"] == "generate" and manifest["status"] == "complete"


def test_simulate_report_and_incomplete_detection(tmp_path, toy_config, capsys):
    out = tmp_path / "sim"
    assert run("simulate", toy_config, out) == 0
    assert run("report", out) == 0
    first = (out / "summary.json").read_bytes()
    assert run("report", out) == 0
    assert (out / "summary.json").read_bytes() == first
    text = capsys.readouterr().out
    assert "sensor-to-sensor   0" in text
    (out / "scores.csv").unlink()
    assert run("report", out) == 4
    assert "scores.csv" in capsys.readouterr().err


def test_simulate_from_manifest_reproduces(tmp_path, toy_config):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("simulate", toy_config, a) == 0
    assert run("simulate", a / "manifest.json", b) == 0
    for f in sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file()):
        if f.name != "manifest.json":
            assert (a / f).read_bytes() == (b / f).read_bytes(), f


def test_sweep_resume_skips_finished_cells(tmp_path, toy_config, capsys):
    out = tmp_path / "freq"
    assert run("sweep", toy_config, "frequency", out) == 0
    assert "3 cells computed" in capsys.readouterr().out
    first = (out / "freq_sweep.csv").read_bytes()
    # simulate an interrupted run: one cell lost, manifest left at "running"
    (out / "cells" / "freq_4.json").unlink()
    m = json.loads((out / "manifest.json").read_text())
    m["status"] = "running"
    (out / "manifest.json").write_text(json.dumps(m))
    assert run("report", out) == 4
    assert run("sweep", toy_config, "frequency", out) == 0
    assert "1 cells computed" in capsys.readouterr().out
    assert (out / "freq_sweep.csv").read_bytes() == first


def test_sweep_config_change_discards_cells(tmp_path, toy_config, capsys):
    out = tmp_path / "freq"
    assert run("sweep", toy_config, "frequency", out) == 0
    capsys.readouterr()
    assert run("sweep", toy_config, "frequency", out, "--set", "training.epochs=200") == 0
    assert "3 cells computed" in capsys.readouterr().out


def test_parallel_sweep_matches_serial(tmp_path, toy_config):
    a, b = tmp_path / "serial", tmp_path / "parallel"
    assert run("sweep", toy_config, "heatmap", a) == 0
    assert run("sweep", toy_config, "heatmap", b, "--jobs", 2) == 0
    assert (a / "heatmap.csv").read_bytes() == (b / "heatmap.csv").read_bytes()


def test_report_over_parent_directory(tmp_path, toy_config, capsys):
    assert run("sweep", toy_config, "adaptivity", tmp_path / "adapt") == 0
    assert run("generate", toy_config, tmp_path / "gen") == 0
    capsys.readouterr()
    assert run("report", tmp_path) == 0
    out = capsys.readouterr().out
    assert "[adapt] sweep-adaptivity" in out and "[gen] generate" in out
    combined = json.loads((tmp_path / "summary.json").read_text())
    assert set(combined) == {"adapt", "gen"}
    assert set(combined["adapt"]["medians"]) == {"prioritized", "random"}


def test_console_script_entry_point(tmp_path):
    env = dict(os.environ)
    res = subprocess.run([sys.executable, "-m", "wsnad", "--version"], capture_output=True, text=True, env=env)
    assert res.returncode == 0 and res.stdout.startswith("wsnad ")


def test_report_on_empty_dir(tmp_path):
    assert run("report", tmp_path) == 4


def test_generate_rerun_byte_identical(tmp_path, toy_config):
    assert run("generate", toy_config, tmp_path / "a") == 0
    assert run("generate", toy_config, tmp_path / "b") == 0
    for name in ("dataset.csv", "dataset.labels.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_flag_changes_outputs_deterministically(tmp_path, toy_config):
    for name, seed in (("s1", 1), ("s1b", 1), ("s2", 2)):
        assert run("generate", toy_config, tmp_path / name, "--seed", seed) == 0
    data = {n: (tmp_path / n / "dataset.csv").read_bytes() for n in ("s1", "s1b", "s2")}
    assert data["s1"] == data["s1b"] and data["s1"] != data["s2"]


def test_sweep_output_shapes(tmp_path, toy_config):
    import csv
    assert run("sweep", toy_config, "heatmap", tmp_path / "h") == 0
    rows = list(csv.reader(open(tmp_path / "h" / "heatmap.csv")))
    assert len(rows) == 4 and all(len(r) == 4 for r in rows)
    assert run("sweep", toy_config, "adaptivity", tmp_path / "a",
               "--set", "sweeps.adaptivity.seeds=[0,1,2,3,4,5,6,7,8,9]") == 0
    rows = list(csv.DictReader(open(tmp_path / "a" / "adaptivity.csv")))
    for scheme in ("random", "prioritized"):
        assert sum(r["scheme"] == scheme for r in rows) == 10
