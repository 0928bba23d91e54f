import json
import subprocess
import sys

import pytest

import stpc.simharness as sh
from stpc.cli import EXIT_INVARIANT, main
from stpc.net.config import SessionConfig
from stpc.net.launch import LocalParties


def test_size_modulus(capsys):
    assert main(["size-modulus"]) == 0
    assert capsys.readouterr().out.split() == ["248"]
    assert main(["size-modulus", "--n", "1", "--p", "1", "--k", "4", "--ell", "2", "--lam", "1",
                 "--c", "1", "--gamma", "0.5"]) == 0
    assert capsys.readouterr().out.split() == ["15"]
    assert main(["size-modulus", "--check", hex(2**255 + 95)]) == 0
    assert main(["size-modulus", "--check", str(2**127 - 1)]) == 1


def test_gen_config(tmp_path, capsys):
    out = tmp_path / "c.json"
    assert main(["gen-config", "--out", str(out), "--parties", "10.0.0.1:9000", "10.0.0.2:9000"]) == 0
    cfg = SessionConfig.load(out)
    assert cfg.parties == {0: "10.0.0.1:9000", 1: "10.0.0.2:9000"}
    assert cfg.controller_spec().required_bits() == 248
    assert main(["gen-config", "--party-copy"]) == 0
    assert "controller" not in json.loads(capsys.readouterr().out)
    assert main(["gen-config", "--modulus", str(2**127 - 1)]) == 2


def test_run_inprocess(tmp_path):
    log = tmp_path / "run.log"
    assert main(["run", "--steps", "20", "--seed", "1", "--log", str(log)]) == 0
    lines = log.read_text().splitlines()
    assert len(lines) == 21 and lines[-1].startswith("# steps=20")
    assert main(["run", "--steps", "5", "--measurements", "random", "--seed", "1",
                 "--log", str(log)]) == 0


def test_run_reports_invariant_violation(monkeypatch, tmp_path):
    real = sh._inprocess_stepper

    def corrupt(session):
        step = real(session)
        return lambda y: (lambda r: (r[0], r[1] + 1, r[2], r[3]))(step(y))

    monkeypatch.setattr(sh, "_inprocess_stepper", corrupt)
    assert main(["run", "--steps", "2", "--log", str(tmp_path / "x")]) == EXIT_INVARIANT


def test_bench_inprocess(tmp_path):
    out = tmp_path / "b.csv"
    assert main(["bench", "--mode", "inprocess", "--dims", "3,5", "--reps", "2", "--out", str(out)]) == 0
    rows = sh.read_csv(out.read_text())
    assert len(rows) == 4


def test_party_and_client_binaries(tmp_path):
    cfg_path = tmp_path / "session.json"
    assert main(["gen-config", "--out", str(cfg_path)]) == 0
    cfg = SessionConfig.load(cfg_path)
    with LocalParties(cfg) as live:
        live.dump(cfg_path)
        proc = subprocess.run(
            [sys.executable, "-m", "stpc", "client", "--config", str(cfg_path), "--steps", "5",
             "--seed", "3", "--period-ms", "0"],
            capture_output=True, text=True, timeout=60)
    assert proc.returncode == 0, proc.stderr
    lines = proc.stdout.splitlines()
    assert len(lines) == 5 and lines[0].startswith("step=0 ")


def test_bad_config_path():
    assert main(["run", "--config", "/nonexistent/x.json", "--steps", "1"]) == 2
