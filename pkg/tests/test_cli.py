import json
import os
import socket
import subprocess
import sys
import time
from dataclasses import replace

import numpy as np
import pytest

from fairgate import cli, fhe
from fairgate.protocol import SessionConfig, run_local

from conftest import ADULT_DIR

needs_adult = pytest.mark.skipif(not (ADULT_DIR / "adult.data").exists(), reason="Adult data not fetched")
TRAIN, TEST = str(ADULT_DIR / "adult.data"), str(ADULT_DIR / "adult.test")


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def fairgate(*args, env=None, **kw):
    return subprocess.Popen([sys.executable, "-m", "fairgate.cli", *args], stdout=subprocess.PIPE,
                            stderr=subprocess.PIPE, text=True, env={**os.environ, **(env or {})}, **kw)


@needs_adult
def test_analyze_flags_and_exits_two(tmp_path, capsys):
    code = cli.main(["analyze", "--train", TRAIN, "--test", TEST, "--out", str(tmp_path)])
    assert code == cli.EXIT_FLAGGED
    assert "flagged: Never-married, Widowed" in capsys.readouterr().out
    man = json.loads((tmp_path / "manifest.json").read_text())
    for name in man["outputs"]:
        assert os.path.exists(name)
    names = {os.path.basename(n) for n in man["outputs"]}
    assert {"models.csv", "wald_age.csv", "wald_age.txt", "summary.txt"} <= names
    assert man["seed"] == 0 and set(man["timings_ms"]) >= {"load", "fit"}


@needs_adult
def test_analyze_csv_is_byte_identical_across_runs(tmp_path):
    outs = []
    for k in range(2):
        cli.main(["analyze", "--train", TRAIN, "--test", TEST, "--out", str(tmp_path / str(k))])
        outs.append({f.name: f.read_bytes() for f in (tmp_path / str(k)).glob("*.csv")})
    assert outs[0] == outs[1] and outs[0]


@pytest.mark.parametrize("args", [
    ["analyze", "--sensitive", "shoe-size"],
    ["analyze", "--alpha", "2"],
    ["frobnicate"],
    ["bench", "--params", "n3000"],
    ["comp", "--backend", "rlwe"],  # neither --listen nor --connect
])
def test_usage_errors_exit_64(args, tmp_path):
    extra = ["--train", TRAIN, "--test", TEST] if args[0] == "analyze" else []
    assert cli.main(args + extra + ["--out", str(tmp_path)] if args[0] != "frobnicate" else args) == cli.EXIT_USAGE


def test_missing_data_exits_65(tmp_path):
    code = cli.main(["analyze", "--train", str(tmp_path / "none.csv"), "--test", str(tmp_path / "none.csv"),
                     "--out", str(tmp_path)])
    assert code == cli.EXIT_DATA


def test_ml_without_comp_fails(tmp_path):
    code = cli.main(["ml", "--connect", f"127.0.0.1:{free_port()}", "--out", str(tmp_path)])
    assert code == cli.EXIT_INTERNAL


def test_config_file_and_env_fallback(tmp_path, monkeypatch):
    path = tmp_path / "s.cfg"
    path.write_text("backend: rlwe\nparams: n1024\nalpha: 0.01\n")
    parser = cli.build_parser()
    monkeypatch.setenv(cli.CONFIG_ENV, str(path))
    cfg = cli._session_config(parser.parse_args(["ml", "--connect", "x:1"]))
    assert cfg.alpha == 0.01 and cfg.params == "n1024" and cfg.profile == "full"
    cfg = cli._session_config(parser.parse_args(["ml", "--connect", "x:1", "--alpha", "0.2"]))
    assert cfg.alpha == 0.2
    monkeypatch.delenv(cli.CONFIG_ENV)
    cfg = cli._session_config(parser.parse_args(["ml", "--connect", "x:1", "--backend", "rlwe"]))
    assert cfg.profile == "subsample"


@needs_adult
def test_comp_and_ml_processes_over_tcp(tmp_path):
    port = free_port()
    comp = fairgate("comp", "--listen", f"127.0.0.1:{port}", "--data", TRAIN, "--out", str(tmp_path / "comp"))
    ml = fairgate("ml", "--connect", f"127.0.0.1:{port}", "--retry", "30", "--out", str(tmp_path / "ml"))
    out_c, err_c = comp.communicate(timeout=300)
    out_m, err_m = ml.communicate(timeout=60)
    assert comp.returncode == 0, err_c
    assert ml.returncode == 0, err_m
    assert "rounds: 2" in out_c and "round 2: flagged none" in out_c
    assert "ml: 2 round(s)" in out_m
    names = {p.name for p in (tmp_path / "comp").iterdir()}
    assert {"model.csv", "transcript.ndjson", "round1_wald_age.csv", "round2_wald_age.csv"} <= names


@needs_adult
def test_rlwe_subsample_matches_cleartext_run_of_the_same_learner(adult_train):
    enc = SessionConfig(backend="rlwe", params="n1024", profile="subsample", recode=())
    clear = replace(enc, backend="cleartext", learner="linear_gd")
    a = run_local(adult_train, enc).result
    b = run_local(adult_train, clear).result
    assert len(a.rounds) == len(b.rounds)
    assert [c.key for c in a.model.columns] == [c.key for c in b.model.columns]
    assert np.max(np.abs(a.model.coef - b.model.coef)) <= 1e-2


def test_bench_table_n1024(tmp_path):
    assert cli.main(["bench", "--params", "n1024", "--reps", "1", "--out", str(tmp_path)]) == 0
    text = (tmp_path / "bench_n1024.txt").read_text()
    for op in ("encrypt", "add", "mul+rescale", "rotate", "refresh round-trip", "projected linear epoch"):
        assert op in text


def test_bench_refresh_beats_mul_chain_and_small_ring_is_faster():
    small = dict(cli.bench_table(fhe.preset("n1024"), reps=3))
    big = dict(cli.bench_table(fhe.preset("default"), reps=3))
    assert big["refresh round-trip"] < big["mul chain to exhaustion"]
    for op in ("encrypt", "mul+rescale", "rotate"):
        assert small[op] < big[op]


@needs_adult
def test_prepare_writes_design(tmp_path):
    assert cli.main(["prepare", "--data-dir", str(ADULT_DIR), "--profile", "subsample", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "schema.txt").exists()
    assert json.loads((tmp_path / "manifest.json").read_text())["command"] == "prepare"
