import json

import numpy as np
import pytest

from particula import cli


def run(argv):
    return cli.main(argv)


def read(path):
    with open(path, "rb") as f:
        return f.read()


def test_unknown_config_key_exit_2(tmp_path, capsys):
    cfgf = tmp_path / "c.json"
    cfgf.write_text(json.dumps({"subcommannd": "md"}))
    assert run(["md", "--config", str(cfgf)]) == 2
    assert "unknown key: subcommannd" in capsys.readouterr().err


def test_bad_value_and_constraints_exit_2(tmp_path, capsys):
    cfgf = tmp_path / "c.json"
    cfgf.write_text(json.dumps({"steps": "many"}))
    assert run(["md", "--config", str(cfgf)]) == 2
    assert run(["md", "--dt", "-0.1", "--output", "-"]) == 2
    assert run(["md", "--cutoff", "99", "--output", "-"]) == 2
    capsys.readouterr()


def test_flags_override_file(tmp_path):
    cfgf = tmp_path / "c.json"
    cfgf.write_text(json.dumps({"steps": 10, "lattice_cells": 3}))
    out = tmp_path / "o.csv"
    assert run(["md", "--config", str(cfgf), "--steps", "4",
                "--output", str(out)]) == 0
    text = out.read_text()
    assert "steps=4" in text.splitlines()[0]
    assert text.splitlines()[-1].startswith("4,")


def test_seeded_runs_byte_identical(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["md", "--steps", "5", "--lattice-cells", "3", "--seed", "7"]
    assert run(args + ["--output", str(a)]) == 0
    assert run(args + ["--output", str(b)]) == 0
    assert read(a) == read(b)
    assert read(tmp_path / "a.csv.phases.csv").splitlines()[1] == b"phase,seconds"


def test_csv_format_contract(tmp_path):
    out = tmp_path / "o.csv"
    assert run(["md", "--steps", "2", "--lattice-cells", "3",
                "--output", str(out)]) == 0
    raw = read(out)
    assert b"\r" not in raw                       # LF endings
    lines = raw.decode().splitlines()
    assert lines[0].startswith("# ")              # effective-config comment
    assert lines[1] == "step,KE,PE,E_total,temperature"
    assert len(lines) == 2 + 3                    # steps 0..2


def test_pic_implicit_csv_columns(tmp_path):
    out = tmp_path / "o.csv"
    assert run(["pic-implicit", "--steps", "2", "--particles", "1024",
                "--grid-cells", "16", "--output", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[1] == "step,KE,FE,E_total,iterations,residual"
    e = [float(l.split(",")[3]) for l in lines[2:]]
    assert abs(e[-1] - e[0]) < 1e-10 * abs(e[0])


def test_solver_failure_exit_4(capsys):
    assert run(["pic-implicit", "--steps", "1", "--particles", "256",
                "--grid-cells", "16", "--picard-tol", "1e-30",
                "--output", "-"]) == 4
    capsys.readouterr()


def test_layout_bench_checksum_constant(tmp_path):
    out = tmp_path / "o.csv"
    assert run(["layout-bench", "--steps", "3", "--lattice-cells", "3",
                "--vector-lengths", "1,4,8,16", "--output", str(out)]) == 0
    rows = [l.split(",") for l in out.read_text().splitlines()[2:]]
    checksums = {r[3] for r in rows}
    assert len(checksums) == 1                    # layout transparency
    assert {r[0] for r in rows} == {"1", "4", "8", "16"}


def test_fft_bench_table(tmp_path):
    out = tmp_path / "o.csv"
    assert run(["fft-bench", "--rank-counts", "1,8,27", "--dims", "16,16,16",
                "--output", str(out)]) == 0
    rows = [l.split(",") for l in out.read_text().splitlines()[2:]]
    assert len(rows) == 3 * 4                     # 4 stages per rank count
    by_ranks = {r: [] for r in ("1", "8", "27")}
    for ranks, stage, pairs in rows:
        by_ranks[ranks].append(int(pairs))
    assert all(p == 0 for p in by_ranks["1"])
    assert max(by_ranks["27"]) > max(by_ranks["8"]) > 0


def test_sgct_subcommand(tmp_path):
    out = tmp_path / "o.csv"
    assert run(["sgct", "--particles", "20000", "--levels", "4,5",
                "--output", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[1] == "level,N_p,variance_dense,variance_sgct"
    for line in lines[2:]:
        _lv, _n, vd, vs = line.split(",")
        assert float(vs) < float(vd)


def test_spme_check_subcommand(tmp_path):
    out = tmp_path / "o.csv"
    assert run(["spme-check", "--n-configs", "1", "--n-charges", "16",
                "--mesh", "64", "--output", str(out)]) == 0
    _cfg, header, row = out.read_text().splitlines()
    assert header == "config,energy_rel_err,force_max_err"
    assert float(row.split(",")[2]) < 1e-3


def test_threads_env_validated(monkeypatch, capsys):
    monkeypatch.setenv("PARTICULA_THREADS", "zero")
    assert run(["md", "--steps", "1", "--lattice-cells", "3",
                "--parallel", "--output", "-"]) == 2
    capsys.readouterr()
    monkeypatch.setenv("PARTICULA_THREADS", "2")
    assert run(["md", "--steps", "1", "--lattice-cells", "3",
                "--parallel", "--output", "-"]) == 0
    assert "threads=2" in capsys.readouterr().out
