import csv
import math

import pytest

from semigroup_lab.cli import EXIT_CONFIG, EXIT_MISMATCH, EXIT_OK, THREADS_ENV, main
from semigroup_lab.reports import SUMMARY_HEADER

SMALL = """
[run]
seed = 5
[model]
zoo = example1
n_max = 200
[scz_0]
property = stochastic_continuity_zero
function = identity
x = 0
[feller_0]
property = feller
function = identity
t = 1
z = 0
[eprop_0]
property = e_property
function = identity
z = 0
epsilon = 0.3
class = Lb
[stab]
property = asymptotic_stability
initials = 1/3 | random(2)
times = linspace(0, 20, 11)
"""


def write(tmp_path, text, name="cfg.ini"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return str(p)


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def test_zoo_list(capsys):
    assert main(["zoo", "list"]) == EXIT_OK
    rows = list(csv.reader(capsys.readouterr().out.splitlines()))
    assert rows[0] == ["id", "params", "declared"]
    assert [r[0] for r in rows[1:]] == ["example1", "example2", "shift_flow", "mult_flow", "antifeller",
                                        "birth_death"]


def test_run_writes_reports_and_matches_declared(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", write(tmp_path, SMALL), "--out", str(out)]) == EXIT_OK
    text = capsys.readouterr().out
    assert "scz_0: refuted (expected refuted) ok" in text
    assert "eprop_0: refuted (expected refuted) ok" in text
    summary = read_rows(out / "summary.csv")
    assert tuple(summary[0]) == SUMMARY_HEADER
    assert [r[0] for r in summary[1:]] == ["stochastic_continuity_zero", "feller", "e_property",
                                           "asymptotic_stability"]
    scz = read_rows(out / "scz_0.csv")
    assert scz[0] == ["x", "t", "gap"] and scz[-1][0].startswith("witness:")
    raw = (out / "summary.csv").read_bytes()
    assert b"\r" not in raw and raw.endswith(b"\n")


def test_run_mismatch_exit_code(tmp_path, capsys):
    cfg = SMALL + "\n[wrong]\nproperty = feller\nfunction = identity\nt = 1\nz = 0\nexpect = refuted\n"
    assert main(["run", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == EXIT_MISMATCH
    assert "wrong: supported (expected refuted) MISMATCH" in capsys.readouterr().out


def test_runtime_error_becomes_inconclusive(tmp_path, capsys):
    cfg = "[model]\nzoo = antifeller\nn_max = 20\n[l]\nproperty = lemma1\nfunction = identity\nepsilon = 0.1\n" \
          "expect = inconclusive\n"
    assert main(["run", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
    assert read_rows(tmp_path / "o" / "l.csv")[0] == ["error"]


def test_class_flag_selects_declared_verdict(tmp_path, capsys):
    cfg = "[model]\nzoo = shift_flow\n[e]\nproperty = e_property\nfunction = spikes\nz = 3\nepsilon = 0.5\n"
    assert main(["run", write(tmp_path, cfg), "--out", str(tmp_path / "o"), "--class", "Cb"]) == EXIT_OK
    assert "(expected refuted)" in capsys.readouterr().out


def test_bad_config_exit_code(tmp_path, capsys):
    assert main(["run", write(tmp_path, "[model]\nzoo = nowhere\n")]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err
    assert main(["run"]) == EXIT_CONFIG
    assert main(["frobnicate"]) == EXIT_CONFIG


def test_threads_do_not_change_output(tmp_path, monkeypatch, capsys):
    cfg = write(tmp_path, SMALL)
    main(["run", cfg, "--out", str(tmp_path / "a")])
    monkeypatch.setenv(THREADS_ENV, "4")
    main(["run", cfg, "--out", str(tmp_path / "b")])
    for name in ("summary.csv", "stab.csv", "eprop_0.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    monkeypatch.setenv(THREADS_ENV, "zero")
    assert main(["run", cfg, "--out", str(tmp_path / "c")]) == EXIT_CONFIG


def test_evolve_finite_and_flow(tmp_path, capsys):
    assert main(["evolve", "--model", "example1", "--from", "1/3", "--t", "1", "--param", "n_max=10"]) == EXIT_OK
    rows = list(csv.reader(capsys.readouterr().out.splitlines()))
    weights = {r[0]: float(r[1]) for r in rows[1:]}
    assert weights["1/3"] == pytest.approx(math.exp(-3)) and weights["1"] == pytest.approx(1 - math.exp(-3))
    assert main(["evolve", "--model", "shift_flow", "--from", "2=0.5;4=0.5", "--t", "3",
                 "--out", str(tmp_path)]) == EXIT_OK
    rows = read_rows(tmp_path / "evolve.csv")
    assert rows[1:] == [["5.0", "0.5"], ["7.0", "0.5"]]


def test_evolve_errors(capsys):
    assert main(["evolve", "--model", "nowhere", "--from", "0", "--t", "1"]) == EXIT_CONFIG
    assert main(["evolve", "--model", "example1", "--from", "1/3", "--t", "-1"]) == EXIT_CONFIG
    assert main(["evolve", "--model", "example1", "--from", "7", "--t", "1"]) == EXIT_CONFIG
    assert main(["evolve", "--model", "example1", "--from", "0", "--t", "1", "--param", "bad"]) == EXIT_CONFIG


def test_sweep_gap(tmp_path):
    cfg = "[model]\nzoo = example2\nn_max = 40\n[gap]\nquantity = gap\nfunction = capped_identity\n" \
          "n = 2..40\nt = 1/n\nx = 1/n\nz = 0\n[dual]\nquantity = dual\nfunction = identity\nx = 1\nt = 0, 1\n"
    assert main(["sweep", write(tmp_path, cfg), "--out", str(tmp_path / "s")]) == EXIT_OK
    rows = read_rows(tmp_path / "s" / "gap.csv")
    assert rows[0] == ["n", "value"] and len(rows) == 40
    assert float(rows[-1][1]) == pytest.approx(math.exp(-1), abs=0.02)
    assert read_rows(tmp_path / "s" / "dual.csv")[1:] == [["0.0", "1.0"], ["1.0", "1.0"]]
