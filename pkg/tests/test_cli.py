import csv
import json

import pytest

from diracsearch.cli import EXIT_CONFIG, EXIT_OK, main


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_bands(tmp_path):
    assert main(["bands", "--lattice", "kagome", "--l", "6", "--out", str(tmp_path)]) == EXIT_OK
    rows = read_csv(tmp_path / "bands.csv")
    assert rows[0] == ["k1", "k2", "E1", "E2", "E3"]
    assert len(rows) == 37
    # flat band at -3 in every row
    assert all(abs(float(r[2]) + 3) < 1e-12 for r in rows[1:])
    assert (tmp_path / "plot_bands.py").exists()


def test_dirac_report(tmp_path, capsys):
    assert main(["dirac", "--lattice", "staggered-hypercubic-3", "--out", str(tmp_path)]) == EXIT_OK
    rep = json.loads((tmp_path / "dirac.json").read_text())
    assert rep["assumptions"]["D"] == 1 and rep["assumptions"]["m"] == 8
    assert all(c == pytest.approx(1) for c in rep["dirac_points"][0]["chi"])


def test_dirac_disconnection_diagnostic(tmp_path, capsys):
    main(["dirac", "--lattice", "dirac-square", "--param", "gamma=0", "--out", str(tmp_path)])
    assert "2 connected components" in capsys.readouterr().out


def test_integrals_and_floats(tmp_path):
    assert main(["integrals", "--lattice", "staggered-hypercubic-2", "--ladder", "8,16", "--out", str(tmp_path)]) == EXIT_OK
    rows = read_csv(tmp_path / "moments.csv")
    assert rows[0] == ["l", "m", "value"]
    assert len(rows) == 5
    # 17 significant digits round-trip exactly
    v = rows[-1][2]
    assert float(v) == float(repr(float(v)))
    summary = json.loads((tmp_path / "integrals.json").read_text())
    assert summary["log_fit"]["slope"] > 0


def test_simulate_deterministic(tmp_path):
    args = ["simulate", "--lattice", "staggered-hypercubic-2", "--l", "6", "--marked", "random", "--seed", "3", "--n-times", "40"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    for name in ("prediction.csv", "trace_l6.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    header = read_csv(tmp_path / "a" / "prediction.csv")[0]
    assert header == "lattice,d,l,n,N,oracle,gamma,I1,I2,Eminus,Eplus,Fprime,T,overlapStart,successAmplitude".split(",")


def test_config_file_with_override(tmp_path):
    cfg = tmp_path / "exp.toml"
    cfg.write_text('lattice = "honeycomb"\nl = 6\nmarked = [1, 2, 0]\nn_times = 20\nstarts = "true"\n')
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(cfg), "--l", "9", "--out", str(out)]) == EXIT_OK
    rows = read_csv(out / "prediction.csv")
    assert rows[1][0] == "honeycomb" and rows[1][2] == "9"


def test_bad_config_exit_code(tmp_path):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("colour = 'blue'\n")
    assert main(["bands", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["bands", "--lattice", "nonsense", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["simulate", "--lattice", "honeycomb", "--marked", "1,2", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_numerical_failure_exit_code(tmp_path):
    # honeycomb Dirac momenta are off the l = 4 grid
    assert main(["simulate", "--lattice", "honeycomb", "--l", "4", "--out", str(tmp_path)]) == 3


def test_verify(tmp_path, capsys):
    assert main(["verify", "--out", str(tmp_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.count("[PASS]") >= 5 and "[FAIL]" not in out
