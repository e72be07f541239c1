import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eitsize import cli
from eitsize.bounds import theoretical_line_cosine
from eitsize.config import ConfigError, parse_config
from eitsize.forward import SolveRecord
from eitsize.linsolve import SolverError
from eitsize.records import COLUMNS, format_float, parse_csv, read_csv, records_to_csv, records_to_dat


def write_cfg(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg, indent=2))
    return str(path)


def t1_config(dim=2, n_e=8, **extra):
    cfg = {"model": "neumann", "mesh": {"dim": dim, "n_e": n_e},
           "excitation": {"test": "T1"}}
    cfg.update(extra)
    return cfg


def run(capsys, argv):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_solve_homogeneous(tmp_path, capsys):
    code, out, _ = run(capsys, ["solve", "--config", write_cfg(tmp_path, t1_config(3, 6))])
    rec = json.loads(out)
    assert code == 0
    assert abs(rec["W0"] - 1) <= 1e-10 and rec["gap"] == 0


def test_solve_unit_contrast(tmp_path, capsys):
    cfg = t1_config(inclusion={"k": 1.0, "block": {"origin": [2, 2], "side": 3}})
    code, out, _ = run(capsys, ["solve", "--config", write_cfg(tmp_path, cfg), "--seed", "5"])
    rec = json.loads(out)
    assert code == 0 and rec["gap"] <= 1e-10 and rec["seed"] == 5


def test_solve_inclusion(tmp_path, capsys):
    cfg = t1_config(inclusion={"k": 10.0, "elements": [27, 28]})
    code, out, _ = run(capsys, ["solve", "--config", write_cfg(tmp_path, cfg)])
    rec = json.loads(out)
    assert code == 0 and rec["W"] < rec["W0"] and rec["n_elements"] == 2


def test_malformed_json_position(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{"model": "neumann",\n  "mesh": {dim: 2}}')
    code, _, err = run(capsys, ["solve", "--config", str(path)])
    assert code == 2
    assert "bad.json:2:12" in err


@pytest.mark.parametrize("patch", [
    {"excitation": {"test": "T1", "zeta": 0.0}, "model": "cem"},
    {"excitation": {"test": "T1", "zeta": -1.0}, "model": "cem"},
    {"inclusion": {"k": 0.0, "elements": [5]}},
    {"inclusion": {"k": -3.0, "elements": [5]}},
    {"sweep": {"k": [10.0, 1.0]}},
    {"mesh": {"dim": 4, "n_e": 8}},
    {"surprise": 1},
])
def test_schema_rejections(tmp_path, capsys, patch):
    cfg = t1_config()
    cfg.update(patch)
    code, _, err = run(capsys, ["solve", "--config", write_cfg(tmp_path, cfg)])
    assert code == 2 and "invalid configuration" in err


def test_overlapping_electrodes_rejected(tmp_path, capsys):
    cfg = {"model": "cem", "mesh": {"dim": 3, "n_e": 12},
           "excitation": {"test": "custom", "currents": [1.0, -1.0], "electrodes": [
               {"axis": 2, "side": 1, "ranges": [[2, 5], [5, 6]]},
               {"axis": 2, "side": 1, "ranges": [[4, 7], [5, 6]]}]}}
    code, _, err = run(capsys, ["solve", "--config", write_cfg(tmp_path, cfg)])
    assert code == 2 and "excitation" in err


def test_model_excitation_mismatch():
    with pytest.raises(ConfigError):
        parse_config(json.dumps(t1_config(excitation={"test": "T3"})))
    with pytest.raises(ConfigError):
        parse_config(json.dumps({"model": "cem", "mesh": {"dim": 3, "n_e": 6},
                                 "excitation": {"test": "cosine", "n": 1}}))


def test_missing_config_file(capsys):
    code, _, err = run(capsys, ["solve", "--config", "/nonexistent/cfg.json"])
    assert code == 2 and "cannot read" in err


SWEEP = {"sizes": [1, 3], "k": [0.1, 10.0], "volume_cap": 0.1}


def test_sweep_round_trip_and_determinism(tmp_path, capsys):
    cfg = t1_config(n_e=10, sweep=SWEEP,
                    output={"dat": str(tmp_path / "s.dat"), "meta": str(tmp_path / "s.json")})
    path = write_cfg(tmp_path, cfg)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    code, _, err = run(capsys, ["sweep", "--config", path, "--out", str(a), "--seed", "3"])
    assert code == 0 and "solves" in err
    assert run(capsys, ["sweep", "--config", path, "--out", str(b), "--seed", "3",
                        "--quiet", "--workers", "1"])[0] == 0
    assert a.read_bytes() == b.read_bytes()
    recs = read_csv(a)
    # blocks of side 1, 2, 3 in the 8 x 8 interior
    assert len(recs) == 2 * (64 + 49 + 36)
    assert all(r.seed == 3 for r in recs)
    assert records_to_csv(recs) == a.read_text()
    dat = (tmp_path / "s.dat").read_text()
    assert "# points k=10" in dat and "# line uniform upper" in dat
    meta = json.loads((tmp_path / "s.json").read_text())
    assert meta["sizes"]["2"] == {"mode": "blocks", "sets": 49}


def test_sweep_empty_plan(tmp_path, capsys):
    cfg = t1_config(n_e=6, sweep={"sizes": [5, 6]})
    out = tmp_path / "e.csv"
    code, _, _ = run(capsys, ["sweep", "--config", write_cfg(tmp_path, cfg), "--out", str(out)])
    assert code == 0
    assert out.read_text().splitlines() == [",".join(COLUMNS)]


def test_sweep_needs_output(tmp_path, capsys):
    cfg = t1_config(sweep=SWEEP)
    code, _, err = run(capsys, ["sweep", "--config", write_cfg(tmp_path, cfg)])
    assert code == 2 and "output" in err


def test_sweep_solver_failure_exit_code(tmp_path, capsys, monkeypatch):
    def boom(self, inc, seed=0):
        raise SolverError("residual 1e-3 above gate", 1e-3)

    monkeypatch.setattr("eitsize.experiments.ForwardModel.run_pair", boom)
    cfg = t1_config(sweep=SWEEP)
    code, _, err = run(capsys, ["sweep", "--config", write_cfg(tmp_path, cfg), "--out",
                                str(tmp_path / "x.csv"), "--quiet"])
    assert code == 3 and "solver error" in err


def test_solve_failure_exit_code(tmp_path, capsys, monkeypatch):
    def boom(self, inc, seed=0):
        raise SolverError("factorization failed")

    monkeypatch.setattr("eitsize.cli.ForwardModel.run_pair", boom)
    cfg = t1_config(inclusion={"k": 10.0, "elements": [27]})
    assert run(capsys, ["solve", "--config", write_cfg(tmp_path, cfg)])[0] == 3


def test_lines_uniform_and_cem(capsys):
    code, out, _ = run(capsys, ["lines", "--k", "10", "0.1", "--json"])
    rows = json.loads(out)
    assert code == 0
    assert rows[0]["lower_coef"] == pytest.approx(1 / 9, rel=1e-15)
    assert rows[0]["upper_coef"] == pytest.approx(10 / 9, rel=1e-15)
    code, out, _ = run(capsys, ["lines", "--k", "10", "--scenario", "cem", "--zeta", "0.2",
                                "--json"])
    row = json.loads(out)[0]
    assert row["lower_coef"] == pytest.approx(1.4 / 9, rel=1e-14)
    assert row["upper_coef"] == pytest.approx(14 / 9, rel=1e-14)


def test_lines_cosine_matches_bounds(capsys):
    code, out, _ = run(capsys, ["lines", "--k", "10", "--scenario", "cosine", "--n", "2",
                                "--json"])
    row = json.loads(out)[0]
    line = theoretical_line_cosine(10, 2)
    assert (row["lower_coef"], row["upper_coef"]) == (line.lower_coef, line.upper_coef)


def test_lines_text_and_errors(capsys):
    code, out, _ = run(capsys, ["lines", "--k", "2"])
    assert code == 0 and format_float(1.0) in out
    assert run(capsys, ["lines", "--k", "1"])[0] == 2
    assert run(capsys, ["lines", "--k", "2", "--scenario", "cem", "--zeta", "0"])[0] == 2
    assert run(capsys, ["lines", "--k", "2", "--scenario", "cosine", "--n", "3"])[0] == 2


def _rec(k, gap, v, status="ok"):
    return SolveRecord("T1", "neumann", 2, 8, k, 1, 1, 1, v, 1.0, 1.0 - gap, gap, 0, status)


def test_report_single_record(tmp_path, capsys):
    csv = tmp_path / "one.csv"
    csv.write_text(records_to_csv([_rec(10.0, 0.2, 0.05)]))
    code, out, _ = run(capsys, ["report", str(csv)])
    summary = json.loads(out)
    assert code == 0
    # both lines pass through the only point
    assert summary["lower_coef"] * 0.2 == pytest.approx(0.05)
    assert summary["upper_coef"] * 0.2 == pytest.approx(0.05)
    assert summary["powerlaw_exponent"] is None


def test_report_mixed_k(tmp_path, capsys):
    csv = tmp_path / "mixed.csv"
    csv.write_text(records_to_csv([_rec(10.0, 0.2, 0.05), _rec(0.1, 0.3, 0.05)]))
    code, _, err = run(capsys, ["report", str(csv)])
    assert code == 2 and "--k" in err
    code, out, _ = run(capsys, ["report", str(csv), "--k", "0.1"])
    assert code == 0 and json.loads(out)["k"] == 0.1


def test_report_skips_failed_rows(tmp_path, capsys):
    csv = tmp_path / "f.csv"
    csv.write_text(records_to_csv([_rec(10.0, 0.2, 0.05), _rec(10.0, math.nan, 0.05, "failed: x")]))
    code, out, _ = run(capsys, ["report", str(csv)])
    assert code == 0 and json.loads(out)["n_samples"] == 1


def test_report_bad_csv(tmp_path, capsys):
    csv = tmp_path / "bad.csv"
    csv.write_text("a,b\n1,2\n")
    code, _, err = run(capsys, ["report", str(csv)])
    assert code == 2 and "missing columns" in err


def test_freq(capsys):
    code, out, _ = run(capsys, ["freq", "--n", "1", "--n-e", "6"])
    assert code == 0 and json.loads(out)["F"] > 1
    assert run(capsys, ["freq", "--n", "-1"])[0] == 2


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([0.1, 10.0]), st.floats(0, 1, allow_subnormal=True),
                          st.floats(1e-6, 0.06)), max_size=10))
def test_csv_round_trip_exact(rows):
    recs = [_rec(k, g, v) for k, g, v in rows]
    back = parse_csv(records_to_csv(recs))
    assert len(back) == len(recs)
    for a, b in zip(recs, back):
        assert (a.k, a.gap, a.volume_fraction, a.W) == (b.k, b.gap, b.volume_fraction, b.W)


def test_dat_blocks():
    text = records_to_dat([_rec(10.0, 0.5, 0.05)], [("uniform", theoretical_line_cosine(10, 1))])
    blocks = text.strip("\n").split("\n\n\n")
    assert len(blocks) == 3
    assert blocks[0].splitlines()[2] == "0.5 0.050000000000000003"
    assert records_to_dat([]) == ""
