import csv
import io
import json
import math

import numpy as np

from qmel.cli import AUDITS, _to_json, csv_text, fmt, main


def run(argv, capsys):
    rc = main(argv)
    out, err = capsys.readouterr()
    return rc, out, err


def test_map_info_tp(capsys):
    rc, out, _ = run(["map-info", "--slopes", "2,4,4"], capsys)
    d = json.loads(out)
    assert rc == 0 and d["route"] == "tensorial" and d["p"] == 2 and d["exponents"] == [1, 2, 2]
    assert d["codes"] == ["0", "10", "11"]


def test_map_info_composition(capsys):
    rc, out, _ = run(["map-info", "--slopes", "6,6,6,4,4"], capsys)
    d = json.loads(out)
    assert rc == 0 and d["route"] == "composition" and d["p"] == 2 and d["lambda_bar"] == [3, 2]


def test_map_info_errors(capsys):
    rc, _, err = run(["map-info", "--slopes", "3,3"], capsys)
    assert rc == 2 and "SlopeSumError" in err
    rc, out, _ = run(["map-info", "--slopes", ",".join(["6", "10", "15"] * 3)], capsys)
    assert rc == 0 and json.loads(out)["route"] == "none"


def test_quantize_reports(capsys):
    rc, out, _ = run(["quantize", "--k", "5"], capsys)
    d = json.loads(out)
    assert rc == 0 and d["passed"] and d["N"] == 32
    # the composition route sizes the grid as N0^k with N0 = 12
    for k, N in ((1, 12), (2, 144)):
        rc, out, _ = run(["quantize", "--slopes", "6,6,6,4,4", "--k", str(k)], capsys)
        d = json.loads(out)
        assert rc == 0 and d["scheme"] == "general" and d["N"] == N and d["passed"]


def test_spectrum_csv(capsys):
    rc, out, _ = run(["spectrum", "--k", "5"], capsys)
    rows = list(csv.DictReader(io.StringIO(out)))
    assert rc == 0 and len(rows) == 32
    phases = [float(r["phase"]) for r in rows]
    assert phases == sorted(phases)
    assert max(float(r["residual"]) for r in rows) < 1e-12


def test_measure_table_sums_to_one(capsys):
    rc, out, _ = run(["measure", "--k", "6", "--state", "example3", "--n", "2"], capsys)
    rows = list(csv.DictReader(io.StringIO(out)))
    assert rc == 0 and len(rows) == 9
    assert abs(sum(float(r["weight"]) for r in rows) - 1) < 1e-12


def test_entropy_example1_equals_log2(capsys):
    rc, out, _ = run(["entropy", "--k", "8", "--state", "example1", "--n", "4"], capsys)
    rows = list(csv.DictReader(io.StringIO(out)))
    assert rc == 0
    for r in rows:
        assert abs(float(r["h_n_over_n"]) - math.log(2)) < 1e-12
        assert abs(float(r["bound_thm3"]) - math.log(2)) < 1e-12


def test_entropy_lebesgue_bounds(capsys):
    rc, out, _ = run(["entropy", "--k", "8", "--state", "uniform", "--n", "2"], capsys)
    r = list(csv.DictReader(io.StringIO(out)))[0]
    assert abs(float(r["bound_thm2"]) - 0.5 * math.log(2)) < 1e-12
    assert abs(float(r["bound_thm3"]) - 0.75 * math.log(2)) < 1e-12


def test_entropy_empty_state_file(tmp_path, capsys):
    p = tmp_path / "psi.csv"
    p.write_text("\n")
    rc, _, err = run(["entropy", "--k", "4", "--state", str(p)], capsys)
    assert rc == 2 and "empty" in err


def test_state_vector_file_roundtrip(tmp_path, capsys):
    rng = np.random.default_rng(2)
    v = rng.normal(size=16) + 1j * rng.normal(size=16)
    p = tmp_path / "psi.npy"
    np.save(p, v / np.linalg.norm(v))
    rc, out, _ = run(["measure", "--k", "4", "--state", str(p), "--n", "1"], capsys)
    rows = list(csv.DictReader(io.StringIO(out)))
    assert rc == 0 and abs(sum(float(r["weight"]) for r in rows) - 1) < 1e-12


def test_audit_empty_and_unknown(capsys):
    assert run(["audit"], capsys)[0] == 2
    assert run(["audit", "bogus"], capsys)[0] == 2


def test_audit_eup_k8(capsys):
    rc, out, _ = run(["audit", "--k", "8", "--n", "2", "eup"], capsys)
    d = json.loads(out)["eup"]
    assert rc == 0 and d["min_margin"] >= 0
    for rep in d["reports"]:
        assert {"n", "lhs", "rhs", "margin", "pairs_max"} <= set(rep)
        assert {"eps", "eps_prime", "norm"} <= set(rep["pairs_max"])


def test_audit_exact_egorov(capsys):
    rc, out, _ = run(["audit", "--k", "8", "exact-egorov"], capsys)
    d = json.loads(out)["exact-egorov"]
    assert rc == 0 and d["max_residual"] < 1e-12 and d["checked"] > 0


def test_audit_all_small(capsys):
    rc, out, err = run(["audit", "--k", "6", "--n", "2"] + [a for a in AUDITS if a != "abramov"], capsys)
    d = json.loads(out)
    assert rc == 0, err
    assert all(d[a]["passed"] for a in d)


def test_audit_abramov_default_n(capsys):
    rc, out, _ = run(["audit", "abramov"], capsys)
    d = json.loads(out)["abramov"]["measures"]
    assert rc == 0
    assert d["lebesgue"]["final_gap"] < 1e-12 and d["example3"]["final_gap"] < 5e-2
    assert d["example3"]["n"][-1] == 12


def test_audit_failure_exits_nonzero(capsys):
    # at n = 2 the Abramov gap of the example measure has not yet fallen below 5e-2
    rc, out, err = run(["audit", "--n", "2", "abramov"], capsys)
    assert rc == 2 and "abramov" in err


def test_tower_command(capsys):
    rc, out, _ = run(["tower", "--k", "8"], capsys)
    d = json.loads(out)
    assert rc == 0
    assert {"k", "h_seq", "prop13_bound", "abramov_gap"} <= set(d)
    assert d["levels"] == 2 and d["first_return"]


def test_fig4_outputs(tmp_path, capsys):
    rc = main(["fig4", "--z-steps", "61", "--n", "5", "--out", str(tmp_path)])
    capsys.readouterr()
    assert rc == 0
    rows = list(csv.DictReader(io.StringIO((tmp_path / "fig4.csv").read_text())))
    assert len(rows) == 61 and float(rows[0]["re_z"]) == -3 and float(rows[-1]["re_z"]) == 3
    assert all(float(r["margin"]) >= -1e-9 for r in rows)
    svg = (tmp_path / "fig4.svg").read_text()
    assert svg.startswith("<svg") and svg.count("<polyline") == 2
    s = json.loads((tmp_path / "fig4.json").read_text())
    assert s["passed"] and s["points"] == 61 and s["sqrt2_gap"] < 1e-9


def test_fig4_default_grid(capsys):
    rc, out, _ = run(["fig4", "--n", "4"], capsys)
    assert rc == 0 and len(out.strip().splitlines()) == 1 + 241


def test_fig4_imag(capsys):
    rc, out, _ = run(["fig4", "--z-steps", "21", "--n", "4", "--z-imag", "0.5"], capsys)
    assert rc == 0 and len(out.strip().splitlines()) == 22


def test_fig4_thread_determinism(tmp_path, monkeypatch, capsys):
    outs = []
    for threads in ("1", "3"):
        d = tmp_path / threads
        monkeypatch.setenv("QMEL_THREADS", threads)
        assert main(["fig4", "--z-steps", "41", "--n", "5", "--out", str(d)]) == 0
        outs.append(((d / "fig4.csv").read_bytes(), (d / "fig4.svg").read_bytes()))
    capsys.readouterr()
    assert outs[0] == outs[1]


def test_out_file_written(tmp_path, capsys):
    p = tmp_path / "sub" / "info.json"
    assert main(["map-info", "--out", str(p)]) == 0
    capsys.readouterr()
    assert json.loads(p.read_text())["route"] == "tensorial"


def test_serialization_17_digits():
    assert fmt(0.1) == "0.10000000000000001"
    assert _to_json({"a": [0.1, 1, True, None]}) == '{"a": [0.10000000000000001, 1, true, null]}'
    assert csv_text(["x", "y"], [(1, 0.5)]) == "x,y\n1,0.5\n"


def test_nonpositive_k(capsys):
    assert run(["spectrum", "--k", "0"], capsys)[0] == 2
