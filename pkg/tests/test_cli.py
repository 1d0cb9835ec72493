from __future__ import annotations

import json
import numpy as np
import pytest

from symvortex import fieldio
from symvortex.cli import main
from symvortex.mobius import octahedron_measure

BASE = """schema_version: 1
seed: 3
geometry: {{Ns: 32, Nt: 32}}
model: {{W: [[1]], tau: [{tau}]}}
solve: {{d: [1]}}
"""


def _cfg(tmp_path, tau="4*pi", extra="", name="c.yaml"):
    p = tmp_path / name
    p.write_text(BASE.format(tau=tau) + extra)
    return str(p)


@pytest.fixture(scope="module")
def solved_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("solve")
    out = tmp / "out"
    assert main(["solve", "--config", _cfg(tmp), "--out", str(out)]) == 0
    return tmp, out


def test_solve_writes_artifacts(solved_dir):
    _, out = solved_dir
    assert {"state.snap", "state.csv", "energy.json", "record.jsonl", "run.log"} <= {p.name for p in out.iterdir()}
    energy = json.loads((out / "energy.json").read_text())
    assert energy["identity_gap"] <= 1e-10
    rec = json.loads((out / "record.jsonl").read_text().splitlines()[0])
    assert rec["converged"] and rec["residual"] <= 1e-8


def test_below_threshold_exits_2(tmp_path, capsys):
    code = main(["solve", "--config", _cfg(tmp_path, "pi", "solve: {d: [1], options: {max_restarts: 0}}\n"),
                 "--out", str(tmp_path / "o")])
    assert code == 2
    assert "BelowThreshold" in capsys.readouterr().out


def test_config_errors_exit_1_and_write_nothing(tmp_path):
    bad = _cfg(tmp_path, extra="colour: red\n")
    assert main(["solve", "--config", bad, "--out", str(tmp_path / "never")]) == 1
    assert not (tmp_path / "never").exists()
    assert main(["solve", "--threads", "0"]) == 1
    assert main(["transmogrify"]) == 1


def test_seed_is_required_for_random_starts(tmp_path):
    p = tmp_path / "noseed.yaml"
    p.write_text("schema_version: 1\ngeometry: {Ns: 8, Nt: 8}\n")
    assert main(["solve", "--config", str(p), "--out", str(tmp_path / "o")]) == 1


def test_check_verdicts(solved_dir, tmp_path):
    tmp, out = solved_dir
    snap = str(out / "state.snap")
    assert main(["check", "--config", _cfg(tmp_path), "--snapshot", snap, "--out", str(tmp_path / "a")]) == 0
    verdict = json.loads((tmp_path / "a" / "check.json").read_text())
    assert verdict["pass"] and verdict["zero_count"] == 1

    state = fieldio.read_snapshot(snap)
    bent = state.A.a_s.copy()
    bent[3, 4, 0] += 0.3
    broken = tmp_path / "broken.snap"
    fieldio.write_snapshot(broken, state.replace(A=state.A.__class__(bent, state.A.a_t, state.A.degree)))
    assert main(["check", "--config", _cfg(tmp_path), "--snapshot", str(broken), "--out", str(tmp_path / "b")]) == 2

    wrong = tmp_path / "wrong.yaml"
    wrong.write_text("schema_version: 1\nmodel: {W: [[1], [1]], tau: [1.0]}\n")
    assert main(["check", "--config", str(wrong), "--snapshot", snap, "--out", str(tmp_path / "c")]) == 1

    junk = tmp_path / "junk.snap"
    junk.write_bytes(b"garbage")
    assert main(["check", "--config", _cfg(tmp_path), "--snapshot", str(junk), "--out", str(tmp_path / "d")]) == 1


def test_scan_tau_lines(tmp_path, capsys):
    cfg = _cfg(tmp_path, extra="scan_tau: {grid: [pi, 2*pi + 0.5, 4*pi]}\n")
    code = main(["scan-tau", "--config", cfg, "--out", str(tmp_path / "o")])
    lines = capsys.readouterr().out.strip().splitlines()
    assert code == 0 and len(lines) == 3
    recs = [json.loads(l) for l in lines]
    assert [r["converged"] for r in recs] == [False, True, True]
    assert len((tmp_path / "o" / "scan_tau.jsonl").read_text().splitlines()) == 3


def test_balance_octahedron(tmp_path):
    meas = octahedron_measure()
    csv = tmp_path / "oct.csv"
    csv.write_text("x,y,z,w\n" + "".join(f"{x},{y},{z},1\n" for x, y, z in meas.points))
    cfg = tmp_path / "b.yaml"
    cfg.write_text(f"schema_version: 1\nbalance: {{measure: {csv}}}\n")
    assert main(["balance", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    res = json.loads((tmp_path / "o" / "balance.json").read_text())
    assert np.linalg.norm(res["eta"]) <= 1e-10


def test_balance_two_atoms_exits_2(tmp_path):
    csv = tmp_path / "two.csv"
    csv.write_text("0,0,1,2\n0,0,-1,1\n")
    cfg = tmp_path / "b.yaml"
    cfg.write_text(f"schema_version: 1\nbalance: {{measure: {csv}}}\n")
    assert main(["balance", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_index_prints_value(tmp_path, capsys):
    cfg = tmp_path / "i.yaml"
    cfg.write_text("schema_version: 1\nindex: {g: 1, n: 1, dimG: 1, c1B: 2}\n")
    assert main(["index", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert capsys.readouterr().out.strip() == "4"
    cfg.write_text("schema_version: 1\nindex: {g: 1, n: 1}\n")
    assert main(["index", "--config", str(cfg), "--out", str(tmp_path / "o2")]) == 1


def test_flow_reaches_critical_point(tmp_path):
    from symvortex.eqflow import quadratic_stable_start

    x0, eta0 = quadratic_stable_start(2.0, 0.7, 0.5, 0.01)
    cfg = tmp_path / "f.yaml"
    cfg.write_text("schema_version: 1\nmodel: {W: [[1]], tau: [2.0]}\n"
                   f"flow: {{hamiltonian: 'a * r0', params: {{a: 0.35}}, x0: [[{float(x0.real)!r}, {float(x0.imag)!r}]],"
                   f" eta0: [{float(eta0)!r}], dt: 0.01, steps: 6000, stop_tol: 1.0e-7}}\n")
    assert main(["flow", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    summary = json.loads((tmp_path / "o" / "flow.json").read_text())
    assert summary["critical"] and summary["max_L_increase"] <= 1e-9
    assert summary["final_eta"][0] == pytest.approx(0.7, abs=1e-6)


def test_reruns_are_byte_identical(solved_dir, tmp_path):
    tmp, out = solved_dir
    again = tmp_path / "again"
    assert main(["solve", "--config", _cfg(tmp), "--out", str(again)]) == 0
    for name in ("state.snap", "state.csv", "energy.json", "record.jsonl"):
        assert (out / name).read_bytes() == (again / name).read_bytes()
