import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from spinqip import cli, gates
from spinqip.dynamics import controls_from_csv, controls_to_csv
from spinqip.grape import sweep_from_csv, sweep_to_csv
from spinqip.protocols import trace_from_csv
from spinqip.pulses import load_sequence, sequence_from_dict, sequence_to_dict

ROOT = Path(__file__).resolve().parents[1]
SYSTEMS = ROOT / "systems"


def _run(argv, capsys=None):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr() if capsys is not None else None
    return code, out


def _write(path, text):
    path.write_text(text)
    return path


def test_simulate_minus_x_pulse_tips_z_onto_plus_y(tmp_path):
    # 25 kHz for 10 us about -x: pi/2, so |0> ends up along +y
    pulse = _write(tmp_path / "p.csv", "t_s,channel,amplitude_hz,phase_rad\n0,H@0.0,25000.0,3.141592653589793\n")
    code, _ = _run(
        ["simulate", "--system", SYSTEMS / "single_h.json", "--pulse", pulse, "--dt", "1e-5", "--out", tmp_path / "o"]
    )
    assert code == 0
    row = (tmp_path / "o" / "final_state.csv").read_text().splitlines()[1].split(",")
    x, y, z = map(float, row[1:])
    assert (x, y, z) == pytest.approx((0.0, 1.0, 0.0), abs=1e-12)


def test_simulate_single_row_needs_dt(tmp_path, capsys):
    pulse = _write(tmp_path / "p.csv", "t_s,channel,amplitude_hz,phase_rad\n0,H@0.0,25000.0,0\n")
    code, out = _run(["simulate", "--system", SYSTEMS / "single_h.json", "--pulse", pulse, "--out", tmp_path], capsys)
    assert code == cli.EXIT_INVALID
    assert "Traceback" not in out.err


def test_compile_cnot_reports_certificate_and_correction(tmp_path):
    out = tmp_path / "cnot"
    code, _ = _run(
        ["compile-cnot", "--system", SYSTEMS / "hc_pair.json", "--pulse-duration", "1e-5", "--correct", "--out", out]
    )
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["certificate_fidelity"] >= 1 - 1e-9
    assert report["corrected_fidelity"] >= 0.999 > report["simulated_fidelity"]
    seq = load_sequence(out / "sequence.json")
    assert sequence_to_dict(sequence_from_dict(sequence_to_dict(seq))) == sequence_to_dict(seq)
    assert "H" in (out / "timing.txt").read_text()


def test_refocus_command(tmp_path):
    code, _ = _run(["refocus", "--system", SYSTEMS / "malonic_acid.json", "--active", "0", "1", "--tau", "0.004", "--out", tmp_path])
    assert code == 0
    assert json.loads((tmp_path / "report.json").read_text())["fidelity_vs_active_coupling"] >= 1 - 1e-9


def test_hbac_command_ratio_and_trace(tmp_path):
    code, _ = _run(["hbac", "--eps", "1e-5", "--ideal", "--out", tmp_path])
    assert code == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["ideal_ratio"] == pytest.approx(1.5, abs=1e-9)
    rows = trace_from_csv((tmp_path / "trace.csv").read_text())
    assert rows[-1][:3] == (1, 6, 2)


def test_hbac_with_loss_writes_both_traces(tmp_path):
    code, _ = _run(["hbac", "--loss-rate", "0.01", "--out", tmp_path])
    assert code == 0
    assert (tmp_path / "trace_ideal.csv").exists()
    assert json.loads((tmp_path / "summary.json").read_text())["compiled_ratio"] < 1.5


def _grape_args(out, seed=3):
    return [
        "grape", "--system", SYSTEMS / "strong_pair.json", "--goal", "cnot:0,1", "--steps", "40", "--dt", "2e-5",
        "--max-iterations", "10", "--seed", seed, "--out", out, "--sweep-rf", "0.98,1.0,1.02",
    ]


def test_grape_reruns_are_hash_identical(tmp_path):
    assert _run(_grape_args(tmp_path / "a"))[0] == 0
    assert _run(_grape_args(tmp_path / "b"))[0] == 0
    for name in ("manifest.json", "controls.csv", "run.json", "sweep.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert {a["path"] for a in manifest["artifacts"]} == {"controls.csv", "run.json", "sweep.csv"}
    assert (tmp_path / "a" / "timing.json").exists()
    assert _run(_grape_args(tmp_path / "c", seed=4))[0] == 0
    assert (tmp_path / "c" / "controls.csv").read_bytes() != (tmp_path / "a" / "controls.csv").read_bytes()


def test_grape_artifacts_round_trip_through_parsers(tmp_path):
    _run(_grape_args(tmp_path))
    text = (tmp_path / "controls.csv").read_text()
    assert controls_to_csv(controls_from_csv(text)) == text
    sweep = (tmp_path / "sweep.csv").read_text()
    assert sweep_to_csv(sweep_from_csv(sweep)) == sweep
    run = json.loads((tmp_path / "run.json").read_text())
    assert run["seed"] == 3 and len(run["fitness_trace"]) >= 1


def test_sweep_command_parallel_matches_serial(tmp_path):
    pulse = _write(
        tmp_path / "p.csv",
        "t_s,channel,amplitude_hz,phase_rad\n0,H@0.0,12500.0,0\n1e-05,H@0.0,12500.0,0\n",
    )
    base = ["sweep", "--system", SYSTEMS / "single_h.json", "--pulse", pulse, "--goal", "x90:0",
            "--rf-scales", "0.97,1.0,1.03", "--offsets-hz=-50,0,50"]
    assert _run(base + ["--out", tmp_path / "s1"])[0] == 0
    assert _run(base + ["--jobs", "3", "--out", tmp_path / "s3"])[0] == 0
    serial = (tmp_path / "s1" / "sweep.csv").read_text()
    assert serial == (tmp_path / "s3" / "sweep.csv").read_text()
    rows = sweep_from_csv(serial)
    assert [r[:2] for r in rows] == [(r, o) for r in (0.97, 1.0, 1.03) for o in (-50.0, 0.0, 50.0)]
    assert rows[4][2] == pytest.approx(1.0)


def test_controllability_command(tmp_path):
    code, _ = _run(["controllability", "--system", SYSTEMS / "strong_pair.json", "--x-only", "--out", tmp_path])
    assert code == 0
    report = json.loads((tmp_path / "controllability.json").read_text())
    assert report["full_dimension"] == 15


def test_hyperfine_refuses_without_anisotropy(tmp_path, capsys):
    code, out = _run(["hyperfine", "--ax-hz", "0", "--goal", "identity", "--out", tmp_path], capsys)
    assert code == cli.EXIT_INVALID
    assert "Lie rank" in out.err


def test_validate_good_file(capsys):
    code, out = _run(["validate", SYSTEMS / "malonic_acid.json"], capsys)
    assert code == 0
    assert json.loads(out.out) == []


def test_validate_warns_on_strong_coupling(tmp_path, capsys):
    path = _write(
        tmp_path / "s.json",
        json.dumps({"spins": [{"species": "H", "offset_hz": 0}, {"species": "H", "offset_hz": 30}], "j_hz": [[0, 30], [30, 0]]}),
    )
    code, out = _run(["validate", path], capsys)
    diags = json.loads(out.out)
    assert code == 0
    assert diags == [{"location": "j_hz[0][1]", "severity": "warning", "message": cli.WEAK_COUPLING_MESSAGE}]


def test_validate_asymmetric_table_names_both_cells(tmp_path, capsys):
    path = _write(
        tmp_path / "s.json",
        json.dumps({"spins": [{"species": "H"}, {"species": "H", "offset_hz": 1e3}], "j_hz": [[0, 5], [6, 0]]}),
    )
    code, out = _run(["validate", path], capsys)
    assert code == cli.EXIT_INVALID
    message = json.loads(out.out)[0]["message"]
    assert "[0][1]" in message and "[1][0]" in message


def test_validate_bad_json(tmp_path, capsys):
    code, out = _run(["validate", _write(tmp_path / "s.json", "{nope")], capsys)
    assert code == cli.EXIT_INVALID
    assert json.loads(out.out)[0]["severity"] == "error"


def test_exit_codes(tmp_path, capsys):
    assert _run(["no-such-command"], capsys)[0] == cli.EXIT_PARSE
    assert _run(["refocus", "--system", SYSTEMS / "malonic_acid.json"], capsys)[0] == cli.EXIT_PARSE
    code, out = _run(["compile-cnot", "--system", tmp_path / "missing.json", "--out", tmp_path], capsys)
    assert code == cli.EXIT_INVALID
    code, out = _run(["compile-cnot", "--system", SYSTEMS / "strong_pair.json", "--out", tmp_path], capsys)
    assert code == cli.EXIT_INVALID and "coupl" in out.err
    assert _run(["grape", "--goal", "cnot:0,1", "--out", tmp_path], capsys)[0] == cli.EXIT_INVALID
    assert "Traceback" not in capsys.readouterr().err


def test_internal_errors_map_to_exit_one(monkeypatch, tmp_path, capsys):
    def boom(*_):
        raise RuntimeError("kaput")

    monkeypatch.setitem(cli.HANDLERS, "hbac", boom)
    code, out = _run(["hbac", "--out", tmp_path], capsys)
    assert code == cli.EXIT_INTERNAL
    assert "kaput" in out.err and "Traceback" not in out.err


def test_run_job_spec(tmp_path):
    job = {
        "command": "compile-cnot",
        "system_path": str(SYSTEMS / "malonic_acid.json"),
        "parameters": {"control": 0, "target": 2},
        "output_dir": str(tmp_path / "job"),
        "seed": 0,
    }
    spec_path = _write(tmp_path / "job.json", json.dumps(job))
    assert _run(["run", spec_path])[0] == 0
    manifest = json.loads((tmp_path / "job" / "manifest.json").read_text())
    assert manifest["command"] == "compile-cnot"
    assert manifest["system_sha256"] == cli.sha256((SYSTEMS / "malonic_acid.json").read_bytes())
    for art in manifest["artifacts"]:
        assert cli.sha256((tmp_path / "job" / art["path"]).read_bytes()) == art["sha256"]


def test_run_rejects_unknown_fields(tmp_path):
    spec_path = _write(tmp_path / "job.json", json.dumps({"command": "hbac", "colour": "red"}))
    assert _run(["run", spec_path])[0] == cli.EXIT_INVALID
    spec_path = _write(tmp_path / "job2.json", json.dumps({"command": "teleport"}))
    assert _run(["run", spec_path])[0] == cli.EXIT_INVALID


@pytest.mark.parametrize(
    "text, expected",
    [
        ("identity", np.eye(4)),
        ("cnot:0,1", gates.cnot(2, 0, 1)),
        ("swap:0,1", gates.swap(2)),
        ("cz:0,1", gates.controlled_z()),
        ("x90:1", gates.local_rotation(2, [1], math.pi / 2, 0.0)),
        ("-y180:0,1", gates.local_rotation(2, [0, 1], math.pi, -math.pi / 2)),
    ],
)
def test_parse_goal(text, expected):
    np.testing.assert_allclose(cli.parse_goal(text, 2), expected, atol=1e-12)


def test_parse_goal_rejects_nonsense():
    with pytest.raises(ValueError):
        cli.parse_goal("teleport", 2)
    with pytest.raises(ValueError):
        cli.parse_goal("cnot:0,5", 2)


def test_module_entry_point_runs(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "spinqip", "hbac", "--ideal", "--out", str(tmp_path)],
        capture_output=True,
        text=True,
        check=False,
    )
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["status"] == "ok"
