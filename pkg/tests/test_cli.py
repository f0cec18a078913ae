import csv
import io
import json

import pytest

from foelner_lab import __version__, cli


def run(capsys, *argv):
    code = cli.run(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def rows(text):
    lines = [l for l in text.splitlines() if not l.startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(lines))))


@pytest.fixture
def shift_file(tmp_path):
    p = tmp_path / "shift.json"
    p.write_text('{"type": "unilateral_shift"}')
    return str(p)


def test_sequence_interval_csv(tmp_path, shift_file, capsys):
    out = tmp_path / "out.csv"
    code, _, err = run(capsys, "sequence", "--operator", shift_file, "--scheme", "interval",
                       "--ranks", "4,16,64,256", "-o", str(out))
    assert code == 0 and "wrote" in err
    text = out.read_text()
    assert text.startswith(f"# foelner-lab {__version__}\n# config: ")
    assert '"seed":0' in text.splitlines()[1]
    got = rows(text)
    assert list(got[0]) == ["step", "rank", "hs_defect", "op_defect", "certified_bound", "scheme"]
    assert [float(r["hs_defect"]) for r in got] == [0.5, 0.25, 0.125, 0.0625]
    assert all(float(r["op_defect"]) == 1.0 for r in got)


def test_byte_identical_reruns(tmp_path, capsys):
    argv = ["probe", "--operators", '{"type": "cuntz", "n": 2}', "--ranks", "1..3",
            "--ambient-depth", "5", "--restarts", "3", "--iters", "10", "--seed", "2"]
    _, a, _ = run(capsys, *argv)
    _, b, _ = run(capsys, *argv)
    assert a == b
    got = rows(a)
    assert list(got[0]) == ["rank", "best_value", "restarts", "converged", "seed"]
    assert [int(r["rank"]) for r in got] == [1, 2, 3]
    assert all(r["seed"] == "2" for r in got)


def test_json_mirrors_csv(capsys):
    argv = ["sequence", "--operator", '{"type": "unilateral_shift"}', "--ranks", "4..5"]
    _, c, _ = run(capsys, *argv)
    _, j, _ = run(capsys, *argv, "--format", "json")
    doc = json.loads(j)
    assert doc["version"] == __version__ and doc["config"]["seed"] == 0
    assert [set(r) for r in doc["records"]] == [set(r) for r in rows(c)]
    assert [r["hs_defect"] for r in doc["records"]] == [float(r["hs_defect"]) for r in rows(c)]


def test_verify_exit_codes(capsys):
    code, out, _ = run(capsys, "verify", "--suite", "perturbation", "--trials", "50", "--seed", "7")
    assert code == 0 and rows(out)[0]["violations"] == "0"


def test_config_file_and_flag_override(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"schema_version": 1, "subcommand": "sequence",
                               "operator": {"type": "unilateral_shift"}, "ranks": [4, 9]}))
    code, out, _ = run(capsys, "sequence", "--config", str(cfg), "--ranks", "16")
    assert code == 0 and [r["rank"] for r in rows(out)] == ["16"]
    cfg.write_text(json.dumps({"schema_version": 2}))
    assert run(capsys, "sequence", "--config", str(cfg))[0] == 2
    cfg.write_text(json.dumps({"schema_version": 1, "bogus": 1}))
    assert run(capsys, "sequence", "--config", str(cfg))[0] == 2


@pytest.mark.parametrize("argv", [
    ["nope"],
    ["probe", "--operators", "{broken", "--ranks", "1"],
    ["sequence", "--operator", '{"type": "cuntz", "n": 1, "k": 1}', "--ranks", "2"],
    ["sequence", "--operator", '{"type": "unilateral_shift"}', "--ranks", "5..2"],
    ["defect", "--operator", '{"type": "unilateral_shift"}', "--projection", '{"type": "box"}'],
    ["probe", "--operators", '{"type": "unilateral_shift"}', "--ranks", "4", "--ambient", "8"],
])
def test_validation_errors_exit_2(capsys, argv):
    assert run(capsys, *argv)[0] == 2


def test_certification_failure_exits_3(monkeypatch, capsys):
    from foelner_lab import schemes
    monkeypatch.setattr(schemes, "interval_constant", lambda op: 1e-6)
    code, _, err = run(capsys, "sequence", "--operator", '{"type": "unilateral_shift"}', "--ranks", "4")
    assert code == 3 and "certification" in err


def test_verify_violation_exits_3(monkeypatch, capsys):
    from foelner_lab import verify
    monkeypatch.setattr(verify, "check_tensor_bound",
                        lambda trials, dims, seed: verify.SuiteReport("tensor", trials, 1, -1.0, seed))
    assert run(capsys, "verify", "--suite", "tensor", "--trials", "3")[0] == 3


def test_other_subcommands(capsys):
    code, out, _ = run(capsys, "defect", "--operator", '{"type": "unilateral_shift"}',
                       "--projection", '{"type": "interval", "from": 0, "to": 3}')
    assert code == 0 and {r["norm_kind"]: float(r["value"]) for r in rows(out)} == {"hs": 0.5, "trace": 0.25, "op": 1.0}
    code, out, _ = run(capsys, "sequence", "--operator", '[{"type": "unilateral_shift"}]', "--scheme", "greedy",
                       "--steps", "3")
    assert code == 0 and len(rows(out)) == 3
    code, out, _ = run(capsys, "sequence", "--operator",
                       '{"type": "tensor", "left": {"type": "unilateral_shift"}, "right": {"type": "unilateral_shift"}}',
                       "--scheme", "tensor", "--ranks", "4,8")
    assert code == 0 and float(rows(out)[0]["hs_defect"]) <= 1.0
    code, out, _ = run(capsys, "sequence", "--operator",
                       '{"type": "direct_sum", "left": {"type": "unilateral_shift"}, "right": {"type": "dense", "matrix": [[1]]}}',
                       "--scheme", "lift-left", "--ranks", "4")
    assert code == 0 and rows(out)[0]["scheme"] == "lift-left"
    code, out, _ = run(capsys, "classify", "--operators", '{"type": "identity"}', "--ambient", "32",
                       "--max-rank", "4", "--restarts", "2", "--iters", "10", "--format", "json")
    assert code == 0 and json.loads(out)["cell"] == "W0plus"
    code, out, _ = run(capsys, "verify", "--suite", "trace_hs", "--ranks", "16,1024")
    assert code == 0


def test_parse_ranks():
    assert cli.parse_ranks("1..4,8") == [1, 2, 3, 4, 8]
    assert cli.parse_ranks([3, 5]) == [3, 5]
