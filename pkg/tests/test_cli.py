import csv
import io
import json
import math
import subprocess
import sys

import pytest

from qbcsim.cli import main, parse_angle
from qbcsim.protocol import Transcript


def test_honest_run_exits_zero(tmp_path):
    out = tmp_path / "t.jsonl"
    assert main(["run", "--n", "4", "--seed", "7", "--alice", "honest", "--bob", "honest", "--output", str(out)]) == 0
    assert Transcript.from_jsonl(out.read_text()).phases()[-1] == "Verified"


def test_flipped_declaration_exits_two(capsys):
    assert main(["run", "--n", "4", "--seed", "7", "--alice", "declare-flipped", "--bob", "honest"]) == 2


def test_detected_cheat_exits_two(capsys):
    code = main(["run", "--seed", "1", "--pair-checks", "4", "--bob", "skip-ancilla"])
    assert code == 2
    assert '"CheatDetected"' in capsys.readouterr().out


def test_same_seed_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["run", "--seed", "11", "--alice", "uhlmann", "--bob", "helstrom", "--modulation", "pi/4"]
    main(args + ["--output", str(a)])
    main(args + ["--output", str(b)])
    assert a.read_bytes() == b.read_bytes()


@pytest.mark.parametrize("argv", [
    ["run", "--alice", "honest"],                       # no seed
    ["run", "--seed", "1", "--alice", "nobody"],        # unknown strategy
    ["run", "--seed", "1", "--frobnicate"],             # unknown flag
    ["run", "--seed", "1", "--M", "5"],                 # invalid value
    ["run", "--seed", "1", "--alice-param", "colour=red"],
    ["bogus"],
])
def test_usage_errors_exit_one(argv, capsys):
    assert main(argv) == 1


def test_invalid_flag_is_named(capsys):
    main(["run", "--seed", "1", "--alice", "nobody"])
    assert "--alice" in capsys.readouterr().err


def test_resource_cap_reports_dimension(capsys):
    assert main(["sweep", "--seed", "0", "--n-values", "9"]) == 1
    assert "dimension" in capsys.readouterr().err


def test_sweep_csv(capsys):
    assert main(["sweep", "--seed", "0", "--n-values", "2", "4"]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert [r["n"] for r in rows] == ["2", "4"]
    assert math.isclose(float(rows[0]["trace_distance"]), math.sqrt(2), abs_tol=1e-9)


def test_bounds_jsonl(capsys):
    assert main(["bounds", "--seed", "0", "--n-values", "2", "3", "--format", "jsonl"]) == 0
    rows = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
    assert all(r["lower_ok"] and r["upper_ok"] and r["nondecreasing"] for r in rows)


def test_check_demo(capsys):
    assert main(["check-demo", "--seed", "0"]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert [(r["mode"], r["residual_dimension"]) for r in rows] == [("cyclic", "1"), ("permutation", "2")]


def test_attack_deterministic_across_workers(capsys):
    base = ["attack", "--seed", "3", "--bob", "helstrom", "--trials", "40", "--no-bob-check"]
    main(base)
    one = capsys.readouterr().out
    main(base + ["--workers", "2"])
    assert capsys.readouterr().out == one


def test_config_file_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 5, "n": 3, "no_bob_check": True, "alice": "declare-flipped"}))
    assert main(["run", "--config", str(cfg)]) == 2
    assert main(["run", "--config", str(cfg), "--alice", "honest"]) == 0


def test_config_file_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 5, "colour": "red"}))
    assert main(["run", "--config", str(cfg)]) == 1


def test_help_lists_flags():
    out = subprocess.run([sys.executable, "-m", "qbcsim", "run", "--help"], capture_output=True, text=True).stdout
    for flag in ("--n", "--M", "--lam", "--seed", "--alice", "--bob", "--output", "--format", "--config"):
        assert flag in out


@pytest.mark.parametrize("text,value", [("pi/2", math.pi / 2), ("-pi/4", -math.pi / 4),
                                        ("3*pi/8", 3 * math.pi / 8), ("0.5", 0.5), ("pi", math.pi)])
def test_parse_angle(text, value):
    assert math.isclose(parse_angle(text), value)
