import json
import subprocess
import sys

import pytest

from fixlab.cli import data_path, main


def read_trace(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


def test_bundled_game(tmp_path):
    assert main(["game", "--scenario", "elementary-3-2", "--out", str(tmp_path)]) == 0
    rows = read_trace(tmp_path / "trace.jsonl")
    assert [r["orders"][0] for r in rows[:-1]] == [4, 24, 168]
    assert rows[-1]["verdict"] == "win(1)"
    assert (tmp_path / "summary.txt").read_text().endswith("\n")


def test_builtin_game_name(tmp_path):
    assert main(["game", "--scenario", "elementary-4-2", "--out", str(tmp_path)]) == 0


def test_premature_move_exits_3(tmp_path, capsys):
    code = main(["game", "--scenario", "elementary-3-2", "--strategy", "premature-type-ii", "--out", str(tmp_path)])
    assert code == 3
    assert "step 1" in capsys.readouterr().out


def test_strategy_over_builtin_scenario(tmp_path):
    code = main(["game", "--scenario", "elementary-3-3", "--strategy", str(data_path("premature-type-ii.json")), "--out", str(tmp_path)])
    assert code == 3


def test_malformed_json_exits_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["game", "--scenario", str(bad), "--out", str(tmp_path)]) == 2
    assert main(["game", "--scenario", "no-such-scenario", "--out", str(tmp_path)]) == 2


def test_wrong_expected_winner_exits_1(tmp_path):
    obj = json.loads(data_path("elementary-3-2.json").read_text())
    obj["expected_winner"] = 2
    path = tmp_path / "s.json"
    path.write_text(json.dumps(obj))
    assert main(["game", "--scenario", str(path), "--out", str(tmp_path)]) == 1


def test_incomplete_exits_1(tmp_path):
    obj = json.loads(data_path("elementary-3-2.json").read_text())
    obj["moves"] = obj["moves"][:1]
    path = tmp_path / "s.json"
    path.write_text(json.dumps(obj))
    assert main(["game", "--scenario", str(path), "--out", str(tmp_path)]) == 1


def test_oversized_scenario_exits_4(tmp_path):
    assert main(["game", "--scenario", "elementary-3-3", "--cap", "100", "--out", str(tmp_path)]) == 4


def test_expander_single_row(tmp_path):
    assert main(["expander", "--m", "1", "--p", "2", "--q", "2", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "report.csv").read_text().splitlines()
    assert lines[0] == "m,p,V,q,d,lambda,kind,restarts,seed"
    assert len(lines) == 2 and ",exact-eigen," in lines[1]
    assert abs(float(lines[1].split(",")[5]) - 0.0928332553059) < 1e-12


def test_expander_export_only(tmp_path):
    assert main(["expander", "--m", "1", "--p", "2", "--q", "--out", str(tmp_path)]) == 0
    assert not (tmp_path / "report.csv").exists()
    assert (tmp_path / "cayley-m1-p2.edges").exists()
    assert json.loads((tmp_path / "cayley-m1-p2.json").read_text())["vertices"] == 20160


def test_expander_overflow_exits_4(tmp_path):
    assert main(["expander", "--m", "2", "--p", "2", "--q", "2", "--out", str(tmp_path)]) == 4
    assert ",overflow," in (tmp_path / "report.csv").read_text()


@pytest.mark.parametrize("kind", ["geom", "realizer"])
def test_bundled_corpora_pass(kind, tmp_path, capsys):
    assert main([kind, "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "0 failing" in out
    if kind == "geom":
        report = json.loads((tmp_path / "geom-report.json").read_text())
        tp = next(r for r in report if r["id"] == "glued-tp-violation")
        assert tp["ok"] and tp["observed"]["verdict"] == "violated"


@pytest.mark.parametrize("kind", ["geom", "realizer"])
def test_empty_corpus(kind, tmp_path, capsys):
    path = tmp_path / "empty.json"
    path.write_text("[]")
    assert main([kind, str(path)]) == 0
    assert "0 checks" in capsys.readouterr().out


def test_perturbed_case_is_listed(tmp_path, capsys):
    cases = json.loads(data_path("geometry_corpus.json").read_text())
    case = next(c for c in cases if c["id"] == "glued-dist-DE")
    case["expected"] = 1.5
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cases))
    assert main(["geom", str(path)]) == 1
    assert "failing cases: glued-dist-DE" in capsys.readouterr().out


def test_broken_corpus_exits_2(tmp_path):
    path = tmp_path / "c.json"
    path.write_text('{"id": 1}')
    assert main(["realizer", str(path)]) == 2


def test_console_script(tmp_path):
    res = subprocess.run(
        [sys.executable, "-m", "fixlab.cli", "game", "--scenario", "elementary-3-2", "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert res.returncode == 0
    assert "win(1)" in res.stdout
