import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from gazeinsight.cli import main
from gazeinsight.ingest import pseudonymize

FIX = Path(__file__).parent / "fixtures"
SALT = "0123456789abcdef-salt"
RAW_ID = "child-07"

SESSION = "\n".join(
    ["Timestamp,X,Y,Obj-X,Obj-Y,Kind,Object,Role"]
    + [f"{t},{500 if 3000 <= t < 4000 else 100},{500 if 3000 <= t < 4000 else 900},"
       + ("500,500,Appear,mush,Target" if t == 1000 else "400,400,Appear,bee,Distractor" if t == 6000 else ",,,,")
       for t in range(0, 12000, 20)]
) + "\n"


@pytest.fixture
def env(monkeypatch):
    monkeypatch.setenv("GAZEINSIGHT_SALT", SALT)


@pytest.fixture
def inputs(tmp_path):
    (tmp_path / "s.csv").write_text(SESSION)
    shutil.copy(FIX / "reference_meta.json", tmp_path / "meta.json")
    return tmp_path


def run(*argv):
    try:
        return main([str(a) for a in argv])
    except SystemExit as exc:
        return exc.code


def scan(directory, needle):
    return [p.name for p in Path(directory).rglob("*") if p.is_file() and needle in p.read_text(encoding="utf-8")]


def test_validate_reference_log_ok(capsys):
    assert run("validate", "--session", FIX / "reference_log.csv", "--aoi", FIX / "reference_aoi.json") == 0
    assert "agreement 5/5" in capsys.readouterr().out


def test_validate_wrong_geometry_disagrees(capsys):
    assert run("validate", "--session", FIX / "reference_log.csv", "--screen", "1280x720") == 3
    assert "quadrant Q3 != Q4" in capsys.readouterr().out


def test_validate_rejected_row_is_parse_failure(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("Timestamp,X,Y\n1,1,1\n2,x,1\n")
    assert run("validate", "--session", p) == 2


def test_validate_bad_header(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("when,where\n1,1\n")
    assert run("validate", "--session", p) == 2


def test_validate_json(capsys):
    assert run("validate", "--session", FIX / "reference_log.csv", "--aoi", FIX / "reference_aoi.json", "--json") == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["consistency"]["agree"] == 5


def test_usage_error():
    assert run("analyze", "--k", "notanumber") == 64
    assert run("frobnicate") == 64


def test_analyze_writes_artifacts_deterministically(inputs, env):
    a, b = inputs / "a", inputs / "b"
    assert run("analyze", "--session", inputs / "s.csv", "--meta", inputs / "meta.json", "--out", a) == 0
    assert run("analyze", "--session", inputs / "s.csv", "--meta", inputs / "meta.json", "--out", b) == 0
    names = {p.name for p in a.iterdir()}
    assert {"labeled_samples.csv", "fixations.csv", "aoi_overlay.json", "metrics.json", "report.md",
            "report.json", "adaptation.jsonl", "manifest.json", "clusters.json"} <= names
    assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()
    report = json.loads((a / "report.json").read_text())
    assert report["participant_pseudonym"] == pseudonymize(RAW_ID, SALT.encode())
    assert scan(a, RAW_ID) == []


def test_analyze_without_salt_is_refused(inputs, monkeypatch):
    monkeypatch.delenv("GAZEINSIGHT_SALT", raising=False)
    out = inputs / "o"
    assert run("analyze", "--session", inputs / "s.csv", "--meta", inputs / "meta.json", "--out", out) == 4
    assert not out.exists()


def test_analyze_short_salt_is_refused(inputs, monkeypatch):
    monkeypatch.setenv("GAZEINSIGHT_SALT", "short")
    assert run("analyze", "--session", inputs / "s.csv", "--meta", inputs / "meta.json", "--out", inputs / "o") == 4


def test_leaking_id_is_refused(inputs, env):
    # an id that also occurs in the data cannot be proven absent from the outputs
    (inputs / "leaky.json").write_text(json.dumps({"participant_id": "mush", "screen_width": 1920,
                                                   "screen_height": 1080}))
    out = inputs / "o"
    assert run("analyze", "--session", inputs / "s.csv", "--meta", inputs / "leaky.json", "--out", out) == 4
    assert not out.exists()


def test_analyze_missing_input_is_config_error(inputs, env):
    assert run("analyze", "--session", inputs / "nope.csv", "--out", inputs / "o") == 6


def test_analyze_bad_rules_is_config_error(inputs, env):
    (inputs / "rules.json").write_text(json.dumps([{"code": "X", "metric": "bogus", "comparator": ">",
                                                    "threshold": 1}]))
    assert run("analyze", "--session", inputs / "s.csv", "--rules", inputs / "rules.json",
               "--out", inputs / "o") == 6


def test_session_without_events_reports_absent(inputs, env):
    (inputs / "plain.csv").write_text("Timestamp,X,Y\n" + "".join(f"{t},100,100\n" for t in range(0, 2000, 20)))
    assert run("analyze", "--session", inputs / "plain.csv", "--out", inputs / "o") == 0
    metrics = json.loads((inputs / "o" / "metrics.json").read_text())
    assert metrics["suite"]["sustained_attention_score"] == "absent"
    assert metrics["suite"]["inhibitory_control_score"] == "absent"
    assert "| sustained_attention_score | absent |" in (inputs / "o" / "report.md").read_text()


def test_report_rerenders_and_lists_codes_once(inputs, env, capsys):
    out = inputs / "o"
    assert run("analyze", "--session", inputs / "s.csv", "--meta", inputs / "meta.json", "--out", out) == 0
    before = (out / "report.md").read_text()
    capsys.readouterr()
    assert run("report", "--out", out) == 0
    md = capsys.readouterr().out
    assert md == before == (out / "report.md").read_text()
    for ins in json.loads((out / "report.json").read_text())["insights"]:
        assert md.count(ins["code"]) == 1
    manifest = json.loads((out / "manifest.json").read_text())
    assert "report.md" in manifest["artifacts"]


def test_report_with_new_rules(inputs, env):
    out = inputs / "o"
    run("analyze", "--session", inputs / "s.csv", "--out", out)
    (inputs / "rules.json").write_text(json.dumps([{"code": "ALWAYS", "metric": "aoi_fraction", "comparator": ">=",
                                                    "threshold": 0, "narrative": "share {value}"}]))
    assert run("report", "--out", out, "--rules", inputs / "rules.json") == 0
    assert [i["code"] for i in json.loads((out / "report.json").read_text())["insights"]] == ["ALWAYS"]


def test_report_no_pseudonym_refused(inputs, env):
    out = inputs / "o"
    run("analyze", "--session", inputs / "s.csv", "--out", out)
    assert run("report", "--out", out, "--no-pseudonym") == 4


def test_report_missing_artifact(tmp_path):
    assert run("report", "--out", tmp_path) == 5


def test_replay_matches_analyze(inputs, env, capsys):
    out = inputs / "o"
    assert run("analyze", "--session", inputs / "s.csv", "--out", out) == 0
    expected = (out / "adaptation.jsonl").read_text()
    assert expected  # the example session is built to raise signals
    capsys.readouterr()
    assert run("replay", "--session", inputs / "s.csv", "--out", inputs / "r") == 0
    assert capsys.readouterr().out == expected
    assert (inputs / "r" / "replay.jsonl").read_text() == expected
    assert run("replay", "--session", inputs / "s.csv", "--batch") == 0
    assert capsys.readouterr().out == expected


def test_config_file_supplies_flags(inputs, env):
    (inputs / "cfg.json").write_text(json.dumps({"session": "s.csv", "out": "from-config", "k": 2, "seed": 7}))
    assert run("analyze", "--config", inputs / "cfg.json") == 0
    cfg = json.loads((inputs / "from-config" / "config.json").read_text())
    assert (cfg["k"], cfg["seed"]) == (2, 7)
    # explicit flags win over the file
    assert run("analyze", "--config", inputs / "cfg.json", "--k", "3", "--out", inputs / "o") == 0
    assert json.loads((inputs / "o" / "config.json").read_text())["k"] == 3


def test_unknown_config_key(inputs):
    (inputs / "cfg.json").write_text(json.dumps({"sessoin": "s.csv"}))
    assert run("analyze", "--config", inputs / "cfg.json") == 64


def test_multiple_sessions_go_to_pseudonymous_dirs(inputs, env):
    other = inputs / "meta2.json"
    other.write_text(json.dumps({"participant_id": "child-08", "screen_width": 1920, "screen_height": 1080}))
    out = inputs / "o"
    assert run("analyze", "--session", inputs / "s.csv", "--meta", inputs / "meta.json",
               "--session", inputs / "s.csv", "--meta", other, "--out", out) == 0
    dirs = sorted(p.name for p in out.iterdir())
    assert dirs == sorted(pseudonymize(i, SALT.encode())[:16] for i in (RAW_ID, "child-08"))
    assert scan(out, RAW_ID) == [] and scan(out, "child-08") == []


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "gazeinsight.cli", "validate", "--session",
                           str(FIX / "reference_log.csv"), "--aoi", str(FIX / "reference_aoi.json")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
