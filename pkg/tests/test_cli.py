import json
from pathlib import Path

import pytest

from cghf.cli import main
from cghf.rules import shipped

FIXTURES = Path(__file__).resolve().parent / "fixtures"


def test_run_replay_metrics(tmp_path, capsys):
    out = tmp_path / "s2"
    assert main(["run", "--scenario", "scenario2_anchor", "--out", str(out)]) == 0
    assert "scenario2_anchor: 1 contexts" in capsys.readouterr().out
    log = out / "events.ndjson"
    assert main(["replay", "--log", str(log)]) == 0
    assert "identical" in capsys.readouterr().out
    assert main(["metrics", "--log", str(log)]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed == json.loads((out / "metrics.json").read_text())


def test_replay_detects_tampering(tmp_path, capsys):
    out = tmp_path / "s4"
    main(["run", "--scenario", "scenario4_multi_access", "--out", str(out)])
    log = out / "events.ndjson"
    lines = log.read_text().splitlines()
    envelope = next(i for i, line in enumerate(lines) if '"kind":"envelope"' in line)
    del lines[envelope]
    log.write_text("\n".join(lines) + "\n")
    capsys.readouterr()
    assert main(["replay", "--log", str(log)]) == 1
    assert "DIFFERS" in capsys.readouterr().out


def test_control_run(tmp_path, capsys):
    out = tmp_path / "c"
    main(["run", "--scenario", "scenario3_service_point", "--control", "--out", str(out)])
    report = json.loads((out / "metrics.json").read_text())
    assert report["control"] is True and report["contexts"] == 0


def test_run_from_scenario_file(tmp_path, capsys):
    scenario = {"name": "tiny", "topology": "topology2_anchor.json", "rules": ["anchor.rules"],
                "duration_s": 20, "nfs": [{"kind": "AnchorManager"}]}
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(scenario))
    assert main(["run", "--scenario", str(path), "--seed", "3", "--out", str(tmp_path / "o")]) == 0
    header = json.loads((tmp_path / "o" / "events.ndjson").read_text().splitlines()[0])
    assert header["spec"]["seed"] == 3 and header["spec"]["duration_ms"] == 20_000


def test_lint(capsys):
    assert main(["lint", "--rules", str(shipped("anchor.rules"))]) == 0
    assert "ok" in capsys.readouterr().out
    assert main(["lint", "--rules", str(FIXTURES / "invalid" / "undeclared_attr.rules")]) == 1
    assert "UndeclaredAttribute" in capsys.readouterr().out
    assert main(["lint", "--rules", str(FIXTURES / "invalid" / "missing_then.rules")]) == 1
    assert ":3:5:" in capsys.readouterr().out


def test_bad_arguments():
    with pytest.raises(SystemExit):
        main([])
    with pytest.raises(SystemExit):
        main(["run"])


def test_serve_answers_over_tcp(tmp_path):
    import socket
    import subprocess
    import sys

    config = {"name": "edge", "tick_s": 0.1, "port": 0, "principals": [
        {"id": "app-x", "token": "tx", "publish_scope": "raw/app/X/#", "subscribe_scope": "context/app/X/#"}]}
    path = tmp_path / "serve.json"
    path.write_text(json.dumps(config))
    proc = subprocess.Popen([sys.executable, "-m", "cghf.cli", "serve", "--config", str(path)],
                            stdout=subprocess.PIPE, text=True)
    try:
        banner = proc.stdout.readline()
        port = int(banner.rsplit(":", 1)[1])
        with socket.create_connection(("127.0.0.1", port), timeout=5) as s:
            f = s.makefile("rw", encoding="utf-8")
            f.write('{"op": "auth", "token": "tx"}\n')
            f.flush()
            assert json.loads(f.readline()) == {"ok": True, "principal_id": "app-x"}
    finally:
        proc.terminate()
        proc.wait(timeout=5)
