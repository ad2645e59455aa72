import json

import pytest

from eip7702sim.cli import main
from eip7702sim.codec import decode_tuple_hex, read_hex_file

from oracles import CROSSCHAIN_DRAINER, VICTIM_ADDRESS


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out
    return code, (json.loads(out) if out.strip() else None)


@pytest.fixture
def out(tmp_path):
    return tmp_path / "run"


def test_craft_tuple(capsys, out, tmp_path):
    path = tmp_path / "t.hex"
    code, doc = run(capsys, "--output", out, "craft-tuple", "--chain-id", 0, "--target", CROSSCHAIN_DRAINER,
                    "--nonce", 0, "--key", "victim", "--out", path)
    assert code == 0 and doc["authority"] == VICTIM_ADDRESS
    tup = decode_tuple_hex(read_hex_file(path))
    assert (tup.chain_id, tup.target, tup.nonce) == (0, CROSSCHAIN_DRAINER, 0)


def test_bad_target(capsys, out):
    code, _ = run(capsys, "--output", out, "craft-tuple", "--chain-id", 0, "--target", "0x12", "--nonce", 0)
    assert code == 2


def test_usage_error_exit_code(out):
    with pytest.raises(SystemExit) as exc:
        main(["--output", str(out), "run", "zzz"])
    assert exc.value.code == 2


def test_authtx_and_scan(capsys, out, tmp_path):
    path = tmp_path / "t.hex"
    assert run(capsys, "--output", out, "init")[0] == 0
    code, doc = run(capsys, "--output", out, "scan")
    assert doc["summary"] == "no delegations"
    run(capsys, "--output", out, "craft-tuple", "--chain-id", 0, "--target", CROSSCHAIN_DRAINER,
        "--nonce", 0, "--out", path)
    code, receipt = run(capsys, "--output", out, "authtx", "--tuple", path, "--sender", "attacker")
    assert code == 0 and receipt["tuples_applied"][0]["accepted"]
    code, receipt = run(capsys, "--output", out, "authtx", "--tuple", path, "--sender", "attacker")
    assert code == 0 and receipt["tuples_applied"][0]["reject_reason"] == "NonceMismatch"
    code, doc = run(capsys, "--output", out, "scan")
    assert doc["findings"] == [{"authority": VICTIM_ADDRESS, "target": CROSSCHAIN_DRAINER,
                                "kind": "MaliciousDrainer", "warning": True}]


def test_authtx_policy_rejection(capsys, out, tmp_path):
    path = tmp_path / "t.hex"
    run(capsys, "--output", out, "init")
    run(capsys, "--output", out, "craft-tuple", "--chain-id", 0, "--target", CROSSCHAIN_DRAINER,
        "--nonce", 0, "--out", path)
    code, _ = run(capsys, "--output", out, "--policy", "strict", "authtx", "--tuple", path, "--sender", "attacker")
    assert code == 3


def test_scan_unreadable(capsys, tmp_path):
    assert run(capsys, "scan", "--state", tmp_path / "missing.json")[0] == 2


def test_run_pipeline(capsys, out):
    code, doc = run(capsys, "--output", out, "run", "pipeline")
    assert code == 0 and doc["postconditions_hold"]
    assert [r["scenario_id"] for r in doc["reports"]] == ["pipeline", "A", "B", "C"]
    assert doc["reports"][-1]["eth_after"] == "0"
    assert (out / "state" / "before.json").exists() and (out / "state" / "after.json").exists()
    assert len(list((out / "traces").glob("*.jsonl"))) == 4


def test_run_crosschain(capsys, out):
    code, doc = run(capsys, "--output", out, "run", "crosschain")
    assert code == 0
    assert doc["aggregate"]["total"]["attacker_gain_tokens"] == str(6000 * 10**18)
    assert (out / "reports" / "aggregate.json").exists()
    for cid in (1337, 2337, 3337):
        assert (out / "reports" / f"chain_{cid}" / "crosschain.json").exists()


def test_run_composite_blocked_is_expected(capsys, out):
    code, doc = run(capsys, "--output", out, "--policy", "all-filters", "run", "composite")
    assert code == 0 and not doc["reports"][0]["drain_satisfied"]


def test_postcondition_failure(capsys, out, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"chains": [{"chain_id": 1337, "funding": 0}]}))
    code, doc = run(capsys, "--config", cfg, "--output", out, "run", "a")
    assert code == 4 and not doc["postconditions_hold"]


def test_determinism(capsys, tmp_path):
    _, first = run(capsys, "--output", tmp_path / "x", "run", "c")
    _, second = run(capsys, "--output", tmp_path / "y", "run", "c")
    assert first == second
    a = sorted(p.read_bytes() for p in (tmp_path / "x").rglob("*.json"))
    b = sorted(p.read_bytes() for p in (tmp_path / "y").rglob("*.json"))
    assert a == b
