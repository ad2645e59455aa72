"""Command-line entry point.

Machine output is JSON on stdout; diagnostics go to stderr. Exit codes:
0 success or expected block, 2 usage, 3 policy rejection, 4 postcondition failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from . import guard, harness, multichain
from .codec import (
    InvalidAddress,
    MalformedRlp,
    MalformedTupleHex,
    decode_tuple_hex,
    encode_tuple_hex,
    read_hex_file,
    to_address,
    write_hex_file,
)
from .execution import AddressOccupied
from .signing import KEY_NAMES, InvalidKey, derive_address, resolve_key, sign_authorization, tuple_authority
from .state import ChainState, active_delegations
from .txproc import POLICY_REASONS, InvalidTransaction, OuterCall, build_auth_tx, process_set_code_tx

EXIT_OK, EXIT_USAGE, EXIT_POLICY, EXIT_POSTCONDITION = 0, 2, 3, 4
SCENARIOS = ("a", "b", "c", "pipeline", "crosschain", "composite")

log = logging.getLogger("eip7702sim")


class UsageError(Exception):
    pass


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)


def _emit(obj) -> None:
    sys.stdout.write(_dump(obj) + "\n")


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_dump(obj) + "\n")


# ---------------------------------------------------------------- config

def load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc


def load_policy(arg: Optional[str], config: dict) -> dict:
    if arg is None:
        return harness.resolve_policy(config.get("policy"))
    if arg in guard.POLICY_PRESETS:
        return dict(guard.POLICY_PRESETS[arg])
    try:
        return json.loads(Path(arg).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"--policy must be a preset ({', '.join(guard.POLICY_PRESETS)}) "
                         f"or a JSON file: {exc}") from exc


def chain_entries(config: dict) -> List[dict]:
    chains = config.get("chains") or [{"chain_id": harness.DEFAULT_CHAIN_ID}]
    if not chains:
        raise UsageError("config chains must be non-empty")
    return [dict(c) for c in chains]


def env_config(config: dict, chain: dict, policy: dict) -> dict:
    cfg = {"chain_id": int(chain["chain_id"]), "policy": policy}
    if "funding" in chain:
        cfg["victim_funding_eth"] = chain["funding"]
    actors = config.get("actors", {})
    for key in ("victim_key", "attacker_key"):
        if key in actors:
            cfg[key] = actors[key]
    return cfg


def _address_arg(text: str) -> str:
    try:
        if text in KEY_NAMES:
            return derive_address(KEY_NAMES[text])
        return to_address(text)
    except (InvalidAddress, InvalidKey, ValueError) as exc:
        raise UsageError(f"bad address {text!r}: {exc}") from exc


def state_path(output: Path, chain_id: int) -> Path:
    return output / "state" / f"chain_{chain_id}.json"


def load_state(path: Path) -> ChainState:
    try:
        return ChainState.from_json(path.read_text())
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read state {path}: {exc}") from exc


# ---------------------------------------------------------------- commands

def cmd_init(args, config, policy) -> int:
    out = []
    for chain in chain_entries(config):
        env = harness.setup_environment(env_config(config, chain, policy))
        path = state_path(args.output, env.state.chain_id)
        _write_json(path, env.state.to_dict())
        out.append({"chain_id": env.state.chain_id, "state_file": str(path)})
        actors = env.actors.to_dict()
    _emit({"chains": out, "actors": actors})
    return EXIT_OK


def cmd_craft_tuple(args, config, policy) -> int:
    try:
        key = resolve_key(args.key)
        target = to_address(args.target)
    except (InvalidKey, InvalidAddress, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    if args.chain_id < 0 or args.nonce < 0:
        raise UsageError("chain id and nonce must be non-negative")
    tup = sign_authorization(key, args.chain_id, target, args.nonce)
    text = encode_tuple_hex(tup)
    out_file = Path(args.out) if args.out else args.output / "tuples" / f"tuple_{args.chain_id}_{args.nonce}.hex"
    out_file.parent.mkdir(parents=True, exist_ok=True)
    write_hex_file(out_file, text)
    _emit({"file": str(out_file), "hex": text, "authority": tuple_authority(tup), "tuple": tup.to_dict()})
    return EXIT_OK


def cmd_authtx(args, config, policy) -> int:
    try:
        tuples = [decode_tuple_hex(read_hex_file(f)) for f in args.tuple]
    except (OSError, MalformedTupleHex, MalformedRlp) as exc:
        raise UsageError(f"cannot read tuple: {exc}") from exc
    chain_id = args.chain_id if args.chain_id is not None else int(chain_entries(config)[0]["chain_id"])
    path = state_path(args.output, chain_id)
    state = load_state(path)
    if args.policy is not None:
        from .guard import TuplePolicy

        state.policy = TuplePolicy.from_dict(policy)
    sender = _address_arg(args.sender)
    to = _address_arg(args.to) if args.to else harness.ZERO_ADDRESS
    try:
        tx = build_auth_tx(sender, tuples, OuterCall(to=to, value=int(args.value),
                                                     gas_limit=harness.INSTALL_GAS_LIMIT),
                           tx_nonce=state.nonce(sender), chain_id=state.chain_id)
        receipt = process_set_code_tx(tx, state)
    except InvalidTransaction as exc:
        raise UsageError(str(exc)) from exc
    path.write_text(_dump(state.to_dict()) + "\n")
    _emit(receipt.to_dict())
    rejected = {t.reject_reason for t in receipt.tuples_applied if not t.accepted}
    if rejected & {r.value for r in POLICY_REASONS}:
        log.warning("tuple rejected by policy: %s", ", ".join(sorted(rejected)))
        return EXIT_POLICY
    return EXIT_OK


def cmd_scan(args, config, policy) -> int:
    if args.state:
        state = load_state(Path(args.state))
    else:
        chain_id = int(chain_entries(config)[0]["chain_id"])
        state = load_state(state_path(args.output, chain_id))
    findings = []
    for authority, target in sorted(active_delegations(state)):
        if args.address and to_address(args.address) != authority:
            continue
        behavior = state.behaviors.get(target)
        kind = behavior.kind if behavior is not None else "unknown"
        findings.append({"authority": authority, "target": target, "kind": kind,
                         "warning": kind == "MaliciousDrainer"})
        if kind == "MaliciousDrainer":
            log.warning("%s delegates to a draining contract at %s", authority, target)
    _emit({"chain_id": state.chain_id, "findings": findings,
           "summary": "no delegations" if not findings else f"{len(findings)} delegation(s)"})
    return EXIT_OK


# ---------------------------------------------------------------- run

def _write_traces(out: Path, receipts) -> None:
    for r in receipts:
        path = out / "traces" / f"{r.tx_hash}.jsonl"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(json.dumps(e.to_dict(), sort_keys=True) + "\n" for e in r.trace))


def _no_expiry(policy: dict) -> dict:
    return {k: v for k, v in policy.items() if k not in ("expiry_blocks", "max_delegation_lifetime")}


def _permissive(policy: dict) -> bool:
    return not guard.enabled_mitigations(policy) and not policy.get("single_use")


def _check_sequence(scenario: str, reports) -> bool:
    by_id = {r.scenario_id: r for r in reports}
    a = by_id.get("A")
    if a is None:
        return False
    ok = (a.tokens_after == 0 and a.eth_after <= harness.DUST_THRESHOLD
          and a.attacker_gain_tokens == a.tokens_before and a.drain_satisfied)
    if scenario in ("b", "c", "pipeline"):
        ok = ok and by_id["B"].eth_after == 0
    if scenario in ("c", "pipeline"):
        c = by_id["C"]
        ok = ok and c.attacker_gain_eth == harness.PROTOCOL_VALUE and c.eth_after == 0
    return ok


def _run_single(scenario, env_cfg, policy):
    """Returns (reports, env, postcondition_ok)."""
    flow = {"a": "A", "b": "B", "c": "C", "composite": "composite"}.get(scenario)
    if flow is not None and not _permissive(policy):
        outcome = harness.run_attack_flow(flow, policy, config={k: v for k, v in env_cfg.items() if k != "policy"})
        expected = guard.expected_outcome(flow, policy)
        outcome.report.notes.append(f"expected {expected} under policy, observed {outcome.outcome}")
        return [outcome.report], outcome.env, outcome.outcome == expected

    env = harness.setup_environment(env_cfg)
    if scenario == "composite":
        receipt = harness.run_phase1_install(env)
        reports = [harness.install_report(env, receipt), harness.run_composite_attack(env)]
        return reports, env, reports[-1].drain_satisfied

    reports = harness.run_full_pipeline(env)
    keep = {"a": ("A",), "b": ("A", "B"), "c": ("A", "B", "C")}.get(scenario)
    if keep is not None:
        reports = [r for r in reports if r.scenario_id in keep]
    if _permissive(policy):
        return reports, env, _check_sequence(scenario, reports)
    install_blocked = reports[0].trigger_origin == "install-rejected"
    if install_blocked:
        return reports, env, bool(policy.get("require_scope"))
    exp = _no_expiry(policy)
    ok = all((r.drain_satisfied or r.scenario_id == "B")
             == (guard.expected_outcome(r.scenario_id, exp) == "drained")
             for r in reports[1:] if r.scenario_id in ("A", "C"))
    return reports, env, ok


def cmd_run(args, config, policy) -> int:
    out = args.output
    chains = chain_entries(config)
    if args.scenario == "crosschain":
        return _run_crosschain(args, config, chains, policy)
    env_cfg = env_config(config, chains[0], policy)
    before = harness.setup_environment(env_cfg).state.to_dict()
    try:
        reports, env, ok = _run_single(args.scenario, env_cfg, policy)
    except InvalidTransaction as exc:
        # e.g. an underfunded victim; the scenario cannot run, so it cannot hold
        log.error("run %s aborted: %s", args.scenario, exc)
        summary = {"scenario": args.scenario, "seed": args.seed, "policy": policy,
                   "postconditions_hold": False, "error": str(exc), "reports": []}
        _write_json(out / "reports" / "summary.json", summary)
        _emit(summary)
        return EXIT_POSTCONDITION
    _write_json(out / "state" / "before.json", before)
    _write_json(out / "state" / "after.json", env.state.to_dict(include_receipts=False))
    _write_traces(out, env.state.receipts)
    names = []
    for i, r in enumerate(reports):
        name = f"{i:02d}_{r.scenario_id}.json"
        _write_json(out / "reports" / name, r.to_dict())
        names.append(name)
    summary = {
        "scenario": args.scenario,
        "seed": args.seed,
        "policy": policy,
        "postconditions_hold": ok,
        "reports": [r.to_dict() for r in reports],
    }
    _write_json(out / "reports" / "summary.json", summary)
    _emit(summary)
    if not ok:
        log.error("postcondition failed for run %s", args.scenario)
    return EXIT_OK if ok else EXIT_POSTCONDITION


def _run_crosschain(args, config, chains, policy) -> int:
    out = args.output
    ids = [int(c["chain_id"]) for c in chains] if len(chains) > 1 else list(multichain.DEFAULT_CHAIN_IDS)
    mcfg = {"chain_ids": ids, "policy": policy}
    mcfg.update({k: v for k, v in env_config(config, chains[0], policy).items()
                 if k in ("victim_key", "attacker_key")})
    menv = multichain.setup_multichain(mcfg)
    tup = multichain.craft_chain_agnostic_tuple(menv)
    receipts = multichain.replay_tuple(menv, tup)
    reports, aggregate = multichain.run_crosschain_experiment(menv)
    for env, report in zip(menv.envs, reports):
        cid = env.state.chain_id
        _write_json(out / "state" / f"chain_{cid}.json", env.state.to_dict(include_receipts=False))
        _write_json(out / "reports" / f"chain_{cid}" / "crosschain.json", report.to_dict())
        _write_traces(out, env.state.receipts)
    _write_json(out / "reports" / "aggregate.json", aggregate.to_dict())
    accepted = {cid: all(t.accepted for t in r.tuples_applied) for cid, r in receipts.items()}
    blocks = bool(policy.get("forbid_chain_agnostic") or policy.get("require_scope"))
    if blocks:
        ok = not any(accepted.values()) and not any(r.drain_satisfied for r in reports)
    else:
        ok = all(accepted.values()) and all(
            r.tokens_after == 0 and r.attacker_gain_tokens == r.tokens_before
            and r.eth_after <= harness.DUST_THRESHOLD for r in reports)
    summary = {
        "scenario": "crosschain",
        "seed": args.seed,
        "policy": policy,
        "tuple_hex": encode_tuple_hex(tup),
        "accepted": {str(k): v for k, v in accepted.items()},
        "postconditions_hold": ok,
        "aggregate": aggregate.to_dict(),
    }
    _emit(summary)
    return EXIT_OK if ok else EXIT_POSTCONDITION


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eip7702sim", description="EIP-7702 delegation attack simulator")
    p.add_argument("--config", help="RunConfig JSON file")
    p.add_argument("--output", type=Path, default=Path("run"), help="output directory")
    p.add_argument("--policy", help="policy preset name or JSON file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("init", help="write fresh per-chain state files")

    c = sub.add_parser("craft-tuple", help="sign an authorization tuple and write it as hex")
    c.add_argument("--chain-id", type=int, required=True)
    c.add_argument("--target", required=True)
    c.add_argument("--nonce", type=int, required=True)
    c.add_argument("--key", default="victim", help="hex key or fixture name (victim, attacker, dev0..dev3)")
    c.add_argument("--out", help="output .hex path")

    a = sub.add_parser("authtx", help="submit a set-code transaction against a state file")
    a.add_argument("--tuple", action="append", required=True, help=".hex file (repeatable)")
    a.add_argument("--sender", required=True)
    a.add_argument("--to")
    a.add_argument("--value", default="0", help="wei")
    a.add_argument("--chain-id", type=int)

    r = sub.add_parser("run", help="run a scenario or experiment into the output directory")
    r.add_argument("scenario", choices=SCENARIOS)

    s = sub.add_parser("scan", help="list active delegations")
    s.add_argument("--state", help="state JSON file")
    s.add_argument("--address")
    return p


COMMANDS = {
    "init": cmd_init,
    "craft-tuple": cmd_craft_tuple,
    "authtx": cmd_authtx,
    "run": cmd_run,
    "scan": cmd_scan,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(message)s")
    try:
        config = load_config(args.config)
        if args.config and "output_dir" in config and "--output" not in (argv or sys.argv):
            args.output = Path(config["output_dir"])
        if "seed" in config and args.seed == 0:
            args.seed = int(config["seed"])
        policy = load_policy(args.policy, config)
        return COMMANDS[args.command](args, config, policy)
    except (UsageError, harness.ConfigError, AddressOccupied) as exc:
        log.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
