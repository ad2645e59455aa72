"""Attack lifecycle orchestration: environment setup, install, triggers, drain checks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional

from .aa4337 import EntryPointModel, PipelineConfig, UserOperation, bundler_submit, phase_of_first
from .behaviors import DummyProtocol, MaliciousDrainer, MockErc20
from .codec import ZERO_ADDRESS, keccak256, to_address
from .execution import encode_call, erc20_mint, register_behavior
from .guard import POLICY_PRESETS, ScopedTupleExtension, TuplePolicy
from .models import AuthorizationTuple
from .signing import ATTACKER_KEY, DEVNET_KEYS, VICTIM_KEY, derive_address, resolve_key, sign_authorization
from .state import GAS_PRICE, ChainState, eth, format_eth
from .txproc import OuterCall, Receipt, build_auth_tx, process_set_code_tx, send_call

LOCAL_DRAINER = "0x5fbdb2315678afecb367f032d93f642f64180aa3"
CROSSCHAIN_DRAINER = "0x8464135c8f25da09e49bc8782676a84730c318bc"
TOKEN = "0x71c95911e9a5d330f4d621842ec243ee1343292e"
PROTOCOL = "0x663f3ad617193148711d28f5334ee4ed07016602"
ENTRYPOINT = "0x5ff137d4b0fdcd49dca30c7cf57e578a026d2789"
PAYMASTER = to_address(keccak256(b"eip7702sim:paymaster")[12:])

DEFAULT_CHAIN_ID = 1337
TOKEN_UNIT = 10**18
INSTALL_GAS_LIMIT = 0x500000
INSTALL_MAX_FEE = 0x2540BE400
TRIGGER_GAS_LIMIT = 100_000
SELF_SEND_VALUE = eth("0.1")
PROTOCOL_VALUE = eth("0.1")
DEFAULT_DELTA = eth("0.01")
DUST_THRESHOLD = eth("0.01")
MATRIX_DORMANCY = 10

SCENARIO_IDS = ("A", "B", "C", "pipeline", "crosschain", "composite")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ActorSet:
    victim_key: str
    attacker_key: str
    delegate: str
    token: str
    protocol: str
    bystander_key: str = DEVNET_KEYS[2]
    bundler_key: str = DEVNET_KEYS[3]
    paymaster: str = PAYMASTER
    entrypoint: str = ENTRYPOINT

    def __post_init__(self):
        if derive_address(self.victim_key) == derive_address(self.attacker_key):
            raise ConfigError("victim and attacker must be distinct accounts")
        for name in ("delegate", "token", "protocol", "paymaster", "entrypoint"):
            object.__setattr__(self, name, to_address(getattr(self, name)))

    @property
    def victim(self) -> str:
        return derive_address(self.victim_key)

    @property
    def attacker(self) -> str:
        return derive_address(self.attacker_key)

    @property
    def bystander(self) -> str:
        return derive_address(self.bystander_key)

    @property
    def bundler(self) -> str:
        return derive_address(self.bundler_key)

    def to_dict(self) -> dict:
        return {
            "victim": self.victim,
            "attacker": self.attacker,
            "delegate": self.delegate,
            "token": self.token,
            "protocol": self.protocol,
            "bystander": self.bystander,
            "bundler": self.bundler,
            "paymaster": self.paymaster,
            "entrypoint": self.entrypoint,
        }


@dataclass(frozen=True)
class DrainCriterion:
    delta: int = DEFAULT_DELTA
    window_start: Optional[int] = None
    window_end: Optional[int] = None

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if (self.window_start is not None and self.window_end is not None
                and self.window_end < self.window_start):
            raise ValueError("window_end must not precede window_start")


@dataclass
class ScenarioReport:
    scenario_id: str
    eth_before: int
    eth_after: int
    tokens_before: int
    tokens_after: int
    attacker_gain_eth: int
    attacker_gain_tokens: int
    fallback_executed: bool
    tx_hashes: List[str]
    drain_satisfied: bool
    chain_id: int = DEFAULT_CHAIN_ID
    victim_inflow_eth: int = 0
    gas_burned_by_victim: int = 0
    trigger_origin: str = ""
    notes: List[str] = field(default_factory=list)

    def reconciles(self) -> bool:
        """Victim outflow equals what the attacker received plus gas the victim paid."""
        outflow = self.eth_before - self.eth_after + self.victim_inflow_eth
        return outflow == self.attacker_gain_eth + self.gas_burned_by_victim

    def to_dict(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "chain_id": self.chain_id,
            "trigger_origin": self.trigger_origin,
            "eth_before": str(self.eth_before),
            "eth_after": str(self.eth_after),
            "tokens_before": str(self.tokens_before),
            "tokens_after": str(self.tokens_after),
            "attacker_gain_eth": str(self.attacker_gain_eth),
            "attacker_gain_tokens": str(self.attacker_gain_tokens),
            "victim_inflow_eth": str(self.victim_inflow_eth),
            "gas_burned_by_victim": str(self.gas_burned_by_victim),
            "fallback_executed": self.fallback_executed,
            "drain_satisfied": self.drain_satisfied,
            "tx_hashes": list(self.tx_hashes),
            "notes": list(self.notes),
            "display": {
                "eth_before": format_eth(self.eth_before),
                "eth_after": format_eth(self.eth_after),
                "eth_drained": format_eth(self.attacker_gain_eth),
                "tokens_drained": format_eth(self.attacker_gain_tokens),
            },
        }


@dataclass
class Environment:
    state: ChainState
    actors: ActorSet
    entrypoint: EntryPointModel
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    install_tuple: Optional[AuthorizationTuple] = None
    install_extension: Optional[ScopedTupleExtension] = None

    def __iter__(self):
        yield self.state
        yield self.actors

    def refund_victim(self, amount: int) -> None:
        self.state.fund(self.actors.victim, amount)


# ---------------------------------------------------------------- setup

def resolve_policy(policy) -> dict:
    """A preset name, a dict, or None -> policy dict."""
    if policy is None:
        return {}
    if isinstance(policy, str):
        if policy not in POLICY_PRESETS:
            raise ConfigError(f"unknown policy preset {policy!r}")
        return dict(POLICY_PRESETS[policy])
    if isinstance(policy, dict):
        return dict(policy)
    raise ConfigError(f"policy must be a preset name or mapping, got {type(policy).__name__}")


def _eth_field(config: dict, key: str, default) -> int:
    try:
        return eth(config.get(key, default))
    except (ValueError, ArithmeticError) as exc:
        raise ConfigError(f"bad {key}: {config.get(key)!r}") from exc


def setup_environment(config: Optional[dict] = None) -> Environment:
    config = dict(config or {})
    try:
        chain_id = int(config.get("chain_id", DEFAULT_CHAIN_ID))
        victim_key = resolve_key(config.get("victim_key", VICTIM_KEY))
        attacker_key = resolve_key(config.get("attacker_key", ATTACKER_KEY))
        state = ChainState(chain_id)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    actors = ActorSet(
        victim_key=victim_key,
        attacker_key=attacker_key,
        delegate=config.get("delegate", LOCAL_DRAINER),
        token=config.get("token", TOKEN),
        protocol=config.get("protocol", PROTOCOL),
    )
    policy = resolve_policy(config.get("policy"))
    state.policy = TuplePolicy.from_dict(policy)

    register_behavior(state, actors.token, MockErc20("MOCK", 18))
    drainer = MaliciousDrainer(sink=actors.attacker, watched_tokens=(actors.token,))
    # both drainer deployments exist on every chain; actors.delegate picks the install target
    for addr in dict.fromkeys((actors.delegate, LOCAL_DRAINER, CROSSCHAIN_DRAINER)):
        register_behavior(state, addr, drainer)
    register_behavior(state, actors.protocol, DummyProtocol())

    state.fund(actors.victim, _eth_field(config, "victim_funding_eth", 10000))
    state.fund(actors.attacker, _eth_field(config, "attacker_funding_eth", 10000))
    state.fund(actors.bystander, _eth_field(config, "bystander_funding_eth", 10000))
    state.fund(actors.bundler, _eth_field(config, "bundler_funding_eth", 100))
    state.fund(actors.paymaster, _eth_field(config, "paymaster_funding_eth", 100))
    tokens = int(config.get("victim_tokens", 2000))
    if tokens < 0:
        raise ConfigError("victim_tokens must be non-negative")
    if tokens:
        erc20_mint(state, actors.token, actors.victim, tokens * TOKEN_UNIT)
    return Environment(state, actors, EntryPointModel(actors.entrypoint),
                       PipelineConfig.from_dict(policy))


# ---------------------------------------------------------------- measurement

def _victim_view(env: Environment) -> dict:
    s, a = env.state, env.actors
    return {
        "eth": s.balance(a.victim),
        "tokens": s.token_balance(a.token, a.victim),
        "attacker_tokens": s.token_balance(a.token, a.attacker),
        "height": s.height,
        "receipts": len(s.receipts),
    }


def _window_receipts(state: ChainState, start: int, end: int) -> List[Receipt]:
    return [r for r in state.receipts if start < r.block_height <= end]


def value_received(receipts, recipient: str) -> int:
    recipient = to_address(recipient)
    total = 0
    for r in receipts:
        for e in r.trace:
            if e.kind == "ValueTransfer" and e["to"] == recipient and e["from"] != recipient:
                total += e["value"]
    return total


def delegated_dispatch_seen(receipts, authority: str) -> bool:
    authority = to_address(authority)
    return any(e.kind == "DelegationResolved" and e["authority"] == authority
               for r in receipts for e in r.trace)


def check_drain(state_before: ChainState, state_after: ChainState, victim: str, attacker: str,
                criterion: Optional[DrainCriterion] = None) -> bool:
    criterion = criterion or DrainCriterion()
    start = criterion.window_start if criterion.window_start is not None else state_before.height
    end = criterion.window_end if criterion.window_end is not None else state_after.height
    receipts = _window_receipts(state_after, start, end)
    if not state_after.balance(victim) < state_before.balance(victim):
        return False
    if value_received(receipts, attacker) < criterion.delta:
        return False
    return delegated_dispatch_seen(receipts, victim)


def _measure(env: Environment, scenario_id: str, trigger_origin: str,
             action: Callable[[], List[Receipt]],
             criterion: Optional[DrainCriterion] = None) -> ScenarioReport:
    s, a = env.state, env.actors
    before = _victim_view(env)
    balance_before = s.balance(a.victim)
    receipts = action()
    after = _victim_view(env)
    events = [e for r in receipts for e in r.trace]
    inflow = sum(e["value"] for e in events
                 if e.kind == "ValueTransfer" and e["to"] == a.victim and e["from"] != a.victim)
    gas_by_victim = sum(r.gas_cost for r in receipts if r.sender == a.victim)
    gain = value_received(receipts, a.attacker)
    criterion = criterion or DrainCriterion()
    drained = (after["eth"] < balance_before + inflow and gain >= criterion.delta
               and delegated_dispatch_seen(receipts, a.victim))
    return ScenarioReport(
        scenario_id=scenario_id,
        chain_id=s.chain_id,
        eth_before=before["eth"],
        eth_after=after["eth"],
        tokens_before=before["tokens"],
        tokens_after=after["tokens"],
        attacker_gain_eth=gain,
        attacker_gain_tokens=after["attacker_tokens"] - before["attacker_tokens"],
        fallback_executed=any(e.kind == "FallbackExecuted" and e["account"] == a.victim
                              for e in events),
        tx_hashes=[r.tx_hash for r in receipts],
        drain_satisfied=drained,
        victim_inflow_eth=inflow,
        gas_burned_by_victim=gas_by_victim,
        trigger_origin=trigger_origin,
    )


# ---------------------------------------------------------------- lifecycle

def craft_install_tuple(env: Environment, chain_id: Optional[int] = None) -> AuthorizationTuple:
    """Victim-signed tuple for a victim-sent AuthTx (nonce = account nonce + 1)."""
    s, a = env.state, env.actors
    chain = s.chain_id if chain_id is None else chain_id
    return sign_authorization(a.victim_key, chain, a.delegate, s.nonce(a.victim) + 1)


def run_phase1_install(env: Environment, chain_id: Optional[int] = None,
                       extension: Optional[ScopedTupleExtension] = None) -> Receipt:
    """Victim-sent AuthTx installing the delegate; reuses the first signed tuple on repeat."""
    s, a = env.state, env.actors
    if env.install_tuple is None or chain_id is not None:
        env.install_tuple = craft_install_tuple(env, chain_id)
        env.install_extension = extension
    tx = build_auth_tx(
        a.victim,
        [env.install_tuple],
        OuterCall(to=ZERO_ADDRESS, gas_limit=INSTALL_GAS_LIMIT, max_fee=INSTALL_MAX_FEE),
        tx_nonce=s.nonce(a.victim),
        chain_id=s.chain_id,
    )
    ext = [extension if extension is not None else env.install_extension]
    return process_set_code_tx(tx, s, extensions=ext if ext[0] is not None else None)


def run_scenario_a(env: Environment, criterion: Optional[DrainCriterion] = None) -> ScenarioReport:
    """User-driven trigger: the victim sends 0.1 ETH to itself."""
    s, a = env.state, env.actors
    return _measure(env, "A", "victim-self-send", lambda: [
        send_call(s, a.victim, a.victim, SELF_SEND_VALUE, gas_limit=TRIGGER_GAS_LIMIT)
    ], criterion)


def run_scenario_b(env: Environment, criterion: Optional[DrainCriterion] = None) -> ScenarioReport:
    """Attacker-driven trigger: an empty-calldata call into the victim."""
    s, a = env.state, env.actors
    return _measure(env, "B", "attacker-call", lambda: [
        send_call(s, a.attacker, a.victim, 0, gas_limit=TRIGGER_GAS_LIMIT)
    ], criterion)


def run_scenario_c(env: Environment, value: int = PROTOCOL_VALUE,
                   criterion: Optional[DrainCriterion] = None) -> ScenarioReport:
    """Ambient trigger: a bystander invokes DummyProtocol.callTarget(victim) with ``value``."""
    s, a = env.state, env.actors
    data = encode_call("callTarget(address)", a.victim)
    return _measure(env, "C", "protocol-callback", lambda: [
        send_call(s, a.bystander, a.protocol, value, data, gas_limit=TRIGGER_GAS_LIMIT)
    ], criterion)


def composite_user_op(env: Environment, call_value: int = 1,
                      paymaster: Optional[str] = PAYMASTER) -> UserOperation:
    a = env.actors
    return UserOperation(
        sender=a.victim,
        op_nonce=env.entrypoint.next_nonce(a.victim),
        call_target=a.victim,
        call_value=call_value,
        paymaster=paymaster,
        gas_budget=TRIGGER_GAS_LIMIT,
    )


def run_composite_attack(env: Environment, call_value: int = 1,
                         criterion: Optional[DrainCriterion] = None) -> ScenarioReport:
    """A third-party bundler relays a UserOperation that routes through the delegated victim."""
    s, a = env.state, env.actors
    op = composite_user_op(env, call_value, a.paymaster)
    op_receipts = []

    def action():
        op_receipts.extend(bundler_submit(s, env.entrypoint, [op], env.pipeline, bundler=a.bundler))
        return [r.receipt for r in op_receipts if r.receipt is not None]

    report = _measure(env, "composite", "4337-pipeline", action, criterion)
    for r in op_receipts:
        if not r.accepted:
            report.notes.append(f"op rejected at {r.stage}: {r.reason}")
        else:
            phase = phase_of_first(r.trace, "FallbackExecuted")
            if phase is not None:
                report.notes.append(f"delegate executed first during {phase} phase")
    return report


def install_report(env: Environment, receipt: Receipt) -> ScenarioReport:
    s, a = env.state, env.actors
    accepted = all(t.accepted for t in receipt.tuples_applied)
    notes = ["phase1-install"]
    notes += [f"tuple rejected: {t.reject_reason}" for t in receipt.tuples_applied if not t.accepted]
    return ScenarioReport(
        scenario_id="pipeline",
        chain_id=s.chain_id,
        eth_before=s.balance(a.victim) + receipt.gas_cost,
        eth_after=s.balance(a.victim),
        tokens_before=s.token_balance(a.token, a.victim),
        tokens_after=s.token_balance(a.token, a.victim),
        attacker_gain_eth=0,
        attacker_gain_tokens=0,
        fallback_executed=False,
        tx_hashes=[receipt.tx_hash],
        drain_satisfied=False,
        gas_burned_by_victim=receipt.gas_cost,
        trigger_origin="install" if accepted else "install-rejected",
        notes=notes,
    )


def run_full_pipeline(env: Environment) -> List[ScenarioReport]:
    """Install, then A, B, C in order; stops after a rejected install."""
    receipt = run_phase1_install(env)
    reports = [install_report(env, receipt)]
    if not all(t.accepted for t in receipt.tuples_applied):
        return reports
    reports.append(run_scenario_a(env))
    reports.append(run_scenario_b(env))
    reports.append(run_scenario_c(env))
    return reports


# ---------------------------------------------------------------- defense matrix flows

@dataclass
class FlowOutcome:
    flow: str
    outcome: str
    install_accepted: bool
    report: ScenarioReport
    env: Optional[Environment] = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "flow": self.flow,
            "outcome": self.outcome,
            "install_accepted": self.install_accepted,
            "report": self.report.to_dict(),
        }


def run_attack_flow(flow: str, policy=None, dormancy: int = MATRIX_DORMANCY,
                    config: Optional[dict] = None) -> FlowOutcome:
    """Fresh env under ``policy``: install (unscoped, chain-specific), wait, trigger ``flow``."""
    runners = {
        "A": run_scenario_a,
        "B": run_scenario_b,
        "C": run_scenario_c,
        "composite": run_composite_attack,
    }
    if flow not in runners:
        raise ValueError(f"unknown flow {flow!r}")
    cfg = dict(config or {})
    cfg["policy"] = resolve_policy(policy)
    env = setup_environment(cfg)
    receipt = run_phase1_install(env)
    env.state.advance_height(dormancy)
    report = runners[flow](env)
    return FlowOutcome(flow, "drained" if report.drain_satisfied else "blocked",
                       all(t.accepted for t in receipt.tuples_applied), report, env)


def run_benign_workflow(policy=None) -> dict:
    """Ordinary activity with no delegation anywhere; returns the final state and op verdicts."""
    cfg = {"policy": resolve_policy(policy)}
    env = setup_environment(cfg)
    s, a = env.state, env.actors
    receipts = [
        send_call(s, a.victim, a.bystander, eth(1)),
        send_call(s, a.victim, a.token,
                  data=encode_call("transfer(address,uint256)", a.bystander, 10 * TOKEN_UNIT)),
        send_call(s, a.bystander, a.attacker, eth(2)),
        send_call(s, a.bystander, a.protocol, eth("0.5"),
                  encode_call("callTarget(address)", a.attacker)),
    ]
    op = UserOperation(sender=a.bystander, op_nonce=0, call_target=a.attacker,
                       call_value=1, paymaster=a.paymaster)
    op_receipts = bundler_submit(s, env.entrypoint, [op], env.pipeline, bundler=a.bundler)
    snapshot = s.to_dict(include_receipts=False)
    snapshot.pop("policy")
    return {
        "tx_success": [r.success for r in receipts],
        "ops_accepted": [r.accepted for r in op_receipts],
        "state": snapshot,
    }
