"""Call dispatch with delegation resolution, plus the native contract behaviors.

Contracts are modeled as Python handlers rather than bytecode. A call to an
account carrying a delegation indicator runs the behavior registered at the
indicated target, in the context of the delegating account.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

from . import guard
from .behaviors import (
    ContractBehavior,
    DummyProtocol,
    EmptyBehavior,
    MaliciousDrainer,
    MockErc20,
    RevertingStub,
)
from .codec import keccak256, to_address
from .state import (
    ChainState,
    InsufficientBalance,
    TokenLedger,
    is_delegated,
    transfer_value,
)

MAX_DEPTH = 16
PRECOMPILE_RANGE = range(0x01, 0x0A)

WEI_KEYS = frozenset({"value", "amount"})


class CallReverted(Exception):
    pass


class DepthExceeded(CallReverted):
    pass


class AddressOccupied(ValueError):
    pass


class UnknownToken(CallReverted):
    pass


class InsufficientTokenBalance(CallReverted):
    pass


@dataclass(frozen=True)
class CallFrame:
    caller: str
    callee: str
    value: int = 0
    data: bytes = b""
    depth: int = 0

    def __post_init__(self):
        object.__setattr__(self, "caller", to_address(self.caller))
        object.__setattr__(self, "callee", to_address(self.callee))
        if self.value < 0:
            raise ValueError("call value must be non-negative")

    def child(self, caller: str, callee: str, value: int = 0, data: bytes = b"") -> "CallFrame":
        return CallFrame(caller, callee, value, data, self.depth + 1)


@dataclass
class TraceEvent:
    kind: str
    attrs: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.attrs[key]

    def get(self, key, default=None):
        return self.attrs.get(key, default)

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        for k, v in self.attrs.items():
            out[k] = str(v) if k in WEI_KEYS else v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "TraceEvent":
        d = dict(d)
        kind = d.pop("kind")
        return cls(kind, {k: int(v) if k in WEI_KEYS else v for k, v in d.items()})


class Tracer:
    """Collects trace events and counts internal calls for gas accounting."""

    def __init__(self):
        self.events: List[TraceEvent] = []
        self.internal_calls = 0
        self.phase: Optional[str] = None

    def emit(self, kind: str, **attrs) -> TraceEvent:
        if self.phase is not None:
            attrs["phase"] = self.phase
        event = TraceEvent(kind, attrs)
        self.events.append(event)
        return event


@dataclass
class ExecResult:
    success: bool
    return_data: bytes = b""
    trace: List[TraceEvent] = field(default_factory=list)
    internal_calls: int = 0


# ---------------------------------------------------------------- minimal ABI

def selector(signature: str) -> bytes:
    return keccak256(signature.encode())[:4]


TRANSFER_SELECTOR = selector("transfer(address,uint256)")
BALANCE_OF_SELECTOR = selector("balanceOf(address)")
CALL_TARGET_SELECTOR = selector("callTarget(address)")


def _word(value) -> bytes:
    if isinstance(value, str):
        return bytes(12) + bytes.fromhex(to_address(value)[2:])
    return int(value).to_bytes(32, "big")


def encode_call(signature: str, *args) -> bytes:
    """ABI-encode a call whose arguments are all static words (address / uint256)."""
    return selector(signature) + b"".join(_word(a) for a in args)


def _arg_address(data: bytes, index: int) -> str:
    word = data[4 + 32 * index:4 + 32 * (index + 1)]
    if len(word) != 32:
        raise CallReverted("calldata too short")
    return to_address(word[12:])


def _arg_uint(data: bytes, index: int) -> int:
    word = data[4 + 32 * index:4 + 32 * (index + 1)]
    if len(word) != 32:
        raise CallReverted("calldata too short")
    return int.from_bytes(word, "big")


# ---------------------------------------------------------------- registration & tokens

def register_behavior(state: ChainState, addr: str, behavior: ContractBehavior) -> None:
    addr = to_address(addr)
    if addr in state.behaviors or state.code(addr):
        raise AddressOccupied(f"{addr} already hosts code on chain {state.chain_id}")
    state.behaviors[addr] = behavior
    state.account(addr).code = behavior.marker_code()
    if isinstance(behavior, MockErc20):
        state.token_ledgers[addr] = TokenLedger()


def _ledger(state: ChainState, token: str) -> TokenLedger:
    token = to_address(token)
    ledger = state.token_ledgers.get(token)
    if ledger is None or not isinstance(state.behaviors.get(token), MockErc20):
        raise UnknownToken(f"{token} is not a registered MockErc20")
    return ledger


def erc20_balance_of(state: ChainState, token: str, owner: str) -> int:
    return _ledger(state, token).balance_of(to_address(owner))


def erc20_transfer(state: ChainState, token: str, sender: str, recipient: str, amount: int) -> None:
    ledger = _ledger(state, token)
    sender, recipient = to_address(sender), to_address(recipient)
    held = ledger.balance_of(sender)
    if amount < 0 or held < amount:
        raise InsufficientTokenBalance(f"{sender} holds {held} of {token}, needs {amount}")
    ledger.balances[sender] = held - amount
    ledger.balances[recipient] = ledger.balance_of(recipient) + amount


def erc20_mint(state: ChainState, token: str, recipient: str, amount: int) -> None:
    ledger = _ledger(state, token)
    recipient = to_address(recipient)
    ledger.balances[recipient] = ledger.balance_of(recipient) + amount
    ledger.total_supply += amount


# ---------------------------------------------------------------- dispatch

def _resolve(state: ChainState, frame: CallFrame, tracer: Tracer):
    """Pick the behavior that runs for ``frame`` and the address whose code it is."""
    target = is_delegated(state, frame.callee)
    if target is not None:
        record = state.scopes.get(frame.callee)
        if record is not None:
            verdict = guard.enforce_scope(state, frame.callee, record, frame)
            if not verdict.accepted:
                tracer.emit("ScopeBlocked", authority=frame.callee, reason=verdict.reason,
                            caller=frame.caller, depth=frame.depth)
                return None, None
        tracer.emit("DelegationResolved", authority=frame.callee, target=target, depth=frame.depth)
        if int(target, 16) in PRECOMPILE_RANGE:
            return EmptyBehavior(), target
        return state.behaviors.get(target, EmptyBehavior()), target
    behavior = state.behaviors.get(frame.callee)
    return behavior, frame.callee if behavior is not None else None


def _call(state: ChainState, frame: CallFrame, tracer: Tracer) -> bytes:
    if frame.depth > MAX_DEPTH:
        raise DepthExceeded(f"call depth {frame.depth} exceeds {MAX_DEPTH}")
    if frame.depth > 0:
        tracer.internal_calls += 1
    checkpoint = state.checkpoint()
    mark = len(tracer.events)
    try:
        tracer.emit("Call", caller=frame.caller, callee=frame.callee, value=frame.value,
                    depth=frame.depth)
        if frame.value:
            try:
                transfer_value(state, frame.caller, frame.callee, frame.value)
            except InsufficientBalance as exc:
                raise CallReverted(str(exc)) from exc
            tracer.emit("ValueTransfer", **{"from": frame.caller}, to=frame.callee,
                        value=frame.value, depth=frame.depth)
        behavior, code_address = _resolve(state, frame, tracer)
        if behavior is None:
            return b""
        return _run_behavior(state, behavior, code_address, frame, tracer)
    except CallReverted as exc:
        state.rollback(checkpoint)
        del tracer.events[mark:]
        tracer.emit("Revert", callee=frame.callee, reason=type(exc).__name__,
                    detail=str(exc), depth=frame.depth)
        raise


def dispatch_call(state: ChainState, frame: CallFrame, tracer: Optional[Tracer] = None) -> ExecResult:
    """Execute ``frame``; raises CallReverted (state restored) on failure."""
    tracer = tracer if tracer is not None else Tracer()
    mark = len(tracer.events)
    calls_before = tracer.internal_calls
    data = _call(state, frame, tracer)
    return ExecResult(True, data, tracer.events[mark:], tracer.internal_calls - calls_before)


def _run_behavior(state, behavior, code_address, frame, tracer) -> bytes:
    if isinstance(behavior, MaliciousDrainer):
        drainer_fallback(state, frame.callee, behavior, frame, tracer, delegate=code_address)
        return b""
    if isinstance(behavior, MockErc20):
        return _erc20_entry(state, frame, tracer)
    if isinstance(behavior, DummyProtocol):
        return _protocol_entry(state, frame, tracer)
    if isinstance(behavior, RevertingStub):
        raise CallReverted("RevertingStub always reverts")
    return b""


def drainer_fallback(state: ChainState, account: str, behavior: MaliciousDrainer,
                     frame: CallFrame, tracer: Tracer, delegate: Optional[str] = None) -> None:
    """Sweep every watched token, then all ETH, from ``account`` to the sink.

    Individual failures are traced and skipped; the fallback itself never reverts.
    """
    tracer.emit("FallbackExecuted", account=account, delegate=delegate or account,
                caller=frame.caller, depth=frame.depth)
    for token in behavior.watched_tokens:
        try:
            held = erc20_balance_of(state, token, account)
        except UnknownToken as exc:
            tracer.emit("Revert", callee=token, reason="UnknownToken", detail=str(exc),
                        depth=frame.depth + 1)
            continue
        if held == 0:
            continue
        sub = frame.child(account, token, 0, encode_call("transfer(address,uint256)", behavior.sink, held))
        try:
            _call(state, sub, tracer)
        except CallReverted:
            continue
    remaining = state.balance(account)
    try:
        _call(state, frame.child(account, behavior.sink, remaining), tracer)
    except CallReverted:
        pass


def _erc20_entry(state: ChainState, frame: CallFrame, tracer: Tracer) -> bytes:
    token = frame.callee
    data = frame.data
    if data[:4] == TRANSFER_SELECTOR:
        recipient, amount = _arg_address(data, 0), _arg_uint(data, 1)
        erc20_transfer(state, token, frame.caller, recipient, amount)
        tracer.emit("TokenTransfer", token=token, **{"from": frame.caller}, to=recipient,
                    amount=amount, depth=frame.depth)
        return (1).to_bytes(32, "big")
    if data[:4] == BALANCE_OF_SELECTOR:
        return erc20_balance_of(state, token, _arg_address(data, 0)).to_bytes(32, "big")
    if data:
        raise CallReverted("unknown MockErc20 selector")
    return b""


def _protocol_entry(state: ChainState, frame: CallFrame, tracer: Tracer) -> bytes:
    if frame.data[:4] != CALL_TARGET_SELECTOR:
        return b""
    target = _arg_address(frame.data, 0)
    _call(state, frame.child(frame.callee, target, frame.value), tracer)
    return b""


def protocol_call_target(state: ChainState, protocol: str, target: str, value: int,
                         caller: str, tracer: Optional[Tracer] = None) -> ExecResult:
    """DummyProtocol.callTarget(target) invoked by ``caller`` with ``value`` wei."""
    protocol = to_address(protocol)
    if not isinstance(state.behaviors.get(protocol), DummyProtocol):
        raise ValueError(f"{protocol} is not a DummyProtocol")
    data = encode_call("callTarget(address)", target)
    return dispatch_call(state, CallFrame(caller, protocol, value, data), tracer)


def fallback_events(events) -> list:
    return [e for e in events if e.kind == "FallbackExecuted"]
