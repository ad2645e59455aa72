"""Minimal ERC-4337 pipeline: UserOperation, EntryPoint phases, bundler relay, paymaster."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

from . import guard
from .codec import address_bytes, int_to_bytes, keccak256, rlp_encode, to_address
from .execution import CallFrame, CallReverted, ExecResult, Tracer, dispatch_call
from .state import GAS_PRICE, ChainState, InsufficientBalance
from .txproc import CALL_TX_TYPE, DEFAULT_GAS_LIMIT, Receipt, execute_transaction

# Calldata passed to the sender during validation; any delegate fallback accepts it.
VALIDATION_MARKER = bytes.fromhex("3a871cdd")  # validateUserOp selector
BUNDLER_INTRINSIC_GAS = 21_000


class ValidationReverted(CallReverted):
    pass


@dataclass(frozen=True)
class UserOperation:
    sender: str
    op_nonce: int
    call_target: str
    call_value: int = 0
    call_data: bytes = b""
    paymaster: Optional[str] = None
    gas_budget: int = DEFAULT_GAS_LIMIT

    def __post_init__(self):
        object.__setattr__(self, "sender", to_address(self.sender))
        object.__setattr__(self, "call_target", to_address(self.call_target))
        if self.paymaster is not None:
            object.__setattr__(self, "paymaster", to_address(self.paymaster))
        if self.gas_budget <= 0:
            raise ValueError("gas_budget must be positive")
        if self.call_value < 0:
            raise ValueError("call_value must be non-negative")

    def op_hash(self) -> str:
        fields = [
            address_bytes(self.sender),
            int_to_bytes(self.op_nonce),
            address_bytes(self.call_target),
            int_to_bytes(self.call_value),
            bytes(self.call_data),
            address_bytes(self.paymaster) if self.paymaster else b"",
            int_to_bytes(self.gas_budget),
        ]
        return "0x" + keccak256(rlp_encode(fields)).hex()

    def to_dict(self) -> dict:
        return {
            "sender": self.sender,
            "op_nonce": self.op_nonce,
            "call_target": self.call_target,
            "call_value": str(self.call_value),
            "call_data": "0x" + self.call_data.hex(),
            "paymaster": self.paymaster,
            "gas_budget": self.gas_budget,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UserOperation":
        data = d.get("call_data", "0x")
        return cls(
            sender=d["sender"],
            op_nonce=int(d.get("op_nonce", 0)),
            call_target=d["call_target"],
            call_value=int(d.get("call_value", 0)),
            call_data=bytes.fromhex(data[2:] if data.startswith("0x") else data),
            paymaster=d.get("paymaster"),
            gas_budget=int(d.get("gas_budget", DEFAULT_GAS_LIMIT)),
        )


@dataclass
class EntryPointModel:
    address: str
    processed_ops: Counter = field(default_factory=Counter)

    def __post_init__(self):
        self.address = to_address(self.address)

    def next_nonce(self, sender: str) -> int:
        return self.processed_ops[to_address(sender)]


@dataclass(frozen=True)
class PipelineConfig:
    bundler_filter_enabled: bool = False
    paymaster_filter_enabled: bool = False
    entrypoint_static_check_enabled: bool = False
    allowlist: tuple = ()

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        return cls(
            bundler_filter_enabled=bool(d.get("bundler_filter", False)),
            paymaster_filter_enabled=bool(d.get("paymaster_filter", False)),
            entrypoint_static_check_enabled=bool(d.get("entrypoint_check", False)),
            allowlist=tuple(to_address(a) for a in d.get("allowlist", ())),
        )

    @classmethod
    def all_filters(cls) -> "PipelineConfig":
        return cls(True, True, True)


@dataclass
class OpReceipt:
    op_hash: str
    accepted: bool
    stage: str
    reason: Optional[str] = None
    receipt: Optional[Receipt] = None

    @property
    def trace(self):
        return self.receipt.trace if self.receipt is not None else []

    def to_dict(self) -> dict:
        return {
            "op_hash": self.op_hash,
            "accepted": self.accepted,
            "stage": self.stage,
            "reason": self.reason,
            "receipt": self.receipt.to_dict() if self.receipt is not None else None,
        }


def validate_user_op(state: ChainState, entrypoint: EntryPointModel, op: UserOperation,
                     tracer: Optional[Tracer] = None) -> ExecResult:
    """Zero-value call into op.sender; a delegated sender runs its delegate here."""
    tracer = tracer if tracer is not None else Tracer()
    previous, tracer.phase = tracer.phase, "validation"
    try:
        frame = CallFrame(entrypoint.address, op.sender, 0, VALIDATION_MARKER, depth=1)
        return dispatch_call(state, frame, tracer)
    except CallReverted as exc:
        raise ValidationReverted(f"validation of {op.sender} reverted: {exc}") from exc
    finally:
        tracer.phase = previous


def execute_user_op(state: ChainState, entrypoint: EntryPointModel, op: UserOperation,
                    tracer: Optional[Tracer] = None) -> ExecResult:
    tracer = tracer if tracer is not None else Tracer()
    previous, tracer.phase = tracer.phase, "execution"
    try:
        frame = CallFrame(entrypoint.address, op.call_target, op.call_value, op.call_data, depth=1)
        return dispatch_call(state, frame, tracer)
    finally:
        tracer.phase = previous


def _filter(state: ChainState, op: UserOperation, config: PipelineConfig) -> Optional[OpReceipt]:
    if config.bundler_filter_enabled:
        v = guard.bundler_filter(op, state)
        if not v:
            return OpReceipt(op.op_hash(), False, "bundler", v.reason)
    if config.paymaster_filter_enabled:
        v = guard.paymaster_filter(op, state)
        if not v:
            return OpReceipt(op.op_hash(), False, "paymaster", v.reason)
    if config.entrypoint_static_check_enabled:
        v = guard.entrypoint_static_check(op, state, config.allowlist)
        if not v:
            return OpReceipt(op.op_hash(), False, "entrypoint", v.reason)
    return None


def bundler_submit(state: ChainState, entrypoint: EntryPointModel, ops: Sequence[UserOperation],
                   config: Optional[PipelineConfig] = None, *, bundler: str) -> List[OpReceipt]:
    """Relay ``ops`` one transaction each; filters run before any on-chain effect."""
    config = config or PipelineConfig()
    bundler = to_address(bundler)
    out = []
    for op in ops:
        rejected = _filter(state, op, config)
        if rejected is not None:
            out.append(rejected)
            continue
        if op.op_nonce != entrypoint.next_nonce(op.sender):
            out.append(OpReceipt(op.op_hash(), False, "entrypoint", "OpNonceMismatch"))
            continue

        def body(tracer: Tracer, op=op) -> None:
            # the bundler fronts call_value to the EntryPoint, which forwards it
            dispatch_call(state, CallFrame(bundler, entrypoint.address, op.call_value), tracer)
            validate_user_op(state, entrypoint, op, tracer)
            execute_user_op(state, entrypoint, op, tracer)

        receipt = execute_transaction(
            state,
            tx_hash=op.op_hash(),
            tx_type=CALL_TX_TYPE,
            sender=bundler,
            tx_nonce=state.nonce(bundler),
            tx_chain_id=state.chain_id,
            value=op.call_value,
            gas_limit=op.gas_budget,
            max_fee=GAS_PRICE,
            intrinsic_gas=BUNDLER_INTRINSIC_GAS,
            body=body,
        )
        entrypoint.processed_ops[op.sender] += 1
        if op.paymaster is not None:
            try:
                state.debit(op.paymaster, receipt.gas_cost)
                state.credit(bundler, receipt.gas_cost)
            except InsufficientBalance:
                pass
        out.append(OpReceipt(op.op_hash(), receipt.success, "executed",
                             receipt.error, receipt))
    return out


def phase_of_first(events, kind: str) -> Optional[str]:
    for e in events:
        if e.kind == kind:
            return e.get("phase")
    return None


def run_composite_attack(env, call_value: int = 1, criterion=None):
    """Third-party UserOperation routed through a delegated victim; see harness."""
    from .harness import run_composite_attack as run

    return run(env, call_value, criterion)
