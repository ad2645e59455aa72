"""Type-0x04 set-code transaction validation and processing.

Order of effects for a set-code transaction: sender nonce increment and gas
purchase, then every authorization tuple (writes persist even if the call
later reverts), then the outer call, then refund of unused gas.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Sequence

from . import guard
from .codec import (
    ZERO_ADDRESS,
    address_bytes,
    auth_message,
    bytes_to_int,
    int_to_bytes,
    keccak256,
    rlp_decode,
    rlp_encode,
    to_address,
)
from .execution import CallFrame, CallReverted, TraceEvent, Tracer, dispatch_call
from .models import AuthorizationTuple, RecoverableSignature
from .signing import NonCanonicalSignature, RecoveryFailure, recover_authority
from .state import (
    FIXED_CALL_COST,
    FIXED_TX_COST,
    GAS_PRICE,
    PER_TUPLE_COST,
    ChainState,
    clear_delegation,
    write_delegation,
)

SET_CODE_TX_TYPE = 0x04
CALL_TX_TYPE = 0x02
DEFAULT_GAS_LIMIT = 100_000
MAX_AUTH_NONCE = 2**64 - 1


class RejectReason(str, Enum):
    CHAIN_MISMATCH = "ChainMismatch"
    NONCE_MISMATCH = "NonceMismatch"
    NON_CANONICAL_SIGNATURE = "NonCanonicalSignature"
    RECOVERY_FAILURE = "RecoveryFailure"
    CHAIN_AGNOSTIC_FORBIDDEN = guard.CHAIN_AGNOSTIC_FORBIDDEN
    UNSCOPED_DELEGATION = guard.UNSCOPED_DELEGATION

    def __str__(self):
        return self.value


POLICY_REASONS = frozenset({RejectReason.CHAIN_AGNOSTIC_FORBIDDEN, RejectReason.UNSCOPED_DELEGATION})


class InvalidTransaction(ValueError):
    pass


class InsufficientGasFunds(InvalidTransaction):
    pass


class EmptyAuthList(InvalidTransaction):
    pass


@dataclass(frozen=True)
class TupleCheck:
    authority: Optional[str]
    reason: Optional[RejectReason] = None

    @property
    def ok(self) -> bool:
        return self.reason is None


@dataclass(frozen=True)
class SetCodeTransaction:
    sender: str
    tx_nonce: int
    to: str
    value: int
    data: bytes
    gas_limit: int
    max_fee: int
    auth_list: tuple
    tx_chain_id: int

    def __post_init__(self):
        object.__setattr__(self, "sender", to_address(self.sender))
        object.__setattr__(self, "to", to_address(self.to))
        object.__setattr__(self, "auth_list", tuple(self.auth_list))

    tx_type = SET_CODE_TX_TYPE

    def rlp_fields(self) -> list:
        return [
            address_bytes(self.sender),
            int_to_bytes(self.tx_nonce),
            address_bytes(self.to),
            int_to_bytes(self.value),
            bytes(self.data),
            int_to_bytes(self.gas_limit),
            int_to_bytes(self.max_fee),
            [t.rlp_fields() for t in self.auth_list],
            int_to_bytes(self.tx_chain_id),
        ]

    @property
    def tx_hash(self) -> str:
        return "0x" + keccak256(rlp_encode(self.rlp_fields())).hex()


@dataclass(frozen=True)
class CallTransaction:
    """An ordinary (non set-code) transaction."""

    sender: str
    tx_nonce: int
    to: str
    value: int = 0
    data: bytes = b""
    gas_limit: int = DEFAULT_GAS_LIMIT
    max_fee: int = GAS_PRICE
    tx_chain_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "sender", to_address(self.sender))
        object.__setattr__(self, "to", to_address(self.to))

    tx_type = CALL_TX_TYPE

    def rlp_fields(self) -> list:
        return [
            address_bytes(self.sender),
            int_to_bytes(self.tx_nonce),
            address_bytes(self.to),
            int_to_bytes(self.value),
            bytes(self.data),
            int_to_bytes(self.gas_limit),
            int_to_bytes(self.max_fee),
            int_to_bytes(self.tx_chain_id),
        ]

    @property
    def tx_hash(self) -> str:
        return "0x" + keccak256(bytes([CALL_TX_TYPE]) + rlp_encode(self.rlp_fields())).hex()


@dataclass
class TupleOutcome:
    authority: Optional[str]
    target: str
    accepted: bool
    reject_reason: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "authority": self.authority,
            "target": self.target,
            "accepted": self.accepted,
            "reject_reason": self.reject_reason,
        }


@dataclass
class Receipt:
    tx_hash: str
    success: bool
    tuples_applied: List[TupleOutcome]
    gas_used: int
    trace: List[TraceEvent]
    sender: str = ZERO_ADDRESS
    block_height: int = 0
    tx_type: int = CALL_TX_TYPE
    error: Optional[str] = None

    @property
    def gas_cost(self) -> int:
        return self.gas_used * GAS_PRICE

    def to_dict(self) -> dict:
        return {
            "tx_hash": self.tx_hash,
            "tx_type": self.tx_type,
            "sender": self.sender,
            "block_height": self.block_height,
            "success": self.success,
            "error": self.error,
            "gas_used": self.gas_used,
            "gas_cost_wei": str(self.gas_cost),
            "tuples_applied": [t.to_dict() for t in self.tuples_applied],
            "trace": [e.to_dict() for e in self.trace],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Receipt":
        return cls(
            tx_hash=d["tx_hash"],
            success=d["success"],
            tuples_applied=[TupleOutcome(**t) for t in d["tuples_applied"]],
            gas_used=int(d["gas_used"]),
            trace=[TraceEvent.from_dict(e) for e in d["trace"]],
            sender=d["sender"],
            block_height=int(d["block_height"]),
            tx_type=int(d["tx_type"]),
            error=d.get("error"),
        )


# ---------------------------------------------------------------- serialization

def encode_transaction(tx: SetCodeTransaction) -> bytes:
    return bytes([SET_CODE_TX_TYPE]) + rlp_encode(tx.rlp_fields())


def _tuple_from_fields(f: list) -> AuthorizationTuple:
    chain_id, target, nonce, y, r, s = f
    return AuthorizationTuple(
        chain_id=bytes_to_int(chain_id),
        target=to_address(target),
        nonce=bytes_to_int(nonce),
        signature=RecoverableSignature(bytes_to_int(y), bytes_to_int(r), bytes_to_int(s)),
    )


def decode_transaction(raw: bytes) -> SetCodeTransaction:
    if not raw or raw[0] != SET_CODE_TX_TYPE:
        raise InvalidTransaction("not a type-0x04 transaction")
    fields = rlp_decode(raw[1:])
    if not isinstance(fields, list) or len(fields) != 9:
        raise InvalidTransaction("set-code transaction must have 9 fields")
    sender, nonce, to, value, data, gas_limit, max_fee, auth, chain_id = fields
    return SetCodeTransaction(
        sender=to_address(sender),
        tx_nonce=bytes_to_int(nonce),
        to=to_address(to),
        value=bytes_to_int(value),
        data=data,
        gas_limit=bytes_to_int(gas_limit),
        max_fee=bytes_to_int(max_fee),
        auth_list=tuple(_tuple_from_fields(t) for t in auth),
        tx_chain_id=bytes_to_int(chain_id),
    )


# ---------------------------------------------------------------- tuple validation

def validate_tuple(tup: AuthorizationTuple, state: ChainState) -> TupleCheck:
    """Chain binding, canonical signature, recovery, then nonce freshness. Never raises."""
    if tup.chain_id != 0 and tup.chain_id != state.chain_id:
        return TupleCheck(None, RejectReason.CHAIN_MISMATCH)
    if tup.nonce >= MAX_AUTH_NONCE:
        return TupleCheck(None, RejectReason.NONCE_MISMATCH)
    digest = auth_message(tup.chain_id, tup.target, tup.nonce)
    try:
        authority = recover_authority(digest, tup.signature)
    except NonCanonicalSignature:
        return TupleCheck(None, RejectReason.NON_CANONICAL_SIGNATURE)
    except (RecoveryFailure, ValueError):
        return TupleCheck(None, RejectReason.RECOVERY_FAILURE)
    if state.nonce(authority) != tup.nonce:
        return TupleCheck(authority, RejectReason.NONCE_MISMATCH)
    return TupleCheck(authority)


def _apply_tuples(state: ChainState, auth_list, extensions, tracer: Tracer) -> List[TupleOutcome]:
    outcomes = []
    tracer.emit("AuthorizationListExtracted", count=len(auth_list), depth=0)
    for i, tup in enumerate(auth_list):
        ext = extensions[i] if extensions is not None else None
        verdict = guard.admit_tuple(tup, ext, state.policy, state)
        if not verdict.accepted:
            outcomes.append(TupleOutcome(None, tup.target, False, verdict.reason))
            continue
        check = validate_tuple(tup, state)
        if not check.ok:
            outcomes.append(TupleOutcome(check.authority, tup.target, False, check.reason.value))
            continue
        authority = check.authority
        tracer.emit("SignatureVerified", signer=authority, depth=0)
        if tup.target == ZERO_ADDRESS:
            clear_delegation(state, authority)
        else:
            write_delegation(state, authority, tup.target)
            if verdict.scope is not None:
                state.scopes[authority] = verdict.scope
            else:
                state.scopes.pop(authority, None)
        state.increment_nonce(authority)
        tracer.emit("DelegationWritten", authority=authority, target=tup.target, depth=0)
        outcomes.append(TupleOutcome(authority, tup.target, True))
    return outcomes


# ---------------------------------------------------------------- transaction engine

def execute_transaction(
    state: ChainState,
    *,
    tx_hash: str,
    tx_type: int,
    sender: str,
    tx_nonce: int,
    tx_chain_id: int,
    value: int,
    gas_limit: int,
    max_fee: int,
    intrinsic_gas: int,
    body: Callable[[Tracer], None],
    preprocess: Optional[Callable[[Tracer], List[TupleOutcome]]] = None,
) -> Receipt:
    """Shared engine: pre-checks, nonce, gas escrow, preprocessing, body, refund, block."""
    sender = to_address(sender)
    if tx_chain_id != state.chain_id:
        raise InvalidTransaction(f"transaction chain id {tx_chain_id} != {state.chain_id}")
    if tx_nonce != state.nonce(sender):
        raise InvalidTransaction(f"tx nonce {tx_nonce} != account nonce {state.nonce(sender)}")
    if max_fee < GAS_PRICE:
        raise InvalidTransaction("max_fee below the chain gas price")
    if gas_limit < intrinsic_gas:
        raise InvalidTransaction(f"gas limit {gas_limit} below intrinsic cost {intrinsic_gas}")
    if state.balance(sender) < gas_limit * max_fee + value:
        raise InsufficientGasFunds(f"{sender} cannot fund gas_limit * max_fee + value")

    state.increment_nonce(sender)
    escrow = gas_limit * GAS_PRICE
    state.debit(sender, escrow)

    tracer = Tracer()
    outcomes = preprocess(tracer) if preprocess is not None else []

    checkpoint = state.checkpoint()
    mark = len(tracer.events)
    success, error = True, None
    try:
        body(tracer)
    except CallReverted as exc:
        success, error = False, f"{type(exc).__name__}: {exc}"

    gas_used = intrinsic_gas + FIXED_CALL_COST * tracer.internal_calls
    if gas_used > gas_limit:
        if success:
            state.rollback(checkpoint)
            del tracer.events[mark:]
            tracer.emit("Revert", callee=sender, reason="OutOfGas", detail="", depth=0)
        success, error = False, "OutOfGas"
        gas_used = gas_limit

    state.credit(sender, escrow - gas_used * GAS_PRICE)
    state.burn(gas_used * GAS_PRICE)
    state.height += 1
    receipt = Receipt(
        tx_hash=tx_hash,
        success=success,
        tuples_applied=outcomes,
        gas_used=gas_used,
        trace=tracer.events,
        sender=sender,
        block_height=state.height,
        tx_type=tx_type,
        error=error,
    )
    state.receipts.append(receipt)
    return receipt


def process_set_code_tx(tx: SetCodeTransaction, state: ChainState,
                        extensions: Optional[Sequence] = None,
                        allow_empty: bool = False) -> Receipt:
    """Process a set-code transaction; ``extensions`` carries per-tuple scope metadata."""
    if not tx.auth_list and not allow_empty:
        raise EmptyAuthList("set-code transaction carries no authorization tuples")
    if extensions is not None and len(extensions) != len(tx.auth_list):
        raise ValueError("extensions must align with auth_list")

    def body(tracer: Tracer) -> None:
        dispatch_call(state, CallFrame(tx.sender, tx.to, tx.value, tx.data), tracer)

    return execute_transaction(
        state,
        tx_hash=tx.tx_hash,
        tx_type=SET_CODE_TX_TYPE,
        sender=tx.sender,
        tx_nonce=tx.tx_nonce,
        tx_chain_id=tx.tx_chain_id,
        value=tx.value,
        gas_limit=tx.gas_limit,
        max_fee=tx.max_fee,
        intrinsic_gas=FIXED_TX_COST + PER_TUPLE_COST * len(tx.auth_list),
        body=body,
        preprocess=lambda tracer: _apply_tuples(state, tx.auth_list, extensions, tracer),
    )


def process_transaction(tx: CallTransaction, state: ChainState) -> Receipt:
    def body(tracer: Tracer) -> None:
        dispatch_call(state, CallFrame(tx.sender, tx.to, tx.value, tx.data), tracer)

    return execute_transaction(
        state,
        tx_hash=tx.tx_hash,
        tx_type=CALL_TX_TYPE,
        sender=tx.sender,
        tx_nonce=tx.tx_nonce,
        tx_chain_id=tx.tx_chain_id,
        value=tx.value,
        gas_limit=tx.gas_limit,
        max_fee=tx.max_fee,
        intrinsic_gas=FIXED_TX_COST,
        body=body,
    )


def send_call(state: ChainState, sender: str, to: str, value: int = 0, data: bytes = b"",
              gas_limit: int = DEFAULT_GAS_LIMIT) -> Receipt:
    """Build and process a call transaction with the sender's current nonce."""
    tx = CallTransaction(sender=sender, tx_nonce=state.nonce(sender), to=to, value=value,
                         data=data, gas_limit=gas_limit, tx_chain_id=state.chain_id)
    return process_transaction(tx, state)


@dataclass(frozen=True)
class OuterCall:
    to: Optional[str] = None
    value: int = 0
    data: bytes = b""
    gas_limit: int = DEFAULT_GAS_LIMIT
    max_fee: int = GAS_PRICE


def build_auth_tx(sender: str, tuple_list: Sequence[AuthorizationTuple],
                  outer_call_spec: Optional[OuterCall] = None, *, tx_nonce: int = 0,
                  chain_id: int, require_tuples: bool = True) -> SetCodeTransaction:
    """Assemble a type-0x04 transaction; the outer call defaults to a self-call."""
    if require_tuples and not tuple_list:
        raise EmptyAuthList("at least one authorization tuple is required")
    spec = outer_call_spec or OuterCall()
    return SetCodeTransaction(
        sender=sender,
        tx_nonce=tx_nonce,
        to=spec.to if spec.to is not None else sender,
        value=spec.value,
        data=spec.data,
        gas_limit=spec.gas_limit,
        max_fee=spec.max_fee,
        auth_list=tuple(tuple_list),
        tx_chain_id=chain_id,
    )
