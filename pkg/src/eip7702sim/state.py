"""Per-chain world state: accounts, delegation indicators, token ledgers."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Tuple

from .behaviors import ContractBehavior, behavior_from_dict
from .codec import EMPTY_CODE_HASH, ZERO_ADDRESS, keccak256, to_address

DELEGATION_MARKER = bytes.fromhex("ef0100")
DELEGATION_CODE_LENGTH = 23

WEI_PER_ETH = 10**18
GWEI = 10**9

# Flat deterministic gas model.
FIXED_TX_COST = 21_000
PER_TUPLE_COST = 12_500
FIXED_CALL_COST = 5_000
GAS_PRICE = 10 * GWEI


class InsufficientBalance(ValueError):
    pass


def eth(amount) -> int:
    """Convert an ETH amount (int, str or Decimal) to wei exactly."""
    from decimal import Decimal

    value = Decimal(str(amount)) * WEI_PER_ETH
    if value != value.to_integral_value():
        raise ValueError(f"{amount} ETH is not a whole number of wei")
    return int(value)


def format_eth(wei: int) -> str:
    """Render wei as ETH with 18 decimals."""
    sign = "-" if wei < 0 else ""
    whole, frac = divmod(abs(wei), WEI_PER_ETH)
    return f"{sign}{whole}.{frac:018d}"


@dataclass
class Account:
    nonce: int = 0
    balance: int = 0
    code: bytes = b""


@dataclass
class TokenLedger:
    balances: Dict[str, int] = field(default_factory=dict)
    total_supply: int = 0

    def balance_of(self, owner: str) -> int:
        return self.balances.get(owner, 0)


class ChainState:
    """World state of one chain; all mutation goes through a single writer."""

    def __init__(self, chain_id: int):
        if chain_id < 0:
            raise ValueError("chain_id must be non-negative")
        self._chain_id = chain_id
        self.height = 0
        self.accounts: Dict[str, Account] = {}
        self.token_ledgers: Dict[str, TokenLedger] = {}
        self.behaviors: Dict[str, ContractBehavior] = {}
        self.receipts: list = []
        self.burned_wei = 0
        self.minted_wei = 0
        # guard-layer data; see guard.TuplePolicy / guard.ScopeRecord
        self.policy = None
        self.scopes: dict = {}

    @property
    def chain_id(self) -> int:
        return self._chain_id

    def __repr__(self):
        return f"ChainState(chain_id={self.chain_id}, height={self.height}, accounts={len(self.accounts)})"

    # -- accounts

    def get_account(self, addr: str) -> Account:
        """Read an account; absent accounts read as zero without being created."""
        return self.accounts.get(to_address(addr)) or Account()

    def account(self, addr: str) -> Account:
        addr = to_address(addr)
        acct = self.accounts.get(addr)
        if acct is None:
            acct = self.accounts[addr] = Account()
        return acct

    def balance(self, addr: str) -> int:
        return self.get_account(addr).balance

    def nonce(self, addr: str) -> int:
        return self.get_account(addr).nonce

    def code(self, addr: str) -> bytes:
        return self.get_account(addr).code

    def increment_nonce(self, addr: str) -> int:
        acct = self.account(addr)
        acct.nonce += 1
        return acct.nonce

    def fund(self, addr: str, amount: int) -> None:
        """Genesis-style allocation; tracked so conservation stays checkable."""
        if amount < 0:
            raise ValueError("funding must be non-negative")
        self.account(addr).balance += amount
        self.minted_wei += amount

    def debit(self, addr: str, amount: int) -> None:
        acct = self.account(addr)
        if acct.balance < amount:
            raise InsufficientBalance(
                f"{addr} holds {acct.balance} wei, needs {amount}"
            )
        acct.balance -= amount

    def credit(self, addr: str, amount: int) -> None:
        self.account(addr).balance += amount

    def burn(self, amount: int) -> None:
        self.burned_wei += amount

    def advance_height(self, blocks: int = 1) -> None:
        if blocks < 0:
            raise ValueError("height never decreases")
        self.height += blocks

    # -- conservation helpers

    def total_balance(self) -> int:
        return sum(a.balance for a in self.accounts.values())

    def conserved(self) -> bool:
        return self.total_balance() + self.burned_wei == self.minted_wei

    def token_balance(self, token: str, owner: str) -> int:
        ledger = self.token_ledgers.get(to_address(token))
        return ledger.balance_of(to_address(owner)) if ledger else 0

    # -- checkpoints

    def checkpoint(self):
        return (
            copy.deepcopy(self.accounts),
            copy.deepcopy(self.token_ledgers),
            copy.deepcopy(self.scopes),
        )

    def rollback(self, cp) -> None:
        accounts, ledgers, scopes = cp
        self.accounts = copy.deepcopy(accounts)
        self.token_ledgers = copy.deepcopy(ledgers)
        self.scopes = copy.deepcopy(scopes)

    def snapshot(self) -> "ChainState":
        """Independent deep copy, safe to share read-only."""
        return copy.deepcopy(self)

    # -- serialization

    def to_dict(self, include_receipts: bool = True) -> dict:
        out = {
            "chain_id": self.chain_id,
            "height": self.height,
            "accounts": {
                addr: {
                    "nonce": acct.nonce,
                    "balance_wei": str(acct.balance),
                    "code_hex": "0x" + acct.code.hex(),
                }
                for addr, acct in sorted(self.accounts.items())
            },
            "tokens": {
                token: {
                    "total_supply": str(ledger.total_supply),
                    "balances": {a: str(b) for a, b in sorted(ledger.balances.items())},
                }
                for token, ledger in sorted(self.token_ledgers.items())
            },
            "behaviors": {a: b.to_dict() for a, b in sorted(self.behaviors.items())},
            "burned_wei": str(self.burned_wei),
            "minted_wei": str(self.minted_wei),
            "policy": self.policy.to_dict() if self.policy is not None else None,
            "scopes": {a: s.to_dict() for a, s in sorted(self.scopes.items())},
        }
        if include_receipts:
            out["receipts"] = [r.to_dict() for r in self.receipts]
        return out

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(**kwargs), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ChainState":
        from .guard import ScopeRecord, TuplePolicy
        from .txproc import Receipt

        state = cls(int(d["chain_id"]))
        state.height = int(d["height"])
        for addr, a in d["accounts"].items():
            code_hex = a.get("code_hex", "0x")
            state.accounts[to_address(addr)] = Account(
                nonce=int(a["nonce"]),
                balance=int(a["balance_wei"]),
                code=bytes.fromhex(code_hex[2:] if code_hex.startswith("0x") else code_hex),
            )
        for token, t in d.get("tokens", {}).items():
            state.token_ledgers[to_address(token)] = TokenLedger(
                balances={to_address(k): int(v) for k, v in t["balances"].items()},
                total_supply=int(t["total_supply"]),
            )
        for addr, b in d.get("behaviors", {}).items():
            state.behaviors[to_address(addr)] = behavior_from_dict(b)
        state.burned_wei = int(d.get("burned_wei", 0))
        state.minted_wei = int(d.get("minted_wei", 0))
        if d.get("policy") is not None:
            state.policy = TuplePolicy.from_dict(d["policy"])
        state.scopes = {to_address(a): ScopeRecord.from_dict(s) for a, s in d.get("scopes", {}).items()}
        state.receipts = [Receipt.from_dict(r) for r in d.get("receipts", [])]
        return state

    @classmethod
    def from_json(cls, text: str) -> "ChainState":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------- delegation semantics

def delegation_code(target: str) -> bytes:
    return DELEGATION_MARKER + bytes.fromhex(to_address(target)[2:])


def parse_delegation(code: bytes) -> Optional[str]:
    """Target address if ``code`` is exactly a delegation indicator."""
    if len(code) == DELEGATION_CODE_LENGTH and code[:3] == DELEGATION_MARKER:
        return to_address(code[3:])
    return None


def write_delegation(state: ChainState, authority: str, target: str) -> None:
    target = to_address(target)
    if target == ZERO_ADDRESS:
        raise ValueError("zero target is a revocation; use clear_delegation")
    state.account(authority).code = delegation_code(target)


def clear_delegation(state: ChainState, authority: str) -> None:
    authority = to_address(authority)
    if authority in state.accounts:
        state.accounts[authority].code = b""
    state.scopes.pop(authority, None)


def is_delegated(state: ChainState, addr: str) -> Optional[str]:
    return parse_delegation(state.code(addr))


def active_delegations(state: ChainState) -> Set[Tuple[str, str]]:
    out = set()
    for addr, acct in state.accounts.items():
        target = parse_delegation(acct.code)
        if target is not None:
            out.add((addr, target))
    return out


def code_introspection(state: ChainState, addr: str) -> Tuple[int, bytes]:
    """EXTCODESIZE / EXTCODEHASH over the account's own code field."""
    code = state.code(addr)
    if not code:
        return 0, EMPTY_CODE_HASH
    return len(code), keccak256(code)


def transfer_value(state: ChainState, sender: str, recipient: str, amount: int) -> None:
    if amount < 0:
        raise ValueError("amount must be non-negative")
    sender, recipient = to_address(sender), to_address(recipient)
    if state.balance(sender) < amount:
        raise InsufficientBalance(f"{sender} holds {state.balance(sender)} wei, needs {amount}")
    state.debit(sender, amount)
    state.credit(recipient, amount)
