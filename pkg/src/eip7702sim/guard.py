"""Defenses: delegation scanning, tuple admission, scope enforcement, 4337 filters."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional

from .codec import to_address
from .state import ChainState, clear_delegation, is_delegated, parse_delegation

CHAIN_AGNOSTIC_FORBIDDEN = "ChainAgnosticForbidden"
UNSCOPED_DELEGATION = "UnscopedDelegation"
DELEGATION_EXPIRED = "DelegationExpired"
NOT_FOREGROUND = "NotForeground"
SCOPE_CONSUMED = "SingleUseConsumed"
DELEGATED_SENDER = "DelegatedSender"
DELEGATED_TARGET = "DelegatedTarget"
SPONSORSHIP_REFUSED = "SponsorshipRefused"
NOT_A_WALLET = "DelegateNotAllowlisted"


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    reason: Optional[str] = None
    scope: Optional["ScopeRecord"] = None

    @classmethod
    def accept(cls, scope=None) -> "Verdict":
        return cls(True, None, scope)

    @classmethod
    def reject(cls, reason: str) -> "Verdict":
        return cls(False, reason)

    def __bool__(self):
        return self.accepted


@dataclass(frozen=True)
class TuplePolicy:
    forbid_chain_agnostic: bool = False
    require_scope: bool = False
    max_delegation_lifetime: Optional[int] = None
    single_use: bool = False
    foreground_only: bool = False

    def __post_init__(self):
        if self.max_delegation_lifetime is not None and self.max_delegation_lifetime <= 0:
            raise ValueError("max_delegation_lifetime must be positive")

    @property
    def imposes_scope(self) -> bool:
        return self.single_use or self.foreground_only or self.max_delegation_lifetime is not None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TuplePolicy":
        lifetime = d.get("max_delegation_lifetime", d.get("expiry_blocks"))
        return cls(
            forbid_chain_agnostic=bool(d.get("forbid_chain_agnostic", False)),
            require_scope=bool(d.get("require_scope", False)),
            max_delegation_lifetime=int(lifetime) if lifetime else None,
            single_use=bool(d.get("single_use", False)),
            foreground_only=bool(d.get("foreground_only", False)),
        )


@dataclass(frozen=True)
class ScopedTupleExtension:
    """Client-side scope metadata submitted alongside (not inside) a signed tuple."""

    expiry_height: Optional[int] = None
    single_use: bool = False
    foreground_only: bool = False


@dataclass
class ScopeRecord:
    expiry_height: Optional[int] = None
    single_use: bool = False
    foreground_only: bool = False
    uses: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScopeRecord":
        return cls(**d)


def scan_code(code: bytes) -> Optional[str]:
    return parse_delegation(code)


def admit_tuple(tup, extension: Optional[ScopedTupleExtension], policy: Optional[TuplePolicy],
                state: ChainState) -> Verdict:
    """Apply client admission rules; on accept, ``verdict.scope`` is what dispatch must enforce."""
    policy = policy or TuplePolicy()
    if policy.forbid_chain_agnostic and tup.chain_id == 0:
        return Verdict.reject(CHAIN_AGNOSTIC_FORBIDDEN)
    if policy.require_scope and extension is None:
        return Verdict.reject(UNSCOPED_DELEGATION)
    if extension is None and not policy.imposes_scope:
        return Verdict.accept()
    ext = extension or ScopedTupleExtension()
    expiry = ext.expiry_height
    if policy.max_delegation_lifetime is not None:
        cap = state.height + policy.max_delegation_lifetime
        expiry = cap if expiry is None else min(expiry, cap)
    return Verdict.accept(ScopeRecord(
        expiry_height=expiry,
        single_use=ext.single_use or policy.single_use,
        foreground_only=ext.foreground_only or policy.foreground_only,
    ))


def enforce_scope(state: ChainState, authority: str, record: ScopeRecord, frame) -> Verdict:
    """Decide whether a delegated dispatch into ``authority`` may run its delegate."""
    authority = to_address(authority)
    if record.expiry_height is not None and record.expiry_height < state.height:
        clear_delegation(state, authority)
        return Verdict.reject(DELEGATION_EXPIRED)
    if record.foreground_only and frame.caller != authority:
        return Verdict.reject(NOT_FOREGROUND)
    if record.single_use:
        if record.uses >= 1:
            return Verdict.reject(SCOPE_CONSUMED)
        record.uses += 1
    return Verdict.accept()


# ---------------------------------------------------------------- 4337 pipeline filters

def bundler_filter(op, state: ChainState) -> Verdict:
    if is_delegated(state, op.sender) is not None:
        return Verdict.reject(DELEGATED_SENDER)
    if is_delegated(state, op.call_target) is not None:
        return Verdict.reject(DELEGATED_TARGET)
    return Verdict.accept()


def paymaster_filter(op, state: ChainState) -> Verdict:
    if op.paymaster is None:
        return Verdict.accept()
    if is_delegated(state, op.sender) is not None or is_delegated(state, op.call_target) is not None:
        return Verdict.reject(SPONSORSHIP_REFUSED)
    return Verdict.accept()


def entrypoint_static_check(op, state: ChainState, allowlist: Iterable[str] = ()) -> Verdict:
    target = is_delegated(state, op.sender)
    if target is None:
        return Verdict.accept()
    if target in {to_address(a) for a in allowlist}:
        return Verdict.accept()
    return Verdict.reject(NOT_A_WALLET)


# ---------------------------------------------------------------- defense matrix

FLOWS = ("A", "B", "C", "composite")
MITIGATIONS = (
    "chain_agnostic_ban",
    "require_scope",
    "foreground_only",
    "expiry",
    "bundler_filter",
    "paymaster_filter",
)

# Policy fragment enabling each single mitigation. The expiry window is shorter
# than the dormancy the matrix flows wait before triggering.
MITIGATION_CONFIGS = {
    "chain_agnostic_ban": {"forbid_chain_agnostic": True},
    "require_scope": {"require_scope": True},
    "foreground_only": {"foreground_only": True},
    "expiry": {"expiry_blocks": 5},
    "bundler_filter": {"bundler_filter": True},
    "paymaster_filter": {"paymaster_filter": True},
    "entrypoint_check": {"entrypoint_check": True},
}

B, D = "blocked", "drained"

# Outcome of each attack flow (chain-specific phished tuple, no scope metadata,
# dormancy before the trigger) with exactly one mitigation enabled.
DEFENSE_MATRIX = {
    None:                 {"A": D, "B": D, "C": D, "composite": D},
    "chain_agnostic_ban": {"A": D, "B": D, "C": D, "composite": D},
    "require_scope":      {"A": B, "B": B, "C": B, "composite": B},
    "foreground_only":    {"A": D, "B": B, "C": B, "composite": B},
    "expiry":             {"A": B, "B": B, "C": B, "composite": B},
    "bundler_filter":     {"A": D, "B": D, "C": D, "composite": B},
    "paymaster_filter":   {"A": D, "B": D, "C": D, "composite": B},
    "entrypoint_check":   {"A": D, "B": D, "C": D, "composite": B},
}

POLICY_PRESETS = {
    "permissive": {},
    "strict": {
        "forbid_chain_agnostic": True,
        "require_scope": True,
        "foreground_only": True,
        "bundler_filter": True,
        "paymaster_filter": True,
        "entrypoint_check": True,
    },
    "all-filters": {"bundler_filter": True, "paymaster_filter": True, "entrypoint_check": True},
    **{name.replace("_", "-"): cfg for name, cfg in MITIGATION_CONFIGS.items()},
}


def enabled_mitigations(config: dict) -> set:
    """Which matrix mitigations a policy dict turns on."""
    on = set()
    for name, fragment in MITIGATION_CONFIGS.items():
        if all(config.get(k) for k in fragment):
            on.add(name)
    if config.get("max_delegation_lifetime"):
        on.add("expiry")
    return on


def expected_outcome(flow: str, config: dict) -> str:
    """Documented outcome of ``flow`` under a policy dict (blocked if any mitigation blocks)."""
    outcomes = [DEFENSE_MATRIX[m][flow] for m in enabled_mitigations(config)]
    return B if B in outcomes else D
