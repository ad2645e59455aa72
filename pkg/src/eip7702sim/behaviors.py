"""Native contract behaviors that stand in for deployed bytecode."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Tuple

from .codec import keccak256, to_address


@dataclass(frozen=True)
class ContractBehavior:
    @property
    def kind(self) -> str:
        return type(self).__name__

    def marker_code(self) -> bytes:
        """32-byte blob stored in the code slot of the hosting account."""
        return keccak256(b"eip7702sim-behavior:" + self.kind.encode())

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out


@dataclass(frozen=True)
class MaliciousDrainer(ContractBehavior):
    """Fallback that sweeps watched tokens and all ETH of the executing account to ``sink``."""

    sink: str
    watched_tokens: Tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "sink", to_address(self.sink))
        object.__setattr__(
            self, "watched_tokens", tuple(to_address(t) for t in self.watched_tokens)
        )


@dataclass(frozen=True)
class MockErc20(ContractBehavior):
    symbol: str = "MOCK"
    decimals: int = 18


@dataclass(frozen=True)
class DummyProtocol(ContractBehavior):
    """Exposes callTarget(address): forwards msg.value to the target with a low-level call."""


@dataclass(frozen=True)
class RevertingStub(ContractBehavior):
    pass


@dataclass(frozen=True)
class EmptyBehavior(ContractBehavior):
    pass


BEHAVIOR_KINDS = {
    cls.__name__: cls
    for cls in (MaliciousDrainer, MockErc20, DummyProtocol, RevertingStub, EmptyBehavior)
}


def behavior_from_dict(d: dict) -> ContractBehavior:
    d = dict(d)
    cls = BEHAVIOR_KINDS[d.pop("kind")]
    if "watched_tokens" in d:
        d["watched_tokens"] = tuple(d["watched_tokens"])
    return cls(**d)
