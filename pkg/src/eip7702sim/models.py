"""Value types shared by the codec, signing and transaction layers."""

from __future__ import annotations

from dataclasses import dataclass

from .codec import to_address

SECP256K1_N = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141


@dataclass(frozen=True)
class RecoverableSignature:
    y_parity: int
    r: int
    s: int

    @property
    def is_low_s(self) -> bool:
        return self.s <= SECP256K1_N // 2

    def to_dict(self) -> dict:
        return {"y_parity": self.y_parity, "r": hex(self.r), "s": hex(self.s)}


@dataclass(frozen=True)
class AuthorizationTuple:
    """A signed (chain_id, target, nonce) delegation intent."""

    chain_id: int
    target: str
    nonce: int
    signature: RecoverableSignature

    def __post_init__(self):
        object.__setattr__(self, "target", to_address(self.target))
        if self.chain_id < 0 or self.nonce < 0:
            raise ValueError("chain_id and nonce must be non-negative")

    @property
    def y_parity(self) -> int:
        return self.signature.y_parity

    @property
    def r(self) -> int:
        return self.signature.r

    @property
    def s(self) -> int:
        return self.signature.s

    def rlp_fields(self) -> list:
        from .codec import address_bytes, int_to_bytes

        return [
            int_to_bytes(self.chain_id),
            address_bytes(self.target),
            int_to_bytes(self.nonce),
            int_to_bytes(self.y_parity),
            int_to_bytes(self.r),
            int_to_bytes(self.s),
        ]

    def to_dict(self) -> dict:
        return {
            "chain_id": self.chain_id,
            "target": self.target,
            "nonce": self.nonce,
            **self.signature.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AuthorizationTuple":
        def _int(v):
            return int(v, 0) if isinstance(v, str) else int(v)

        return cls(
            chain_id=_int(d["chain_id"]),
            target=d["target"],
            nonce=_int(d["nonce"]),
            signature=RecoverableSignature(
                y_parity=_int(d["y_parity"]), r=_int(d["r"]), s=_int(d["s"])
            ),
        )
