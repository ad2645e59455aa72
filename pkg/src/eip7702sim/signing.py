"""secp256k1 ECDSA with public-key recovery.

Points are handled in Jacobian coordinates; nonces follow RFC 6979 with
HMAC-SHA256, so the same (key, digest) always yields the same signature.
"""

from __future__ import annotations

import hashlib
from functools import lru_cache
import hmac
import threading
from collections import Counter
from typing import Optional, Tuple, Union

from .codec import auth_message, keccak256, to_address
from .models import SECP256K1_N as N
from .models import AuthorizationTuple, RecoverableSignature

P = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEFFFFFC2F
GX = 0x79BE667EF9DCBBAC55A06295CE870B07029BFCDB2DCE28D959F2815B16F81798
GY = 0x483ADA7726A3C4655DA4FBFC0E1108A8FD17B448A68554199C47D08FFB10D4B8
HALF_N = N // 2

# Hardhat / anvil deterministic accounts from the "test test ... junk" mnemonic.
DEVNET_KEYS = (
    "0xac0974bec39a17e36ba4a6b4d238ff944bacb478cbed5efcae784d7bf4f2ff80",
    "0x59c6995e998f97a5a0044966f0945389dc9e86dae88c7a8412f4603b6b78690d",
    "0x5de4111afa1a4b94908f83103eb1f1706367c2e68ca870fc3fb9a804cdab365a",
    "0x7c852118294e51e653712a81e05800f419141751be58f605c371e15141b007a6",
)
VICTIM_KEY = DEVNET_KEYS[0]
ATTACKER_KEY = DEVNET_KEYS[1]


class InvalidKey(ValueError):
    pass


class NonCanonicalSignature(ValueError):
    pass


class RecoveryFailure(ValueError):
    pass


# Per-address count of signatures produced; lets callers prove a key stayed idle.
sign_counts: Counter = Counter()
_sign_lock = threading.Lock()

JacobianPoint = Tuple[int, int, int]
_INFINITY: JacobianPoint = (0, 1, 0)


def _inv(a: int, m: int) -> int:
    return pow(a, -1, m)


def _to_jacobian(x: int, y: int) -> JacobianPoint:
    return (x, y, 1)


def _from_jacobian(p: JacobianPoint) -> Optional[Tuple[int, int]]:
    x, y, z = p
    if z == 0:
        return None
    zinv = _inv(z, P)
    zinv2 = zinv * zinv % P
    return x * zinv2 % P, y * zinv2 * zinv % P


def _double(p: JacobianPoint) -> JacobianPoint:
    x, y, z = p
    if z == 0 or y == 0:
        return _INFINITY
    ysq = y * y % P
    s = 4 * x * ysq % P
    m = 3 * x * x % P
    nx = (m * m - 2 * s) % P
    ny = (m * (s - nx) - 8 * ysq * ysq) % P
    nz = 2 * y * z % P
    return nx, ny, nz


def _add(p: JacobianPoint, q: JacobianPoint) -> JacobianPoint:
    if p[2] == 0:
        return q
    if q[2] == 0:
        return p
    x1, y1, z1 = p
    x2, y2, z2 = q
    z1sq, z2sq = z1 * z1 % P, z2 * z2 % P
    u1, u2 = x1 * z2sq % P, x2 * z1sq % P
    s1, s2 = y1 * z2sq * z2 % P, y2 * z1sq * z1 % P
    if u1 == u2:
        if s1 != s2:
            return _INFINITY
        return _double(p)
    h = u2 - u1
    r = s2 - s1
    h2 = h * h % P
    h3 = h * h2 % P
    u1h2 = u1 * h2 % P
    nx = (r * r - h3 - 2 * u1h2) % P
    ny = (r * (u1h2 - nx) - s1 * h3) % P
    nz = h * z1 * z2 % P
    return nx, ny, nz


def _mul(p: JacobianPoint, k: int) -> JacobianPoint:
    result = _INFINITY
    addend = p
    while k:
        if k & 1:
            result = _add(result, addend)
        addend = _double(addend)
        k >>= 1
    return result


_G = _to_jacobian(GX, GY)


def _key_scalar(key: Union[str, bytes, int]) -> int:
    if isinstance(key, int):
        d = key
    else:
        if isinstance(key, str):
            text = key[2:] if key[:2] in ("0x", "0X") else key
            if len(text) != 64:
                raise InvalidKey("private key must be 32 bytes of hex")
            try:
                key = bytes.fromhex(text)
            except ValueError as exc:
                raise InvalidKey(str(exc)) from exc
        if len(key) != 32:
            raise InvalidKey("private key must be 32 bytes")
        d = int.from_bytes(key, "big")
    if not 0 < d < N:
        raise InvalidKey("private key scalar out of range")
    return d


def public_key(key) -> Tuple[int, int]:
    return _from_jacobian(_mul(_G, _key_scalar(key)))


def pubkey_to_address(x: int, y: int) -> str:
    return to_address(keccak256(x.to_bytes(32, "big") + y.to_bytes(32, "big"))[-20:])


@lru_cache(maxsize=256)
def _address_of_scalar(d: int) -> str:
    return pubkey_to_address(*_from_jacobian(_mul(_G, d)))


def derive_address(key) -> str:
    """Last 20 bytes of keccak256 over the 64-byte uncompressed public key."""
    return _address_of_scalar(_key_scalar(key))


KEY_NAMES = {
    "victim": DEVNET_KEYS[0],
    "attacker": DEVNET_KEYS[1],
    **{f"dev{i}": k for i, k in enumerate(DEVNET_KEYS)},
}


def resolve_key(key) -> str:
    """Fixture name (victim, attacker, dev0..dev3) or hex key -> normalized hex key."""
    if isinstance(key, str) and key in KEY_NAMES:
        return KEY_NAMES[key]
    return "0x" + _key_scalar(key).to_bytes(32, "big").hex()


def _rfc6979_nonces(d: int, digest: bytes):
    x = d.to_bytes(32, "big")
    h1 = (int.from_bytes(digest, "big") % N).to_bytes(32, "big")
    v = b"\x01" * 32
    k = b"\x00" * 32
    k = hmac.new(k, v + b"\x00" + x + h1, hashlib.sha256).digest()
    v = hmac.new(k, v, hashlib.sha256).digest()
    k = hmac.new(k, v + b"\x01" + x + h1, hashlib.sha256).digest()
    v = hmac.new(k, v, hashlib.sha256).digest()
    while True:
        v = hmac.new(k, v, hashlib.sha256).digest()
        candidate = int.from_bytes(v, "big")
        if 0 < candidate < N:
            yield candidate
        k = hmac.new(k, v + b"\x00", hashlib.sha256).digest()
        v = hmac.new(k, v, hashlib.sha256).digest()


def sign_digest(key, digest: bytes) -> RecoverableSignature:
    """Deterministic low-s signature over a 32-byte digest."""
    if len(digest) != 32:
        raise ValueError("digest must be 32 bytes")
    d = _key_scalar(key)
    z = int.from_bytes(digest, "big")
    for k in _rfc6979_nonces(d, digest):
        rx, ry = _from_jacobian(_mul(_G, k))
        r = rx % N
        if r == 0:
            continue
        s = _inv(k, N) * (z + r * d) % N
        if s == 0:
            continue
        y_parity = (ry & 1) | (2 if rx >= N else 0)
        if s > HALF_N:
            s = N - s
            y_parity ^= 1
        if y_parity > 1:
            # r overflowed the group order; not representable with a 1-bit parity
            continue
        with _sign_lock:
            sign_counts[derive_address(d)] += 1
        return RecoverableSignature(y_parity=y_parity, r=r, s=s)


def _lift_x(x: int, odd: int) -> Tuple[int, int]:
    alpha = (pow(x, 3, P) + 7) % P
    beta = pow(alpha, (P + 1) // 4, P)
    if beta * beta % P != alpha:
        raise RecoveryFailure("r is not the x-coordinate of a curve point")
    y = beta if beta % 2 == odd else P - beta
    return x, y


def recover_authority(digest: bytes, sig: RecoverableSignature) -> str:
    """Recover the signer address; high-s signatures are refused."""
    if len(digest) != 32:
        raise ValueError("digest must be 32 bytes")
    if sig.y_parity not in (0, 1):
        raise RecoveryFailure("y_parity must be 0 or 1")
    if not (0 < sig.r < N) or not (0 < sig.s < N):
        raise RecoveryFailure("r or s out of range")
    if sig.s > HALF_N:
        raise NonCanonicalSignature("s is in the upper half of the group order")
    rx, ry = _lift_x(sig.r, sig.y_parity)
    z = int.from_bytes(digest, "big") % N
    rinv = _inv(sig.r, N)
    # Q = r^-1 (sR - zG)
    sr = _mul(_to_jacobian(rx, ry), sig.s)
    zg = _mul(_G, (N - z) % N)
    q = _mul(_add(sr, zg), rinv)
    point = _from_jacobian(q)
    if point is None:
        raise RecoveryFailure("recovered point at infinity")
    return pubkey_to_address(*point)


def sign_authorization(key, chain_id: int, target: str, nonce: int) -> AuthorizationTuple:
    """Sign auth_message(chain_id, target, nonce) and wrap it as a tuple."""
    sig = sign_digest(key, auth_message(chain_id, target, nonce))
    return AuthorizationTuple(chain_id=chain_id, target=target, nonce=nonce, signature=sig)


def tuple_authority(tup: AuthorizationTuple) -> str:
    return recover_authority(auth_message(tup.chain_id, tup.target, tup.nonce), tup.signature)
