"""RLP, keccak-256 and the authorization-message / tuple-hex wire formats."""

from __future__ import annotations

import re
from typing import Union

RlpItem = Union[bytes, list]

#: Domain-separation prefix for authorization signing messages.
MAGIC = 0x05

ZERO_ADDRESS = "0x" + "00" * 20
UINT256_MAX = 2**256 - 1

_HEX_RE = re.compile(r"^(0x)?[0-9a-fA-F]*$")


class MalformedRlp(ValueError):
    pass


class MalformedTupleHex(ValueError):
    pass


class InvalidAddress(ValueError):
    pass


def set_magic(value: int) -> None:
    """Override the default MAGIC byte used by :func:`auth_message`."""
    global MAGIC
    if not 0 <= value <= 0xFF:
        raise ValueError("MAGIC must be a single byte")
    MAGIC = value


# ---------------------------------------------------------------- addresses

def to_address(value: Union[str, bytes]) -> str:
    """Normalize a 20-byte address to lowercase ``0x`` hex."""
    if isinstance(value, (bytes, bytearray)):
        if len(value) != 20:
            raise InvalidAddress(f"address must be 20 bytes, got {len(value)}")
        return "0x" + bytes(value).hex()
    if not isinstance(value, str):
        raise InvalidAddress(f"unsupported address type {type(value).__name__}")
    text = value.lower()
    if not text.startswith("0x"):
        text = "0x" + text
    if len(text) != 42 or not _HEX_RE.match(text):
        raise InvalidAddress(f"not a 20-byte hex address: {value!r}")
    return text


def address_bytes(addr: str) -> bytes:
    return bytes.fromhex(to_address(addr)[2:])


# ---------------------------------------------------------------- integers

def int_to_bytes(value: int) -> bytes:
    """Minimal big-endian encoding; zero is the empty string."""
    if value < 0:
        raise ValueError("RLP integers must be non-negative")
    if value == 0:
        return b""
    return value.to_bytes((value.bit_length() + 7) // 8, "big")


def bytes_to_int(data: bytes) -> int:
    return int.from_bytes(data, "big")


# ---------------------------------------------------------------- RLP

def _length_prefix(length: int, offset: int) -> bytes:
    if length < 56:
        return bytes([offset + length])
    encoded = int_to_bytes(length)
    return bytes([offset + 55 + len(encoded)]) + encoded


def rlp_encode(item) -> bytes:
    """Encode a byte string, an int, or a (nested) list of those."""
    if isinstance(item, int) and not isinstance(item, bool):
        item = int_to_bytes(item)
    if isinstance(item, (bytes, bytearray)):
        item = bytes(item)
        if len(item) == 1 and item[0] < 0x80:
            return item
        return _length_prefix(len(item), 0x80) + item
    if isinstance(item, (list, tuple)):
        payload = b"".join(rlp_encode(x) for x in item)
        return _length_prefix(len(payload), 0xC0) + payload
    raise TypeError(f"cannot RLP-encode {type(item).__name__}")


def _decode_length(data: bytes, pos: int, short_base: int, long_base: int):
    """Return (payload_start, payload_length) for the prefix at ``pos``."""
    prefix = data[pos]
    if prefix <= long_base:
        return pos + 1, prefix - short_base
    len_of_len = prefix - long_base
    start = pos + 1
    if start + len_of_len > len(data):
        raise MalformedRlp("truncated length-of-length")
    length_bytes = data[start:start + len_of_len]
    if length_bytes[0] == 0:
        raise MalformedRlp("length has leading zero bytes")
    length = bytes_to_int(length_bytes)
    if length < 56:
        raise MalformedRlp("long form used for a short payload")
    return start + len_of_len, length


def _decode_at(data: bytes, pos: int):
    if pos >= len(data):
        raise MalformedRlp("unexpected end of input")
    prefix = data[pos]
    if prefix < 0x80:
        return data[pos:pos + 1], pos + 1
    if prefix < 0xC0:
        start, length = _decode_length(data, pos, 0x80, 0xB7)
        end = start + length
        if end > len(data):
            raise MalformedRlp("truncated string payload")
        payload = data[start:end]
        if length == 1 and payload[0] < 0x80:
            raise MalformedRlp("single byte below 0x80 must self-encode")
        return payload, end
    start, length = _decode_length(data, pos, 0xC0, 0xF7)
    end = start + length
    if end > len(data):
        raise MalformedRlp("truncated list payload")
    items = []
    cursor = start
    while cursor < end:
        item, cursor = _decode_at(data, cursor)
        if cursor > end:
            raise MalformedRlp("list element overruns list payload")
        items.append(item)
    return items, end


def rlp_decode(data: bytes) -> RlpItem:
    """Decode one canonical RLP item; trailing bytes are an error."""
    data = bytes(data)
    item, end = _decode_at(data, 0)
    if end != len(data):
        raise MalformedRlp(f"{len(data) - end} trailing byte(s)")
    return item


# ---------------------------------------------------------------- keccak

_ROUND_CONSTANTS = [
    0x0000000000000001, 0x0000000000008082, 0x800000000000808A, 0x8000000080008000,
    0x000000000000808B, 0x0000000080000001, 0x8000000080008081, 0x8000000000008009,
    0x000000000000008A, 0x0000000000000088, 0x0000000080008009, 0x000000008000000A,
    0x000000008000808B, 0x800000000000008B, 0x8000000000008089, 0x8000000000008003,
    0x8000000000008002, 0x8000000000000080, 0x000000000000800A, 0x800000008000000A,
    0x8000000080008081, 0x8000000000008080, 0x0000000080000001, 0x8000000080008008,
]

# rotation offsets indexed by x + 5*y
_ROTATIONS = [
    0, 1, 62, 28, 27,
    36, 44, 6, 55, 20,
    3, 10, 43, 25, 39,
    41, 45, 15, 21, 8,
    18, 2, 61, 56, 14,
]

_MASK = (1 << 64) - 1
_RATE = 136  # bytes, for 256-bit output


def _rotl(x: int, n: int) -> int:
    return ((x << n) | (x >> (64 - n))) & _MASK if n else x


def _keccak_f(lanes: list) -> None:
    for rc in _ROUND_CONSTANTS:
        c = [lanes[x] ^ lanes[x + 5] ^ lanes[x + 10] ^ lanes[x + 15] ^ lanes[x + 20]
             for x in range(5)]
        d = [c[(x - 1) % 5] ^ _rotl(c[(x + 1) % 5], 1) for x in range(5)]
        for i in range(25):
            lanes[i] ^= d[i % 5]
        # rho + pi
        b = [0] * 25
        for x in range(5):
            for y in range(5):
                i = x + 5 * y
                b[y + 5 * ((2 * x + 3 * y) % 5)] = _rotl(lanes[i], _ROTATIONS[i])
        # chi
        for y in range(0, 25, 5):
            row = b[y:y + 5]
            for x in range(5):
                lanes[y + x] = row[x] ^ ((~row[(x + 1) % 5]) & row[(x + 2) % 5])
        lanes[0] ^= rc


def keccak256(data: bytes) -> bytes:
    """Original Keccak-256 (0x01 padding), as used by Ethereum."""
    data = bytes(data)
    padded = bytearray(data)
    padded.append(0x01)
    padded.extend(b"\x00" * (-len(padded) % _RATE))
    padded[-1] |= 0x80
    lanes = [0] * 25
    for block in range(0, len(padded), _RATE):
        chunk = padded[block:block + _RATE]
        for i in range(_RATE // 8):
            lanes[i] ^= int.from_bytes(chunk[8 * i:8 * i + 8], "little")
        _keccak_f(lanes)
    return b"".join(lanes[i].to_bytes(8, "little") for i in range(4))


EMPTY_CODE_HASH = keccak256(b"")


# ---------------------------------------------------------------- 7702 wire formats

def auth_message(chain_id: int, target: str, nonce: int, magic: int | None = None) -> bytes:
    """Digest a delegation authorization signs: keccak(MAGIC || rlp([chain_id, target, nonce]))."""
    if chain_id < 0 or nonce < 0:
        raise ValueError("chain_id and nonce must be non-negative")
    prefix = MAGIC if magic is None else magic
    body = rlp_encode([int_to_bytes(chain_id), address_bytes(target), int_to_bytes(nonce)])
    return keccak256(bytes([prefix]) + body)


def hex_to_bytes(text: str) -> bytes:
    text = text.strip()
    if not _HEX_RE.match(text):
        raise ValueError(f"not a hex string: {text[:20]!r}")
    if text[:2] in ("0x", "0X"):
        text = text[2:]
    if len(text) % 2:
        raise ValueError("odd-length hex string")
    return bytes.fromhex(text)


def encode_tuple_hex(tup) -> str:
    """Render an authorization tuple as ``0x``-prefixed hex of its 6-field RLP list."""
    return "0x" + rlp_encode(tup.rlp_fields()).hex()


def _tuple_int(field, name: str, max_bytes: int) -> int:
    if not isinstance(field, bytes):
        raise MalformedTupleHex(f"{name} must be a byte string")
    if len(field) > max_bytes:
        raise MalformedTupleHex(f"{name} exceeds {max_bytes} bytes")
    # leading zeros tolerated: published tuples encode zero as 0x00
    return bytes_to_int(field)


def decode_tuple_hex(text: str):
    from .models import AuthorizationTuple, RecoverableSignature

    try:
        raw = hex_to_bytes(text)
        item = rlp_decode(raw)
    except (ValueError, MalformedRlp) as exc:
        raise MalformedTupleHex(str(exc)) from exc
    if not isinstance(item, list) or len(item) != 6:
        arity = len(item) if isinstance(item, list) else "string"
        raise MalformedTupleHex(f"expected a 6-element list, got {arity}")
    chain_id_f, target_f, nonce_f, y_f, r_f, s_f = item
    if not isinstance(target_f, bytes) or len(target_f) != 20:
        raise MalformedTupleHex("target must be a 20-byte address")
    y_parity = _tuple_int(y_f, "yParity", 1)
    if y_parity > 1:
        raise MalformedTupleHex("yParity must be 0 or 1")
    return AuthorizationTuple(
        chain_id=_tuple_int(chain_id_f, "chainId", 32),
        target=to_address(target_f),
        nonce=_tuple_int(nonce_f, "nonce", 8),
        signature=RecoverableSignature(
            y_parity=y_parity,
            r=_tuple_int(r_f, "r", 32),
            s=_tuple_int(s_f, "s", 32),
        ),
    )


def read_hex_file(path) -> str:
    with open(path, encoding="ascii") as fh:
        return fh.read().strip()


def write_hex_file(path, text: str) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(text.lower() + "\n")
