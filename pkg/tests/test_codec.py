import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eip7702sim.codec import (
    EMPTY_CODE_HASH,
    MAGIC,
    InvalidAddress,
    MalformedRlp,
    MalformedTupleHex,
    auth_message,
    decode_tuple_hex,
    encode_tuple_hex,
    int_to_bytes,
    keccak256,
    read_hex_file,
    rlp_decode,
    rlp_encode,
    to_address,
    write_hex_file,
)
from eip7702sim.signing import VICTIM_KEY, sign_authorization

from oracles import (
    CROSSCHAIN_DRAINER,
    KECCAK_ABC,
    KECCAK_EMPTY,
    REFERENCE_TUPLE_HEX,
    REFERENCE_TUPLE_R,
    REFERENCE_TUPLE_S,
    ref_keccak,
    ref_rlp_decode,
    ref_rlp_encode,
)

rlp_items = st.recursive(
    st.binary(max_size=80),
    lambda children: st.lists(children, max_size=6),
    max_leaves=20,
)


def random_item(rng, depth=0):
    if depth < 3 and rng.random() < 0.3:
        return [random_item(rng, depth + 1) for _ in range(rng.randrange(0, 5))]
    size = rng.choice([0, 1, 1, 2, 20, 32, 55, 56, 57, 200, 1100])
    return bytes(rng.getrandbits(8) for _ in range(size))


class TestKeccak:
    def test_known_vectors(self):
        assert keccak256(b"").hex() == KECCAK_EMPTY
        assert keccak256(b"abc").hex() == KECCAK_ABC
        assert EMPTY_CODE_HASH.hex() == KECCAK_EMPTY

    @pytest.mark.parametrize("n", [0, 1, 135, 136, 137, 271, 272, 273, 1000])
    def test_rate_boundaries(self, n):
        data = bytes(range(256)) * 4
        assert keccak256(data[:n]) == ref_keccak(data[:n])

    def test_matches_reference_on_random_inputs(self):
        rng = random.Random(7702)
        for _ in range(300):
            data = bytes(rng.getrandbits(8) for _ in range(rng.randrange(0, 600)))
            assert keccak256(data) == ref_keccak(data)


class TestRlp:
    @pytest.mark.parametrize("item, encoded", [
        (b"", "80"),
        (b"\x00", "00"),
        (b"\x7f", "7f"),
        (b"\x80", "8180"),
        (b"dog", "83646f67"),
        ([], "c0"),
        ([b"cat", b"dog"], "c88363617483646f67"),
        (0, "80"),
        (15, "0f"),
        (1024, "820400"),
        ([[], [[]], [[], [[]]]], "c7c0c1c0c3c0c1c0"),
    ])
    def test_canonical_vectors(self, item, encoded):
        assert rlp_encode(item).hex() == encoded

    def test_long_string_prefix(self):
        data = b"a" * 56
        assert rlp_encode(data)[:2] == bytes([0xB8, 56])
        assert rlp_decode(rlp_encode(data)) == data

    @pytest.mark.parametrize("raw", [
        "8100",        # single byte below 0x80 must be self-encoded
        "b800",        # long form for a short string
        "83646f",      # truncated
        "c20102ff",    # trailing bytes
        "b90000",      # length with leading zero
        "",
    ])
    def test_rejects_non_canonical(self, raw):
        with pytest.raises(MalformedRlp):
            rlp_decode(bytes.fromhex(raw))

    def test_matches_reference_on_random_items(self):
        rng = random.Random(1337)
        for _ in range(300):
            item = random_item(rng)
            encoded = rlp_encode(item)
            assert encoded == ref_rlp_encode(item)
            assert rlp_decode(encoded) == ref_rlp_decode(encoded)

    @settings(max_examples=200, deadline=None)
    @given(rlp_items)
    def test_roundtrip(self, item):
        assert rlp_decode(rlp_encode(item)) == item

    def test_int_encoding_is_minimal(self):
        assert int_to_bytes(0) == b""
        assert int_to_bytes(255) == b"\xff"
        assert int_to_bytes(256) == b"\x01\x00"
        with pytest.raises(ValueError):
            int_to_bytes(-1)


class TestAddresses:
    def test_normalizes_case(self):
        assert to_address("0x8464135c8F25Da09e49BC8782676a84730C318bC") == CROSSCHAIN_DRAINER

    @pytest.mark.parametrize("bad", ["0x1234", "0xzz" + "0" * 38, b"\x00" * 19, 5])
    def test_rejects_malformed(self, bad):
        with pytest.raises(InvalidAddress):
            to_address(bad)


class TestAuthMessage:
    def test_layout(self):
        body = rlp_encode([b"", bytes.fromhex(CROSSCHAIN_DRAINER[2:]), b""])
        assert auth_message(0, CROSSCHAIN_DRAINER, 0) == keccak256(bytes([MAGIC]) + body)

    def test_magic_is_domain_separator(self):
        assert MAGIC == 0x05
        assert auth_message(0, CROSSCHAIN_DRAINER, 0) != auth_message(0, CROSSCHAIN_DRAINER, 0, magic=0x04)

    def test_fields_are_bound(self):
        base = auth_message(1337, CROSSCHAIN_DRAINER, 0)
        assert base != auth_message(2337, CROSSCHAIN_DRAINER, 0)
        assert base != auth_message(1337, CROSSCHAIN_DRAINER, 1)


class TestTupleHex:
    def test_reference_tuple_decodes(self):
        tup = decode_tuple_hex(REFERENCE_TUPLE_HEX)
        assert (tup.chain_id, tup.target, tup.nonce, tup.y_parity) == (0, CROSSCHAIN_DRAINER, 0, 1)
        assert tup.r == REFERENCE_TUPLE_R
        assert tup.s == REFERENCE_TUPLE_S

    def test_roundtrip(self):
        tup = sign_authorization(VICTIM_KEY, 0, CROSSCHAIN_DRAINER, 0)
        assert decode_tuple_hex(encode_tuple_hex(tup)) == tup

    def test_canonical_encoding_of_zero_fields(self):
        tup = sign_authorization(VICTIM_KEY, 0, CROSSCHAIN_DRAINER, 0)
        assert encode_tuple_hex(tup).startswith("0xf85a8094")

    @pytest.mark.parametrize("text", [
        "0xc0",                                        # empty list
        "0xc3010203",                                  # wrong arity
        "0x" + rlp_encode([b"", b"\x01" * 19, b"", b"", b"\x01", b"\x01"]).hex(),
        "0x" + rlp_encode([b"", b"\x01" * 20, b"", b"\x02", b"\x01", b"\x01"]).hex(),
        "0x" + rlp_encode([b"", b"\x01" * 20, b"\x01" * 9, b"", b"\x01", b"\x01"]).hex(),
        "not hex",
        "0xf85a",
    ])
    def test_malformed(self, text):
        with pytest.raises(MalformedTupleHex):
            decode_tuple_hex(text)

    def test_file_roundtrip(self, tmp_path):
        path = tmp_path / "t.hex"
        write_hex_file(path, REFERENCE_TUPLE_HEX.upper().replace("0X", "0x"))
        assert read_hex_file(path) == REFERENCE_TUPLE_HEX
