import pytest

from eip7702sim.behaviors import MaliciousDrainer, RevertingStub
from eip7702sim.codec import ZERO_ADDRESS
from eip7702sim.execution import register_behavior
from eip7702sim.models import SECP256K1_N, RecoverableSignature
from eip7702sim.signing import ATTACKER_KEY, VICTIM_KEY, sign_authorization
from eip7702sim.state import (
    FIXED_CALL_COST,
    FIXED_TX_COST,
    GAS_PRICE,
    PER_TUPLE_COST,
    ChainState,
    eth,
    is_delegated,
)
from eip7702sim.txproc import (
    EmptyAuthList,
    InsufficientGasFunds,
    InvalidTransaction,
    OuterCall,
    RejectReason,
    build_auth_tx,
    decode_transaction,
    encode_transaction,
    process_set_code_tx,
    send_call,
    validate_tuple,
)

from oracles import ATTACKER_ADDRESS, LOCAL_DRAINER, VICTIM_ADDRESS

STUB = "0x" + "ab" * 20
INERT = "0x" + "cd" * 20


@pytest.fixture
def world():
    s = ChainState(1337)
    register_behavior(s, LOCAL_DRAINER, MaliciousDrainer(ATTACKER_ADDRESS))
    register_behavior(s, STUB, RevertingStub())
    s.fund(VICTIM_ADDRESS, eth(100))
    s.fund(ATTACKER_ADDRESS, eth(100))
    return s


def relay(state, tuples, to=INERT, **kw):
    tx = build_auth_tx(ATTACKER_ADDRESS, tuples, OuterCall(to=to, **kw),
                       tx_nonce=state.nonce(ATTACKER_ADDRESS), chain_id=state.chain_id)
    return process_set_code_tx(tx, state)


class TestValidateTuple:
    def test_accepts_matching_tuple(self, world):
        check = validate_tuple(sign_authorization(VICTIM_KEY, 1337, LOCAL_DRAINER, 0), world)
        assert check.ok and check.authority == VICTIM_ADDRESS

    def test_chain_agnostic_accepted(self, world):
        assert validate_tuple(sign_authorization(VICTIM_KEY, 0, LOCAL_DRAINER, 0), world).ok

    def test_chain_mismatch(self, world):
        check = validate_tuple(sign_authorization(VICTIM_KEY, 2337, LOCAL_DRAINER, 0), world)
        assert check.reason is RejectReason.CHAIN_MISMATCH

    def test_nonce_mismatch(self, world):
        check = validate_tuple(sign_authorization(VICTIM_KEY, 1337, LOCAL_DRAINER, 3), world)
        assert check.reason is RejectReason.NONCE_MISMATCH

    def test_high_s(self, world):
        tup = sign_authorization(VICTIM_KEY, 1337, LOCAL_DRAINER, 0)
        sig = tup.signature
        bad = type(tup)(tup.chain_id, tup.target, tup.nonce,
                        RecoverableSignature(sig.y_parity ^ 1, sig.r, SECP256K1_N - sig.s))
        assert validate_tuple(bad, world).reason is RejectReason.NON_CANONICAL_SIGNATURE

    def test_garbage_signature(self, world):
        tup = type(sign_authorization(VICTIM_KEY, 1337, LOCAL_DRAINER, 0))(
            1337, LOCAL_DRAINER, 0, RecoverableSignature(0, 0, 0))
        assert validate_tuple(tup, world).reason is RejectReason.RECOVERY_FAILURE

    def test_max_nonce(self, world):
        tup = sign_authorization(VICTIM_KEY, 1337, LOCAL_DRAINER, 2**64 - 1)
        assert validate_tuple(tup, world).reason is RejectReason.NONCE_MISMATCH


class TestProcessing:
    def test_relayed_install(self, world):
        receipt = relay(world, [sign_authorization(VICTIM_KEY, 1337, LOCAL_DRAINER, 0)])
        assert receipt.success and receipt.tuples_applied[0].accepted
        assert is_delegated(world, VICTIM_ADDRESS) == LOCAL_DRAINER
        assert world.nonce(VICTIM_ADDRESS) == 1
        assert world.nonce(ATTACKER_ADDRESS) == 1
        assert receipt.gas_used == FIXED_TX_COST + PER_TUPLE_COST
        assert world.conserved()

    def test_self_authorization_needs_next_nonce(self, world):
        stale = sign_authorization(VICTIM_KEY, 1337, LOCAL_DRAINER, 0)
        fresh = sign_authorization(VICTIM_KEY, 1337, LOCAL_DRAINER, 2)
        for tup, accepted in ((stale, False), (fresh, True)):
            tx = build_auth_tx(VICTIM_ADDRESS, [tup], OuterCall(to=INERT),
                               tx_nonce=world.nonce(VICTIM_ADDRESS), chain_id=1337)
            receipt = process_set_code_tx(tx, world)
            assert receipt.tuples_applied[0].accepted is accepted
        assert world.nonce(VICTIM_ADDRESS) == 3

    def test_tuples_apply_in_order_and_last_wins(self, world):
        other = "0x" + "11" * 20
        receipt = relay(world, [
            sign_authorization(VICTIM_KEY, 1337, LOCAL_DRAINER, 0),
            sign_authorization(VICTIM_KEY, 1337, other, 1),
            sign_authorization(VICTIM_KEY, 1337, LOCAL_DRAINER, 1),
        ])
        assert [t.accepted for t in receipt.tuples_applied] == [True, True, False]
        assert is_delegated(world, VICTIM_ADDRESS) == other
        assert receipt.gas_used == FIXED_TX_COST + 3 * PER_TUPLE_COST

    def test_revocation(self, world):
        relay(world, [sign_authorization(VICTIM_KEY, 1337, LOCAL_DRAINER, 0)])
        receipt = relay(world, [sign_authorization(VICTIM_KEY, 1337, ZERO_ADDRESS, 1)])
        assert receipt.tuples_applied[0].accepted
        assert is_delegated(world, VICTIM_ADDRESS) is None
        assert world.code(VICTIM_ADDRESS) == b""

    def test_write_survives_outer_revert(self, world):
        receipt = relay(world, [sign_authorization(VICTIM_KEY, 1337, LOCAL_DRAINER, 0)], to=STUB, value=5)
        assert not receipt.success
        assert is_delegated(world, VICTIM_ADDRESS) == LOCAL_DRAINER
        assert world.balance(STUB) == 0
        assert world.nonce(ATTACKER_ADDRESS) == 1
        assert world.conserved()

    def test_out_of_gas_rolls_back_body_only(self, world):
        tup = sign_authorization(VICTIM_KEY, 1337, LOCAL_DRAINER, 0)
        relay(world, [tup])
        victim_before = world.balance(VICTIM_ADDRESS)
        tight = FIXED_TX_COST + 1
        receipt = send_call(world, ATTACKER_ADDRESS, VICTIM_ADDRESS, gas_limit=tight)
        assert not receipt.success and receipt.error == "OutOfGas"
        assert receipt.gas_used == tight
        assert world.balance(VICTIM_ADDRESS) == victim_before

    def test_gas_accounting(self, world):
        relay(world, [sign_authorization(VICTIM_KEY, 1337, LOCAL_DRAINER, 0)])
        before = world.balance(ATTACKER_ADDRESS)
        receipt = send_call(world, ATTACKER_ADDRESS, VICTIM_ADDRESS)
        assert receipt.gas_used == FIXED_TX_COST + FIXED_CALL_COST
        assert world.balance(ATTACKER_ADDRESS) == before - receipt.gas_used * GAS_PRICE + eth(100)

    def test_structural_errors(self, world):
        tup = sign_authorization(VICTIM_KEY, 1337, LOCAL_DRAINER, 0)
        with pytest.raises(EmptyAuthList):
            build_auth_tx(ATTACKER_ADDRESS, [], chain_id=1337)
        bad_nonce = build_auth_tx(ATTACKER_ADDRESS, [tup], tx_nonce=9, chain_id=1337)
        with pytest.raises(InvalidTransaction):
            process_set_code_tx(bad_nonce, world)
        wrong_chain = build_auth_tx(ATTACKER_ADDRESS, [tup], chain_id=2337)
        with pytest.raises(InvalidTransaction):
            process_set_code_tx(wrong_chain, world)
        broke = "0x" + "99" * 20
        with pytest.raises(InsufficientGasFunds):
            process_set_code_tx(build_auth_tx(broke, [tup], chain_id=1337), world)
        assert world.nonce(ATTACKER_ADDRESS) == 0
        assert is_delegated(world, VICTIM_ADDRESS) is None

    def test_node_log_trace(self, world):
        receipt = relay(world, [sign_authorization(VICTIM_KEY, 1337, LOCAL_DRAINER, 0)])
        kinds = [e.kind for e in receipt.trace]
        assert kinds[:3] == ["AuthorizationListExtracted", "SignatureVerified", "DelegationWritten"]
        assert receipt.trace[1]["signer"] == VICTIM_ADDRESS


def test_wire_roundtrip():
    tuples = [sign_authorization(VICTIM_KEY, 0, LOCAL_DRAINER, 0),
              sign_authorization(ATTACKER_KEY, 1337, LOCAL_DRAINER, 4)]
    tx = build_auth_tx(ATTACKER_ADDRESS, tuples, OuterCall(to=VICTIM_ADDRESS, value=3, data=b"\x01"),
                       tx_nonce=2, chain_id=1337)
    raw = encode_transaction(tx)
    assert raw[0] == 0x04
    assert decode_transaction(raw) == tx
    with pytest.raises(InvalidTransaction):
        decode_transaction(b"\x02" + raw[1:])


def test_tx_hash_is_stable():
    tup = sign_authorization(VICTIM_KEY, 0, LOCAL_DRAINER, 0)
    a = build_auth_tx(ATTACKER_ADDRESS, [tup], chain_id=1337)
    b = build_auth_tx(ATTACKER_ADDRESS, [tup], chain_id=1337)
    assert a.tx_hash == b.tx_hash
    assert a.tx_hash != build_auth_tx(ATTACKER_ADDRESS, [tup], chain_id=2337).tx_hash
