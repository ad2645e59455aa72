"""In-process simulator for EIP-7702 delegation attacks and their defenses."""

from .codec import (
    EMPTY_CODE_HASH,
    ZERO_ADDRESS,
    auth_message,
    decode_tuple_hex,
    encode_tuple_hex,
    keccak256,
    rlp_decode,
    rlp_encode,
)
from .execution import CallFrame, dispatch_call, register_behavior
from .guard import ScopedTupleExtension, TuplePolicy
from .harness import (
    ActorSet,
    DrainCriterion,
    ScenarioReport,
    check_drain,
    run_full_pipeline,
    run_phase1_install,
    run_scenario_a,
    run_scenario_b,
    run_scenario_c,
    setup_environment,
)
from .models import AuthorizationTuple, RecoverableSignature
from .multichain import run_crosschain_experiment, replay_tuple, setup_multichain
from .signing import derive_address, recover_authority, sign_authorization, sign_digest
from .state import ChainState, eth, format_eth, is_delegated
from .txproc import build_auth_tx, process_set_code_tx, process_transaction, validate_tuple

__version__ = "0.1.0"
