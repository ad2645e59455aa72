"""Independent chains sharing one keyspace; chain-agnostic tuple replay across them."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from .codec import ZERO_ADDRESS
from .harness import (
    CROSSCHAIN_DRAINER,
    ConfigError,
    Environment,
    ScenarioReport,
    run_scenario_a,
    setup_environment,
)
from .models import AuthorizationTuple
from .signing import sign_authorization
from .state import ChainState, format_eth
from .txproc import OuterCall, Receipt, build_auth_tx, process_set_code_tx

DEFAULT_CHAIN_IDS = (1337, 2337, 3337)
REPLAY_GAS_LIMIT = 0x500000


class DuplicateChainId(ConfigError):
    pass


@dataclass
class MultiChainEnv:
    envs: List[Environment]

    def __post_init__(self):
        ids = [e.state.chain_id for e in self.envs]
        if len(set(ids)) != len(ids):
            raise DuplicateChainId(f"chain ids must be distinct: {ids}")

    @property
    def chains(self) -> List[ChainState]:
        return [e.state for e in self.envs]

    @property
    def chain_ids(self) -> List[int]:
        return [e.state.chain_id for e in self.envs]

    @property
    def actors(self):
        return self.envs[0].actors

    def env(self, chain_id: int) -> Environment:
        for e in self.envs:
            if e.state.chain_id == chain_id:
                return e
        raise KeyError(chain_id)


def setup_multichain(config: Optional[dict] = None) -> MultiChainEnv:
    """One environment per chain id; the drainer sits at the same address everywhere.

    ``config["policies"]`` may map a chain id to a policy overriding ``config["policy"]``.
    """
    config = dict(config or {})
    chain_ids = [int(c) for c in config.get("chain_ids", DEFAULT_CHAIN_IDS)]
    if len(chain_ids) < 2:
        raise ConfigError("a multichain environment needs at least two chains")
    if len(set(chain_ids)) != len(chain_ids):
        raise DuplicateChainId(f"chain ids must be distinct: {chain_ids}")
    per_chain = {int(k): v for k, v in config.get("policies", {}).items()}
    envs = []
    for cid in chain_ids:
        cfg = {k: v for k, v in config.items() if k not in ("chain_ids", "policies")}
        cfg.setdefault("delegate", CROSSCHAIN_DRAINER)
        cfg["chain_id"] = cid
        if cid in per_chain:
            cfg["policy"] = per_chain[cid]
        envs.append(setup_environment(cfg))
    return MultiChainEnv(envs)


def craft_chain_agnostic_tuple(menv: MultiChainEnv, nonce: int = 0) -> AuthorizationTuple:
    a = menv.actors
    return sign_authorization(a.victim_key, 0, a.delegate, nonce)


def _replay_one(env: Environment, tup: AuthorizationTuple) -> Receipt:
    # relayed by the attacker, so the victim's nonce is untouched before the tuple is checked
    s, a = env.state, env.actors
    tx = build_auth_tx(a.attacker, [tup],
                       OuterCall(to=ZERO_ADDRESS, gas_limit=REPLAY_GAS_LIMIT),
                       tx_nonce=s.nonce(a.attacker), chain_id=s.chain_id)
    return process_set_code_tx(tx, s)


def replay_tuple(menv: MultiChainEnv, tup: AuthorizationTuple,
                 parallel: bool = False) -> Dict[int, Receipt]:
    """Submit the identical tuple in a fresh AuthTx on every chain."""
    if parallel:
        with ThreadPoolExecutor(max_workers=len(menv.envs)) as pool:
            receipts = list(pool.map(lambda e: _replay_one(e, tup), menv.envs))
    else:
        receipts = [_replay_one(e, tup) for e in menv.envs]
    return dict(zip(menv.chain_ids, receipts))


@dataclass
class AggregateReport:
    rows: List[dict] = field(default_factory=list)

    @property
    def total_eth_before(self) -> int:
        return sum(r["eth_before"] for r in self.rows)

    @property
    def total_eth_after(self) -> int:
        return sum(r["eth_after"] for r in self.rows)

    @property
    def total_tokens_before(self) -> int:
        return sum(r["tokens_before"] for r in self.rows)

    @property
    def total_tokens_after(self) -> int:
        return sum(r["tokens_after"] for r in self.rows)

    @property
    def attacker_gain_eth(self) -> int:
        return sum(r["attacker_gain_eth"] for r in self.rows)

    @property
    def attacker_gain_tokens(self) -> int:
        return sum(r["attacker_gain_tokens"] for r in self.rows)

    @classmethod
    def from_reports(cls, reports: List[ScenarioReport]) -> "AggregateReport":
        return cls([
            {
                "chain_id": r.chain_id,
                "eth_before": r.eth_before,
                "eth_after": r.eth_after,
                "tokens_before": r.tokens_before,
                "tokens_after": r.tokens_after,
                "attacker_gain_eth": r.attacker_gain_eth,
                "attacker_gain_tokens": r.attacker_gain_tokens,
                "drained": r.drain_satisfied,
            }
            for r in reports
        ])

    def to_dict(self) -> dict:
        def row(d):
            out = {k: (str(v) if isinstance(v, int) and not isinstance(v, bool) and k != "chain_id" else v)
                   for k, v in d.items()}
            out["display"] = {
                "eth_before": format_eth(d["eth_before"]),
                "eth_after": format_eth(d["eth_after"]),
                "tokens_before": format_eth(d["tokens_before"]),
                "tokens_after": format_eth(d["tokens_after"]),
            }
            return out

        return {
            "chains": [row(r) for r in self.rows],
            "total": {
                "eth_before": str(self.total_eth_before),
                "eth_after": str(self.total_eth_after),
                "tokens_before": str(self.total_tokens_before),
                "tokens_after": str(self.total_tokens_after),
                "attacker_gain_eth": str(self.attacker_gain_eth),
                "attacker_gain_tokens": str(self.attacker_gain_tokens),
                "display": {
                    "eth_before": format_eth(self.total_eth_before),
                    "eth_after": format_eth(self.total_eth_after),
                    "tokens_before": format_eth(self.total_tokens_before),
                    "tokens_after": format_eth(self.total_tokens_after),
                },
            },
        }


def run_crosschain_experiment(menv: MultiChainEnv, parallel: bool = False):
    """Victim self-send on each chain; returns per-chain reports and the aggregate."""
    if parallel:
        with ThreadPoolExecutor(max_workers=len(menv.envs)) as pool:
            reports = list(pool.map(run_scenario_a, menv.envs))
    else:
        reports = [run_scenario_a(e) for e in menv.envs]
    for r in reports:
        r.scenario_id = "crosschain"
    return reports, AggregateReport.from_reports(reports)
