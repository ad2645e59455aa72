import pytest

from eip7702sim.harness import (
    DUST_THRESHOLD,
    TOKEN_UNIT,
    ActorSet,
    ConfigError,
    DrainCriterion,
    check_drain,
    run_full_pipeline,
    run_phase1_install,
    run_scenario_a,
    run_scenario_b,
    run_scenario_c,
    setup_environment,
)
from eip7702sim.codec import ZERO_ADDRESS
from eip7702sim.signing import VICTIM_KEY, sign_authorization, sign_counts
from eip7702sim.state import clear_delegation, eth, is_delegated
from eip7702sim.txproc import OuterCall, build_auth_tx, process_set_code_tx, send_call

from oracles import INITIAL_ETH, INITIAL_TOKENS, LOCAL_DRAINER, PROTOCOL, TOKEN, VICTIM_ADDRESS


class TestSetup:
    def test_default(self, env):
        s, a = env
        assert s.chain_id == 1337
        assert s.balance(a.victim) == eth(INITIAL_ETH)
        assert s.balance(a.attacker) == eth(INITIAL_ETH)
        assert s.token_balance(TOKEN, a.victim) == INITIAL_TOKENS * TOKEN_UNIT
        assert (a.delegate, a.token, a.protocol) == (LOCAL_DRAINER, TOKEN, PROTOCOL)

    def test_chain_id(self):
        assert setup_environment({"chain_id": 2337}).state.chain_id == 2337

    def test_zero_funding(self):
        s, a = setup_environment({"victim_funding_eth": 0, "attacker_funding_eth": 0, "victim_tokens": 0})
        assert s.balance(a.victim) == s.balance(a.attacker) == 0
        assert s.token_balance(TOKEN, a.victim) == 0

    @pytest.mark.parametrize("cfg", [{"chain_id": "x"}, {"policy": "nope"}, {"victim_key": "0x12"},
                                     {"victim_funding_eth": "lots"}])
    def test_config_errors(self, cfg):
        with pytest.raises(ConfigError):
            setup_environment(cfg)

    def test_distinct_actors(self):
        with pytest.raises(ConfigError):
            ActorSet(VICTIM_KEY, VICTIM_KEY, LOCAL_DRAINER, TOKEN, PROTOCOL)


class TestInstall:
    def test_install(self, env):
        receipt = run_phase1_install(env)
        assert receipt.tuples_applied[0].accepted
        assert is_delegated(env.state, VICTIM_ADDRESS) == LOCAL_DRAINER
        assert env.state.balance(VICTIM_ADDRESS) == eth(INITIAL_ETH) - receipt.gas_cost

    def test_second_install_is_stale(self, env):
        run_phase1_install(env)
        again = run_phase1_install(env)
        assert again.tuples_applied[0].reject_reason == "NonceMismatch"

    def test_chain_agnostic_install(self, env):
        assert run_phase1_install(env, chain_id=0).tuples_applied[0].accepted


class TestScenarios:
    def test_a(self, installed):
        r = run_scenario_a(installed)
        assert r.tokens_after == 0 and r.attacker_gain_tokens == INITIAL_TOKENS * TOKEN_UNIT
        assert r.eth_after <= DUST_THRESHOLD
        assert r.fallback_executed and r.drain_satisfied and r.reconciles()

    def test_empty_victim_fallback_moves_nothing(self):
        env = setup_environment({"victim_funding_eth": 0, "victim_tokens": 0})
        s, a = env
        tup = sign_authorization(VICTIM_KEY, 0, LOCAL_DRAINER, 0)
        tx = build_auth_tx(a.attacker, [tup], OuterCall(to=ZERO_ADDRESS), chain_id=s.chain_id)
        assert process_set_code_tx(tx, s).tuples_applied[0].accepted
        r = run_scenario_b(env)
        assert r.fallback_executed
        assert (r.attacker_gain_eth, r.attacker_gain_tokens, r.eth_after) == (0, 0, 0)
        assert not r.drain_satisfied

    def test_a_control_case(self, env):
        r = run_scenario_a(env)
        assert not r.fallback_executed and not r.drain_satisfied
        assert r.tokens_after == r.tokens_before

    def test_b_sweeps_residual(self, installed):
        run_scenario_a(installed)
        r = run_scenario_b(installed)
        assert r.eth_after == 0 and r.reconciles()
        again = run_scenario_b(installed)
        assert again.attacker_gain_eth == 0
        installed.refund_victim(eth(1))
        third = run_scenario_b(installed)
        assert third.attacker_gain_eth == eth(1) and third.eth_after == 0

    def test_c_captures_protocol_value(self, installed):
        run_scenario_a(installed)
        run_scenario_b(installed)
        r = run_scenario_c(installed)
        assert r.attacker_gain_eth == eth("0.1") and r.eth_after == 0
        assert r.victim_inflow_eth == eth("0.1") and r.reconciles()

    def test_c_zero_value(self, installed):
        r = run_scenario_c(installed, value=0)
        assert r.fallback_executed

    def test_c_after_revocation(self, installed):
        clear_delegation(installed.state, VICTIM_ADDRESS)
        r = run_scenario_c(installed)
        assert r.eth_after - r.eth_before == eth("0.1")
        assert not r.drain_satisfied

    def test_controls_never_drain(self, env):
        assert not any(f(env).drain_satisfied for f in (run_scenario_a, run_scenario_b, run_scenario_c))


class TestPipeline:
    def test_full_pipeline(self, env):
        signed = sign_counts[VICTIM_ADDRESS]
        reports = run_full_pipeline(env)
        assert [r.scenario_id for r in reports] == ["pipeline", "A", "B", "C"]
        assert env.state.balance(VICTIM_ADDRESS) == 0
        assert env.state.token_balance(TOKEN, VICTIM_ADDRESS) == 0
        assert sign_counts[VICTIM_ADDRESS] == signed + 1
        assert is_delegated(env.state, VICTIM_ADDRESS) == LOCAL_DRAINER
        assert all(r.reconciles() for r in reports[1:])
        assert env.state.conserved()
        attacker = env.state.balance(env.actors.attacker)
        assert attacker >= 2 * eth(INITIAL_ETH) - env.state.burned_wei

    def test_strict_policy_stops_at_install(self):
        reports = run_full_pipeline(setup_environment({"policy": "strict"}))
        assert len(reports) == 1 and reports[0].trigger_origin == "install-rejected"


class TestCheckDrain:
    def test_scenario_a_window(self, installed):
        before = installed.state.snapshot()
        run_scenario_a(installed)
        assert check_drain(before, installed.state, VICTIM_ADDRESS, installed.actors.attacker, DrainCriterion(eth(1)))

    def test_plain_transfer_is_not_a_drain(self, env):
        s, a = env
        before = s.snapshot()
        send_call(s, a.victim, a.attacker, eth(5))
        assert s.balance(a.victim) < before.balance(a.victim)
        assert not check_drain(before, s, a.victim, a.attacker)

    def test_threshold(self, installed):
        before = installed.state.snapshot()
        run_scenario_a(installed)
        assert not check_drain(before, installed.state, VICTIM_ADDRESS, installed.actors.attacker,
                               DrainCriterion(eth(20000)))

    def test_criterion_validation(self):
        with pytest.raises(ValueError):
            DrainCriterion(0)
        with pytest.raises(ValueError):
            DrainCriterion(1, window_start=5, window_end=4)
