import pytest

from conftest import make_config
from plugnet.attacks import OutcomeKind
from plugnet.config import SCENARIOS, ScenarioConfig
from plugnet.exceptions import ConfigError
from plugnet.scenarios import SCENARIO_RUNNERS, build_world, run_scenario


def failures(result):
    return [(c.name, c.detail) for c in result.failed_checks]


class TestEveryScenario:
    def test_runner_for_every_name(self):
        assert set(SCENARIO_RUNNERS) == set(SCENARIOS)

    @pytest.mark.parametrize("scenario", SCENARIOS)
    def test_passes_for_seed_7(self, scenario):
        result = run_scenario(make_config(scenario, 7))
        assert result.passed, failures(result)
        assert len(result.checks) >= 3

    def test_unknown_scenario(self):
        config = ScenarioConfig(scenario="benign", seed=1)
        config.scenario = "teleport"
        with pytest.raises(ConfigError):
            run_scenario(config)


class TestAttackOutcomes:
    @pytest.mark.parametrize("seed", range(1, 21))
    def test_unpatched_sharing_gives_control(self, seed):
        result = run_scenario(make_config("sharing-attack", seed))
        assert result.passed, failures(result)
        assert result.outcome.kind is OutcomeKind.ATTACKER_CONTROLS

    @pytest.mark.parametrize("seed", range(1, 21))
    def test_patched_sharing_gives_dos(self, seed):
        result = run_scenario(make_config("sharing-attack-patched", seed))
        assert result.passed, failures(result)
        assert result.outcome.kind is OutcomeKind.VICTIM_DOS

    @pytest.mark.parametrize("seed", range(1, 21))
    def test_hijack_diverts_commands(self, seed):
        result = run_scenario(make_config("hijack", seed))
        assert result.passed, failures(result)
        assert result.outcome.kind is OutcomeKind.VICTIM_DOS
        assert result.world.turn.holder_of(result.world.plug.serial) == "attacker-plug"

    def test_hijack_evidence_spans_both_attacks(self):
        result = run_scenario(make_config("hijack", 4))
        kinds = {result.world.sim.trace[seq].kind for seq in result.outcome.evidence}
        assert {"BindResponse", "TurnAllocateResponse", "TurnRelayedCommand"} <= kinds

    def test_benign_has_no_outcome(self):
        result = run_scenario(make_config("benign", 3))
        assert result.outcome is None
        assert result.to_report()['outcome'] is None


class TestDeterminism:
    @pytest.mark.parametrize("scenario", ["benign", "hijack", "recovery"])
    def test_same_seed_same_trace(self, scenario):
        first = run_scenario(make_config(scenario, 11)).world.sim.trace_lines()
        second = run_scenario(make_config(scenario, 11)).world.sim.trace_lines()
        assert first == second

    def test_different_seeds_differ(self):
        first = run_scenario(make_config("benign", 11)).world.sim.trace_lines()
        second = run_scenario(make_config("benign", 12)).world.sim.trace_lines()
        assert first != second

    def test_world_layout(self):
        world = build_world(make_config("hijack", 5), with_attacker=True)
        beacons = {b['ap_id']: b for b in world.sim.survey()}
        assert set(beacons) == {"home", "neighbour", "attacker"}
        home_prefixes = sorted(mac[:3].hex() for mac in beacons['home']['stations'])
        assert home_prefixes == ["3c286d", "ec1a59"]
        assert world.plug.identity.mac in beacons['home']['stations']


class TestReportShape:
    def test_report_and_final_states(self):
        result = run_scenario(make_config("sharing-attack", 2))
        report = result.to_report()
        assert report['outcome'] == "AttackerControls"
        assert report['passed'] is True
        assert all(set(c) == {'name', 'passed', 'detail'} for c in report['checks'])
        states = result.world.final_states()
        assert set(states) == {'plug', 'phone', 'https_server', 'turn_server', 'fake_plug', 'fake_phone'}
