import pytest

from conftest import make_world
from plugnet.actors import PlugPhase
from plugnet.attacks import AttackerKnowledge, OutcomeKind
from plugnet.crypto_auth import derive_serial
from plugnet.messages import ControlAction, SwitchStatus


def victim_knowledge(world):
    return next(k for k in world.driver.wardrive() if k.victim_mac == world.plug.identity.mac)


class TestWardriving:
    def test_finds_vendor_plugs_only(self, attack_world):
        found = attack_world.driver.wardrive()
        assert len(found) == 1
        knowledge = found[0]
        assert knowledge.victim_serial == attack_world.plug.serial
        assert knowledge.ap_ssid == attack_world.wifi.ssid
        assert knowledge.ap_mac == attack_world.wifi.ap_mac
        assert knowledge.stolen_plug_key is None

    def test_region_limits_the_sweep(self, attack_world):
        assert attack_world.driver.wardrive(region=["neighbour"]) == []

    def test_other_vendor_prefix_finds_nothing(self):
        world = make_world("sharing-attack", with_attacker=True, online=True)
        world.driver.vendor_oui = bytes.fromhex("001122")
        assert world.driver.wardrive() == []

    def test_knowledge_report_hides_keys(self, attack_world):
        knowledge = victim_knowledge(attack_world)
        attack_world.driver.run_sharing_attack(knowledge)
        report = knowledge.to_dict()
        assert report['stolen_plug_key'] == knowledge.stolen_plug_key.fingerprint
        assert knowledge.stolen_plug_key.key_bytes.hex() not in str(report)


class TestSharingAttack:
    def test_unpatched_server_leaks_original_key(self, attack_world):
        original = attack_world.plug.plug_key
        knowledge = victim_knowledge(attack_world)
        outcome = attack_world.driver.run_sharing_attack(knowledge)
        assert outcome.kind is OutcomeKind.ATTACKER_CONTROLS
        assert knowledge.stolen_plug_key == original
        assert knowledge.stolen_plug_key.key_bytes == original.key_bytes
        assert knowledge.attacker_phone_key is not None
        assert attack_world.plug.switch == SwitchStatus.SWITCH_ON

    def test_evidence_points_at_trace_records(self, attack_world):
        outcome = attack_world.driver.run_sharing_attack(victim_knowledge(attack_world))
        kinds = {attack_world.sim.trace[seq].kind for seq in outcome.evidence}
        assert {"BindResponse", "TurnRelayedCommand", "StatusReply"} <= kinds

    def test_victim_keeps_control(self, attack_world):
        attack_world.driver.run_sharing_attack(victim_knowledge(attack_world))
        attack_world.phone.control(attack_world.https.node_id, ControlAction.OFF)
        assert attack_world.plug.switch == SwitchStatus.SWITCH_OFF
        record = attack_world.https.state.bindings[attack_world.plug.serial]
        assert set(record.phone_keys) == {"alice-phone", "mallory-phone"}

    def test_patched_server_turns_theft_into_dos(self, patched_attack_world):
        world = patched_attack_world
        original = world.plug.plug_key
        knowledge = victim_knowledge(world)
        outcome = world.driver.run_sharing_attack(knowledge)
        assert outcome.kind is OutcomeKind.VICTIM_DOS
        assert knowledge.stolen_plug_key != original
        assert knowledge.stolen_plug_key.key_bytes != original.key_bytes
        assert world.plug.integrity_failures >= 1
        assert world.plug.phase is PlugPhase.BOUND
        assert world.plug.switch == SwitchStatus.SWITCH_OFF

    def test_offline_target_fails(self):
        world = make_world("sharing-attack", with_attacker=True)
        mac = world.plug.identity.mac
        knowledge = AttackerKnowledge.from_mac(mac, world.wifi.ssid, world.wifi.ap_mac)
        assert knowledge.victim_serial == derive_serial(mac)
        outcome = world.driver.run_sharing_attack(knowledge)
        assert outcome.kind is OutcomeKind.FAILED
        assert "control refused" in outcome.detail


class TestHijackAttack:
    def test_requires_stolen_key(self, attack_world):
        outcome = attack_world.driver.run_hijack_attack(victim_knowledge(attack_world))
        assert outcome.kind is OutcomeKind.FAILED

    def test_relay_moves_to_fake_plug(self, attack_world):
        world = attack_world
        knowledge = victim_knowledge(world)
        world.driver.run_sharing_attack(knowledge)
        received = world.plug.commands_received

        def victim_activity():
            world.phone.control(world.https.node_id, ControlAction.OFF)
            world.phone.control(world.https.node_id, ControlAction.ON)

        outcome = world.driver.run_hijack_attack(knowledge, observe=victim_activity)
        assert outcome.kind is OutcomeKind.VICTIM_DOS
        assert world.turn.holder_of(world.plug.serial) == "attacker-plug"
        assert world.plug.commands_received == received
        assert world.driver.fake_plug.commands_applied == 2
        hijacked = [world.sim.trace[s] for s in outcome.evidence if world.sim.trace[s].kind == "TurnRelayedCommand"]
        assert len(hijacked) == 2
        assert all(r.dst.node_id == "attacker-plug" for r in hijacked)

    def test_without_victim_traffic(self, attack_world):
        knowledge = victim_knowledge(attack_world)
        attack_world.driver.run_sharing_attack(knowledge)
        outcome = attack_world.driver.run_hijack_attack(knowledge)
        assert outcome.kind is OutcomeKind.VICTIM_DOS
        assert [attack_world.sim.trace[s].kind for s in outcome.evidence] == ["TurnAllocateResponse"]

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_patched_server_blocks_hijack_with_stale_key(self, seed):
        world = make_world("sharing-attack-patched", seed=seed, with_attacker=True, online=True)
        knowledge = victim_knowledge(world)
        world.driver.run_sharing_attack(knowledge)
        knowledge.stolen_plug_key = world.plug.plug_key
        outcome = world.driver.run_hijack_attack(knowledge)
        assert outcome.kind is OutcomeKind.FAILED
