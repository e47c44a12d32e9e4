"""
Scenarios Module for plugnet

Builds the simulated world (home LAN with a plug and its owner's phone, a
neighbour LAN, the vendor cloud and optionally an attacker) and runs the
named scenarios. Every scenario checks its own postconditions.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

from .actors import HttpsServer, PlugPhase, SmartPlug, Smartphone, TurnServer
from .attacks import AttackDriver, AttackerKnowledge, AttackOutcome, OutcomeKind
from .config import ScenarioConfig
from .crypto_auth import KeyRole, SecretKey, derive_serial
from .exceptions import (
    AllocationDenied,
    AuthRejected,
    ChannelError,
    ConfigError,
    NotBound,
    ParseError,
    PlugNetError,
)
from .messages import (
    BindResponse,
    ControlAction,
    DeviceIdentity,
    KeyFetchResponse,
    LocalKeyDelivery,
    SwitchStatus,
    WifiInfo,
    deserialize,
)
from .simnet import NatRouter, SimNetwork

logger = logging.getLogger(__name__)

PLUG_DESCRIPTION = "WeMo Smart Plug"
OWNER_PHONE_ID = "alice-phone"
OWNER_PHONE_DESCRIPTION = "Alice's phone"
PHONE_OUI = bytes.fromhex("3c286d")
ROUTER_OUI = bytes.fromhex("f4f26d")
LAPTOP_OUI = bytes.fromhex("001b63")


@dataclass
class World:
    config: ScenarioConfig
    sim: SimNetwork
    https: HttpsServer
    turn: TurnServer
    home: NatRouter
    wifi: WifiInfo
    plug: SmartPlug
    phone: Smartphone
    attacker_nat: Optional[NatRouter] = None
    driver: Optional[AttackDriver] = None

    def bring_online(self) -> None:
        """Pair, bind, allocate the relay and sync once."""
        self.plug.enter_ap_mode()
        self.phone.pair(self.plug.node_id, self.wifi)
        self.plug.bind(self.https.node_id)
        self.plug.connect_relay(self.turn.node_id)
        self.plug.sync_status(self.https.node_id)

    def final_states(self) -> Dict:
        states = {
            'plug': self.plug.snapshot(),
            'phone': self.phone.snapshot(),
            'https_server': self.https.snapshot(),
            'turn_server': self.turn.snapshot(),
        }
        if self.driver is not None:
            if self.driver.fake_plug is not None:
                states['fake_plug'] = self.driver.fake_plug.snapshot()
            if self.driver.fake_phone is not None:
                states['fake_phone'] = self.driver.fake_phone.snapshot()
        return states


def build_world(config: ScenarioConfig, with_attacker: bool = False) -> World:
    """
    Args:
        config (ScenarioConfig): Validated configuration
        with_attacker (bool): Add the attacker's LAN and drivers

    Returns:
        World: Freshly built, nothing exchanged yet
    """
    sim = SimNetwork(config.seed, config.epoch)
    https = HttpsServer(sim, patched=config.effective_patched, auth_window=config.auth_window,
                        sync_period=config.sync_period, temp_key_ttl=config.temp_key_ttl)
    turn = TurnServer(sim, https)

    ap_mac = ROUTER_OUI + sim.random_bytes(3)
    home = sim.add_router(config.home_ssid, ap_mac, ap_id="home")
    plug_mac = config.vendor_oui + sim.random_bytes(3)
    plug = SmartPlug(sim, DeviceIdentity(plug_mac, derive_serial(plug_mac), PLUG_DESCRIPTION), nat=home,
                     node_id="victim-plug")
    phone = Smartphone(sim, OWNER_PHONE_ID, OWNER_PHONE_DESCRIPTION, nat=home, mac=PHONE_OUI + sim.random_bytes(3),
                       node_id="victim-phone")

    neighbour = sim.add_router("Neighbour-5G", ROUTER_OUI + sim.random_bytes(3), ap_id="neighbour")
    sim.add_node("laptop", nat=neighbour, mac=LAPTOP_OUI + sim.random_bytes(3))

    world = World(config=config, sim=sim, https=https, turn=turn, home=home,
                  wifi=WifiInfo(config.home_ssid, ap_mac, config.home_passphrase), plug=plug, phone=phone)
    if with_attacker:
        world.attacker_nat = sim.add_router("mallory", ROUTER_OUI + sim.random_bytes(3), ap_id="attacker")
        world.driver = AttackDriver(sim, https.node_id, turn.node_id, world.attacker_nat, config.vendor_oui)
    return world


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""

    def to_dict(self) -> Dict:
        return {'name': self.name, 'passed': self.passed, 'detail': self.detail}


@dataclass
class ScenarioResult:
    scenario: str
    seed: int
    patched: bool
    world: World
    outcome: Optional[AttackOutcome] = None
    checks: List[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failed_checks(self) -> List[Check]:
        return [c for c in self.checks if not c.passed]

    def check(self, name: str, condition: bool, detail: str = "") -> bool:
        self.checks.append(Check(name, bool(condition), detail))
        if not condition:
            logger.warning(f"Check failed: {name} {detail}".rstrip())
        return bool(condition)

    def check_raises(self, name: str, exc_type: type, fn: Callable[[], object]) -> bool:
        try:
            fn()
        except exc_type as e:
            return self.check(name, True, str(e))
        except PlugNetError as e:
            return self.check(name, False, f"raised {type(e).__name__}: {e}")
        return self.check(name, False, f"{exc_type.__name__} not raised")

    def check_evidence(self) -> None:
        if self.outcome is None:
            return
        seqs = {r.seq for r in self.world.sim.trace}
        missing = [s for s in self.outcome.evidence if s not in seqs]
        self.check("evidence records exist in the trace", bool(self.outcome.evidence) and not missing,
                   f"missing {missing}" if missing else f"{len(self.outcome.evidence)} record(s)")

    def to_report(self) -> Dict:
        return {
            'scenario': self.scenario,
            'seed': self.seed,
            'patched': self.patched,
            'outcome': self.outcome.kind.value if self.outcome else None,
            'evidence': list(self.outcome.evidence) if self.outcome else [],
            'detail': self.outcome.detail if self.outcome else "",
            'passed': self.passed,
            'checks': [c.to_dict() for c in self.checks],
        }


def _issued_keys(sim: SimNetwork) -> List[SecretKey]:
    keys = []
    for record in sim.trace:
        if record.kind not in (BindResponse.__name__, KeyFetchResponse.__name__, LocalKeyDelivery.__name__):
            continue
        try:
            msg = deserialize(record.payload)
        except ParseError:
            continue
        for name in ('temp_key', 'plug_key', 'phone_key'):
            key = getattr(msg, name, None)
            if key is not None:
                keys.append(key)
    return keys


def _first_seq(sim: SimNetwork, kind: str) -> int:
    return next((r.seq for r in sim.trace if r.kind == kind), -1)


def _opposite(status: SwitchStatus) -> ControlAction:
    return ControlAction.OFF if status == SwitchStatus.SWITCH_ON else ControlAction.ON


def _wardrive_victim(result: ScenarioResult) -> AttackerKnowledge:
    world = result.world
    found = world.driver.wardrive()
    matches = [k for k in found if k.victim_mac == world.plug.identity.mac]
    result.check("wardriving finds only vendor plugs", len(found) == 1 and len(matches) == 1,
                 f"{len(found)} candidate(s)")
    if not matches:
        raise PlugNetError("victim plug not found by wardriving")
    knowledge = matches[0]
    result.check("inferred serial matches the plug", knowledge.victim_serial == world.plug.serial,
                 knowledge.victim_serial)
    result.check("attacker starts without secrets",
                 knowledge.stolen_plug_key is None and knowledge.attacker_phone_key is None)
    return knowledge


# Scenarios

def run_benign(result: ScenarioResult) -> None:
    world = result.world
    sim, plug, phone, https = world.sim, world.plug, world.phone, world.https.node_id

    logger.info("Step 1: pairing and binding")
    plug.enter_ap_mode()
    transcript = phone.pair(plug.node_id, world.wifi)
    result.check("pairing reveals a MAC-derived serial", transcript.plug.serial == derive_serial(transcript.plug.mac))
    plug.bind(https)
    result.check("plug holds plug key and phone key", plug.plug_key is not None and plug.state.stored_phone_key
                 is not None)
    result.check("phone key delivered over the local network", phone.phone_key == plug.state.stored_phone_key)
    result.check("offline plug reports unavailable", phone.query_status(https) == SwitchStatus.UNAVAILABLE)

    logger.info("Step 2: authentication with the relay")
    plug.connect_relay(world.turn.node_id)
    plug.sync_status(https)
    result.check("plug online", plug.phase is PlugPhase.ONLINE)
    result.check("initial status is off", phone.query_status(https) == SwitchStatus.SWITCH_OFF)

    logger.info("Step 3: remote control")
    phone.control(https, ControlAction.ON)
    result.check("switch on reported as 1", phone.query_status(https) == SwitchStatus.SWITCH_ON
                 and plug.switch == SwitchStatus.SWITCH_ON)
    phone.control(https, ControlAction.OFF)
    result.check("switch off reported as 0", phone.query_status(https) == SwitchStatus.SWITCH_OFF
                 and plug.switch == SwitchStatus.SWITCH_OFF)

    logger.info("Step 4: rejected and stale requests")
    impostor = Smartphone(sim, OWNER_PHONE_ID, "impostor", nat=world.home, node_id="impostor-phone")
    impostor.adopt_plug(plug.identity)
    impostor.state.phone_key = SecretKey(sim.random_bytes(20), KeyRole.PHONE_KEY)
    result.check_raises("wrong phone key rejected", AuthRejected, lambda: impostor.control(https, ControlAction.ON))
    result.check("plug unchanged after rejected command", plug.switch == SwitchStatus.SWITCH_OFF)
    sim.advance(2 * world.config.sync_period + 1)
    result.check("missed syncs report unavailable", phone.query_status(https) == SwitchStatus.UNAVAILABLE)
    plug.sync_status(https)
    result.check("sync restores status", phone.query_status(https) == SwitchStatus.SWITCH_OFF)

    order = [_first_seq(sim, kind) for kind in ("PairGetInfoRequest", "BindRequest", "TurnAllocateRequest",
                                                  "ControlCommand")]
    result.check("phases in order: pairing, binding, authentication, control",
                 all(s >= 0 for s in order) and order == sorted(order), str(order))
    issued = _issued_keys(sim)
    result.check("every held key was issued on the wire",
                 plug.plug_key in issued and phone.phone_key in issued)


def _sharing(result: ScenarioResult) -> Tuple[AttackerKnowledge, SecretKey]:
    world = result.world
    https = world.https.node_id
    logger.info("Step 1: victim sets up the plug")
    world.bring_online()
    original_key = world.plug.plug_key

    logger.info("Step 2: attacker wardrives")
    knowledge = _wardrive_victim(result)

    logger.info("Step 3: sharing attack")
    result.outcome = world.driver.run_sharing_attack(knowledge)
    if not result.patched:
        result.check("outcome AttackerControls", result.outcome.kind is OutcomeKind.ATTACKER_CONTROLS,
                     result.outcome.detail)
        result.check("stolen plug key equals the original", knowledge.stolen_plug_key == original_key)
        result.check("attacker holds a phone key", knowledge.attacker_phone_key is not None)
        before = world.plug.switch
        action = _opposite(before)
        world.phone.control(https, action)
        result.check("victim phone still controls the plug",
                     world.plug.switch == action.target_status(before)
                     and world.phone.query_status(https) == world.plug.switch)
    else:
        result.check("outcome VictimDoS", result.outcome.kind is OutcomeKind.VICTIM_DOS, result.outcome.detail)
        result.check("stolen plug key differs from the original",
                     knowledge.stolen_plug_key is not None and knowledge.stolen_plug_key != original_key)
        result.check_raises("victim plug authorization rejected", AuthRejected,
                            lambda: world.plug.sync_status(https))
        result.check_raises("victim plug CHAP rejected", AllocationDenied,
                            lambda: world.plug.connect_relay(world.turn.node_id))
    return knowledge, original_key


def run_sharing_attack(result: ScenarioResult) -> None:
    _sharing(result)


def run_hijack(result: ScenarioResult) -> None:
    world = result.world
    https = world.https.node_id
    knowledge, _ = _sharing(result)
    sharing_outcome = result.outcome
    record = world.https.state.bindings[world.plug.serial]
    binding_before = (record.plug_key, dict(record.phone_keys), record.last_public_ip)
    received_before = world.plug.commands_received
    mark = len(world.sim.trace)

    logger.info("Step 4: connection hijack")
    action = _opposite(world.plug.switch)
    result.outcome = world.driver.run_hijack_attack(knowledge, observe=lambda: world.phone.control(https, action))
    result.outcome.evidence = sharing_outcome.evidence + result.outcome.evidence
    result.check("outcome VictimDoS", result.outcome.kind is OutcomeKind.VICTIM_DOS, result.outcome.detail)
    result.check("relay held by the fake plug", world.turn.holder_of(world.plug.serial)
                 == world.driver.fake_plug.node_id)
    result.check("real plug received no commands after the hijack",
                 world.plug.commands_received == received_before,
                 f"{world.plug.commands_received - received_before} received")
    relayed = [r for r in world.sim.trace[mark:] if r.kind == "TurnRelayedCommand" and r.delivered]
    result.check("all relayed commands reach the fake plug",
                 bool(relayed) and all(r.dst.node_id == world.driver.fake_plug.node_id for r in relayed),
                 f"{len(relayed)} relayed")
    record = world.https.state.bindings[world.plug.serial]
    result.check("binding record untouched by the hijack",
                 binding_before == (record.plug_key, dict(record.phone_keys), record.last_public_ip))


def run_local_control(result: ScenarioResult) -> None:
    world = result.world
    sim, plug, phone, https = world.sim, world.plug, world.phone, world.https.node_id
    world.bring_online()

    logger.info("Step 1: unpaired guest on the home network")
    guest = Smartphone(sim, "guest-phone", "Guest tablet", nat=world.home, mac=PHONE_OUI + sim.random_bytes(3),
                       node_id="guest-phone")
    start = plug.switch
    toggled = guest.control_local(plug.node_id)
    result.check("guest toggles the plug without a key", toggled != start and plug.switch == toggled)
    guest.control_local(plug.node_id)
    result.check("second toggle restores the state", plug.switch == start)

    logger.info("Step 2: the same guest over the cloud")
    guest.adopt_plug(plug.identity)
    result.check_raises("guest rejected on the remote path", AuthRejected,
                        lambda: guest.control(https, ControlAction.ON))
    result.check_raises("guest cannot fetch a phone key", NotBound, lambda: guest.fetch_key_remote(https))

    logger.info("Step 3: owner leaves home")
    sim.move_node(phone.node_id, None)
    result.check_raises("local control from outside the LAN", ChannelError,
                        lambda: phone.control_local(plug.node_id))
    phone.state.phone_key = None
    phone.fetch_key_remote(https)
    result.check("remote key fetch returns the bound key", phone.phone_key == world.https.state.bindings[
        plug.serial].phone_keys[phone.phone_id])
    action = _opposite(plug.switch)
    phone.control(https, action)
    result.check("remote control works after roaming", phone.query_status(https) == action.target_status(
        SwitchStatus.UNAVAILABLE) and plug.switch == action.target_status(SwitchStatus.UNAVAILABLE))


def run_recovery(result: ScenarioResult) -> None:
    world = result.world
    https = world.https.node_id
    knowledge, original_key = _sharing(result)

    logger.info("Step 4: owner resets and rebinds the plug")
    world.plug.reset()
    result.check("reset keeps the plug key", world.plug.plug_key is not None)
    world.bring_online()
    new_key = world.plug.plug_key
    result.check("fresh plug key after recovery",
                 new_key is not None and new_key != original_key and new_key != knowledge.stolen_plug_key)
    result.check_raises("attacker key no longer accepted", AuthRejected,
                        lambda: world.driver.fake_plug.sync_status(https))
    action = _opposite(world.plug.switch)
    world.phone.control(https, action)
    result.check("owner regains remote control", world.phone.query_status(https) == world.plug.switch
                 and world.plug.switch == action.target_status(SwitchStatus.UNAVAILABLE))


SCENARIO_RUNNERS = {
    'benign': (run_benign, False),
    'sharing-attack': (run_sharing_attack, True),
    'sharing-attack-patched': (run_sharing_attack, True),
    'hijack': (run_hijack, True),
    'local-control': (run_local_control, False),
    'recovery': (run_recovery, True),
}


def run_scenario(config: ScenarioConfig) -> ScenarioResult:
    """
    Build a world for ``config`` and run its scenario to completion.

    Returns:
        ScenarioResult: Outcome, checks and the world for artifact writing
    """
    if config.scenario not in SCENARIO_RUNNERS:
        raise ConfigError(f"unknown scenario {config.scenario!r}")
    runner, with_attacker = SCENARIO_RUNNERS[config.scenario]
    world = build_world(config, with_attacker=with_attacker)
    result = ScenarioResult(config.scenario, config.seed, config.effective_patched, world)
    logger.info(f"Running scenario {config.scenario} (seed {config.seed}, patched {result.patched})")
    runner(result)
    world.sim.run_until_idle()
    result.check_evidence()
    logger.info(f"Scenario {config.scenario}: {len(result.checks) - len(result.failed_checks)}/"
                f"{len(result.checks)} checks passed")
    return result
