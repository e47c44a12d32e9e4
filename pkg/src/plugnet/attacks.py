"""
Attacks Module for plugnet

Attacker-side drivers: wardriving for vendor MACs, the sharing attack
(dummy-authorized rebinding with fabricated controller data) and the
connection hijack (re-allocating the TURN relay with a stolen plug key).
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Set

from .actors import FakePlug, PlugPhase, Smartphone
from .crypto_auth import SecretKey, derive_serial, format_mac
from .exceptions import ParseError, ProtocolRejection
from .messages import (
    BindKind,
    BindResponse,
    ControlAction,
    DeviceIdentity,
    ErrorResponse,
    SwitchStatus,
    WifiInfo,
    deserialize,
)
from .simnet import NatRouter, SimNetwork, TraceRecord

logger = logging.getLogger(__name__)

DEFAULT_VENDOR_OUI = bytes.fromhex("ec1a59")
ATTACKER_PHONE_ID = "mallory-phone"
ATTACKER_PHONE_DESCRIPTION = "Pixel 4a"
FORGED_DESCRIPTION = "Smart Plug"


@dataclass
class AttackerKnowledge:
    """What the attacker knows about one victim plug."""

    victim_mac: bytes
    victim_serial: str
    ap_ssid: str
    ap_mac: bytes
    stolen_plug_key: Optional[SecretKey] = None
    attacker_phone_key: Optional[SecretKey] = None

    @classmethod
    def from_mac(cls, victim_mac: bytes, ap_ssid: str, ap_mac: bytes) -> "AttackerKnowledge":
        return cls(victim_mac, derive_serial(victim_mac), ap_ssid, ap_mac)

    def to_dict(self) -> Dict:
        return {
            'victim_mac': format_mac(self.victim_mac),
            'victim_serial': self.victim_serial,
            'ap_ssid': self.ap_ssid,
            'ap_mac': format_mac(self.ap_mac),
            'stolen_plug_key': self.stolen_plug_key.fingerprint if self.stolen_plug_key else None,
            'attacker_phone_key': self.attacker_phone_key.fingerprint if self.attacker_phone_key else None,
        }


class OutcomeKind(str, Enum):
    ATTACKER_CONTROLS = "AttackerControls"
    VICTIM_DOS = "VictimDoS"
    FAILED = "Failed"


@dataclass
class AttackOutcome:
    kind: OutcomeKind
    evidence: List[int] = field(default_factory=list)
    detail: str = ""

    def to_dict(self) -> Dict:
        return {'kind': self.kind.value, 'evidence': list(self.evidence), 'detail': self.detail}


class AttackDriver:
    """
    Runs the attacker's software plug and phone from its own NAT'd network.

    Args:
        sim (SimNetwork): Network shared with the victims
        https_node (str): Node id of the vendor HTTPS server
        turn_node (str): Node id of the TURN server
        attacker_nat (NatRouter): The attacker's own router
        vendor_oui (bytes): MAC prefix used to pick plugs while wardriving
    """

    def __init__(self, sim: SimNetwork, https_node: str, turn_node: str, attacker_nat: NatRouter,
                 vendor_oui: bytes = DEFAULT_VENDOR_OUI):
        self.sim = sim
        self.https_node = https_node
        self.turn_node = turn_node
        self.attacker_nat = attacker_nat
        self.vendor_oui = vendor_oui
        self.fake_plug: Optional[FakePlug] = None
        self.fake_phone: Optional[Smartphone] = None

    @property
    def attacker_nodes(self) -> Set[str]:
        return {actor.node_id for actor in (self.fake_plug, self.fake_phone) if actor is not None}

    def wardrive(self, region: Optional[List[str]] = None) -> List[AttackerKnowledge]:
        """
        Sniff beacons in ``region`` (AP ids, or everywhere) and keep stations
        whose MAC carries the vendor OUI.

        Returns:
            List[AttackerKnowledge]: One partial record per plug found
        """
        found = []
        for beacon in self.sim.survey(region):
            for mac in beacon['stations']:
                if mac[:len(self.vendor_oui)] == self.vendor_oui:
                    found.append(AttackerKnowledge.from_mac(mac, beacon['ssid'], beacon['ap_mac']))
        logger.info(f"Wardriving found {len(found)} candidate plug(s)")
        return found

    # Attacker actors

    def _ensure_fake_plug(self, knowledge: AttackerKnowledge) -> FakePlug:
        if self.fake_plug is None or self.fake_plug.serial != knowledge.victim_serial:
            forged = DeviceIdentity(knowledge.victim_mac, knowledge.victim_serial, FORGED_DESCRIPTION)
            node_id = "attacker-plug" if self.fake_plug is None else None
            self.fake_plug = FakePlug(self.sim, forged, nat=self.attacker_nat, node_id=node_id)
        return self.fake_plug

    def _ensure_fake_phone(self) -> Smartphone:
        if self.fake_phone is None:
            self.fake_phone = Smartphone(self.sim, ATTACKER_PHONE_ID, ATTACKER_PHONE_DESCRIPTION,
                                         nat=self.attacker_nat, node_id="attacker-phone")
        return self.fake_phone

    # Trace evidence

    def _records_since(self, start: int, kind: str) -> List[TraceRecord]:
        return [r for r in self.sim.trace[start:] if r.kind == kind and r.delivered]

    def _victim_auth_rejections(self, start: int) -> List[int]:
        seqs = []
        for record in self._records_since(start, ErrorResponse.__name__):
            if record.dst.node_id in self.attacker_nodes:
                continue
            try:
                error = deserialize(record.payload)
            except ParseError:
                continue
            if error.code == "AuthRejected":
                seqs.append(record.seq)
        return seqs

    def _failed(self, start: int, reason: str) -> AttackOutcome:
        evidence = [r.seq for r in self._records_since(start, ErrorResponse.__name__)
                    if r.dst.node_id in self.attacker_nodes]
        logger.warning(f"Attack failed: {reason}")
        return AttackOutcome(OutcomeKind.FAILED, evidence, reason)

    # Attacks

    def run_sharing_attack(self, knowledge: AttackerKnowledge) -> AttackOutcome:
        """
        Rebind the victim's serial from the attacker's network with a dummy
        Authorization and fabricated phone data, then drive the plug.

        Args:
            knowledge (AttackerKnowledge): Victim MAC, serial and AP details

        Returns:
            AttackOutcome: AttackerControls, VictimDoS or Failed
        """
        start = len(self.sim.trace)
        fake_plug = self._ensure_fake_plug(knowledge)
        fake_plug.impersonate(ATTACKER_PHONE_ID, ATTACKER_PHONE_DESCRIPTION,
                              WifiInfo(knowledge.ap_ssid, knowledge.ap_mac))
        logger.info(f"Step 1: fake plug rebinding {knowledge.victim_serial}")
        try:
            response = fake_plug.bind(self.https_node)
        except ProtocolRejection as e:
            return self._failed(start, f"rebinding refused: {e}")
        knowledge.stolen_plug_key = response.plug_key
        keys_issued = [r.seq for r in self._records_since(start, BindResponse.__name__)
                       if r.dst.node_id == fake_plug.node_id
                       and deserialize(r.payload).outcome is BindKind.KEYS_ISSUED]

        logger.info("Step 2: fake phone fetching its key")
        phone = self._ensure_fake_phone()
        phone.adopt_plug(fake_plug.identity)
        try:
            knowledge.attacker_phone_key = phone.fetch_key_remote(self.https_node)
        except ProtocolRejection as e:
            return self._failed(start, f"key fetch refused: {e}")

        logger.info("Step 3: attacker switching the victim plug")
        try:
            before = phone.query_status(self.https_node)
            action = ControlAction.OFF if before == SwitchStatus.SWITCH_ON else ControlAction.ON
            mark = len(self.sim.trace)
            phone.control(self.https_node, action)
            after = phone.query_status(self.https_node)
        except ProtocolRejection as e:
            return self._failed(start, f"control refused: {e}")

        rejections = self._victim_auth_rejections(start)
        if rejections:
            return AttackOutcome(OutcomeKind.VICTIM_DOS, keys_issued + rejections,
                                 "victim plug can no longer authenticate")
        if after == action.target_status(before):
            relayed = [r.seq for r in self._records_since(mark, "TurnRelayedCommand")
                       if r.dst.node_id not in self.attacker_nodes]
            replies = [r.seq for r in self._records_since(mark, "StatusReply")]
            return AttackOutcome(OutcomeKind.ATTACKER_CONTROLS, keys_issued + relayed + replies[-1:],
                                 f"attacker switched plug {action.value}")
        return self._failed(start, f"status {int(after)} after {action.value}")

    def run_hijack_attack(self, knowledge: AttackerKnowledge,
                          observe: Optional[Callable[[], object]] = None) -> AttackOutcome:
        """
        Take over the victim's TURN relay with the stolen plug key.

        Args:
            knowledge (AttackerKnowledge): Must carry ``stolen_plug_key``
            observe (Callable): Victim activity to run after the takeover;
                relayed commands it produces become evidence

        Returns:
            AttackOutcome: VictimDoS or Failed
        """
        start = len(self.sim.trace)
        if knowledge.stolen_plug_key is None:
            return self._failed(start, "no stolen plug key")
        fake_plug = self._ensure_fake_plug(knowledge)
        fake_plug.state.plug_key = knowledge.stolen_plug_key
        if fake_plug.state.phase not in (PlugPhase.BOUND, PlugPhase.ONLINE):
            fake_plug.state.phase = PlugPhase.BOUND
        fake_plug.server_node = self.https_node

        logger.info(f"Step 1: fake plug allocating relay for {knowledge.victim_serial}")
        try:
            fake_plug.connect_relay(self.turn_node)
        except ProtocolRejection as e:
            return self._failed(start, f"relay allocation refused: {e}")
        allocated = [r.seq for r in self._records_since(start, "TurnAllocateResponse")
                     if r.dst.node_id == fake_plug.node_id]

        mark = len(self.sim.trace)
        if observe is None:
            return AttackOutcome(OutcomeKind.VICTIM_DOS, allocated, "relay now terminates at the fake plug")
        logger.info("Step 2: waiting for victim traffic")
        try:
            observe()
        except ProtocolRejection as e:
            logger.info(f"Victim activity rejected: {e}")
        hijacked = [r.seq for r in self._records_since(mark, "TurnRelayedCommand")
                    if r.dst.node_id == fake_plug.node_id]
        if not hijacked:
            return self._failed(start, "no victim command reached the fake plug")
        return AttackOutcome(OutcomeKind.VICTIM_DOS, allocated + hijacked,
                             f"{len(hijacked)} victim command(s) relayed to the fake plug")
