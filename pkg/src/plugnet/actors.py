"""
Actors Module for plugnet

The four protocol state machines: SmartPlug, Smartphone, HttpsServer and
TurnServer.

Message handlers only react to what arrives and queue follow-up messages.
The driver-level operations (``pair``, ``bind``, ``connect_relay``,
``sync_status``, ``query_status``, ``control``, ``control_local``,
``fetch_key_remote``) send a request, run the network until idle and then
return the answer or raise the matching ProtocolRejection.
"""

import hmac
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Tuple, Type

from .crypto_auth import (
    CHALLENGE_SIZE,
    DEFAULT_AUTH_WINDOW,
    NONCE_SIZE,
    IntegrityAttribute,
    KeyRole,
    SecretKey,
    chap_respond,
    chap_verify,
    compute_authorization,
    compute_message_integrity,
    dummy_authorization,
    format_mac,
    verify_authorization,
    verify_message_integrity,
    RejectReason,
)
from .exceptions import (
    AllocationDenied,
    AuthRejected,
    BindRejected,
    ChannelError,
    LifecycleError,
    NotBound,
    ProtocolRejection,
    Unavailable,
)
from .messages import (
    AllocationNotice,
    BindKind,
    BindRequest,
    BindResponse,
    ControlAck,
    ControlAction,
    ControlCommand,
    DeviceIdentity,
    ErrorResponse,
    KeyFetchRequest,
    KeyFetchResponse,
    LocalControl,
    LocalControlAck,
    LocalKeyDelivery,
    PairGetInfoRequest,
    PairGetInfoResponse,
    PairSetupAck,
    PairSetupRequest,
    RelayForward,
    StatusAck,
    StatusQuery,
    StatusReply,
    StatusUpdate,
    SwitchStatus,
    TurnAllocateRequest,
    TurnAllocateResponse,
    TurnChallenge,
    TurnChallengeRequest,
    TurnRelayedCommand,
    WifiInfo,
    integrity_input,
    key_fetch_mac,
)
from .simnet import Channel, Envelope, NatRouter, SimNetwork

logger = logging.getLogger(__name__)

KEY_SIZE = 20
DEFAULT_SYNC_PERIOD = 10
DEFAULT_TEMP_KEY_TTL = 60
RELAY_PORT_BASE = 49152

_REJECTIONS: Dict[str, Type[ProtocolRejection]] = {
    cls.__name__: cls for cls in (BindRejected, AuthRejected, NotBound, Unavailable, AllocationDenied)
}


def rejection_from(error: ErrorResponse) -> ProtocolRejection:
    """Exception matching an ErrorResponse received on the wire."""
    return _REJECTIONS.get(error.code, ProtocolRejection)(error.reason, error.subject)


def _fingerprint(key: Optional[SecretKey]) -> Optional[str]:
    return key.fingerprint if key is not None else None


class Actor:
    """
    A simulated node with a per-message-type handler table.

    Args:
        sim (SimNetwork): Network the actor lives on
        kind (str): Node kind, used for node ids
        nat (NatRouter): Router in front of the actor, or None for a public host
        mac (bytes): Station MAC visible to Wi-Fi sniffers
        node_id (str): Explicit node id
    """

    kind = "actor"

    def __init__(self, sim: SimNetwork, nat: Optional[NatRouter] = None, mac: Optional[bytes] = None,
                 node_id: Optional[str] = None):
        self.sim = sim
        self.node_id = sim.add_node(self.kind, nat=nat, mac=mac, handler=self.receive, node_id=node_id).node_id
        self.received: List[Envelope] = []
        self._handlers: Dict[type, Callable[[Envelope], None]] = {}

    def on(self, msg_type: type, handler: Callable[[Envelope], None]) -> None:
        self._handlers[msg_type] = handler

    def receive(self, envelope: Envelope) -> None:
        self.received.append(envelope)
        handler = self._handlers.get(type(envelope.msg))
        if handler is not None:
            handler(envelope)

    def _nonce(self) -> bytes:
        return self.sim.random_bytes(NONCE_SIZE)

    def _request(self, dst: str, msg, channel: Channel, expect: Tuple[type, ...]):
        mark = len(self.received)
        self.sim.send(self.node_id, dst, msg, channel)
        self.sim.run_until_idle()
        for envelope in self.received[mark:]:
            reply = envelope.msg
            if isinstance(reply, ErrorResponse) and reply.in_reply_to == msg.kind:
                raise rejection_from(reply)
            if isinstance(reply, expect):
                return reply
        raise Unavailable("NoResponse", getattr(msg, 'serial', ''))


class Server(Actor):
    """Actor whose handlers answer requests, turning ProtocolRejection into ErrorResponse."""

    def serve(self, msg_type: type, handler: Callable[[Envelope], object]) -> None:
        def wrapped(envelope: Envelope) -> None:
            try:
                answer = handler(envelope)
            except ProtocolRejection as e:
                logger.warning(f"{self.node_id} rejected {envelope.msg.kind} from {envelope.src}: "
                               f"{type(e).__name__} {e.reason}")
                answer = ErrorResponse(type(e).__name__, e.reason, e.subject, envelope.msg.kind)
            if answer is not None:
                self.sim.reply(envelope, answer)
        self.on(msg_type, wrapped)


# Smart plug

class PlugPhase(str, Enum):
    FACTORY = "Factory"
    AP_MODE = "ApMode"
    PAIRED = "Paired"
    BOUND = "Bound"
    ONLINE = "Online"


@dataclass
class PlugState:
    identity: DeviceIdentity
    phase: PlugPhase = PlugPhase.FACTORY
    plug_key: Optional[SecretKey] = None
    stored_phone_key: Optional[SecretKey] = None
    switch: SwitchStatus = SwitchStatus.SWITCH_OFF
    retains_key_after_reset: bool = True
    pairing: Optional[PairSetupRequest] = None
    paired_phone_node: Optional[str] = None
    relay_port: Optional[int] = None


class SmartPlug(Actor):
    """
    A genuine plug. Its serial is derived from its MAC by the caller.

    The plug key is never erased by ``reset``.
    """

    kind = "plug"
    claims_rebind = False
    broadcasts_mac = True

    def __init__(self, sim: SimNetwork, identity: DeviceIdentity, nat: Optional[NatRouter] = None,
                 node_id: Optional[str] = None):
        super().__init__(sim, nat=nat, mac=identity.mac if self.broadcasts_mac else None, node_id=node_id)
        self.state = PlugState(identity=identity)
        self.server_node: Optional[str] = None
        self.commands_received = 0
        self.commands_applied = 0
        self.integrity_failures = 0
        self.on(PairGetInfoRequest, self._on_get_info)
        self.on(PairSetupRequest, self._on_setup)
        self.on(LocalControl, self._on_local_control)
        self.on(TurnRelayedCommand, self._on_relayed)
        self.on(StatusAck, self._on_status_ack)
        self.on(ErrorResponse, self._on_error)

    @property
    def identity(self) -> DeviceIdentity:
        return self.state.identity

    @property
    def serial(self) -> str:
        return self.state.identity.serial

    @property
    def phase(self) -> PlugPhase:
        return self.state.phase

    @property
    def plug_key(self) -> Optional[SecretKey]:
        return self.state.plug_key

    @property
    def switch(self) -> SwitchStatus:
        return self.state.switch

    def enter_ap_mode(self) -> None:
        if self.state.phase not in (PlugPhase.FACTORY, PlugPhase.AP_MODE):
            raise LifecycleError(f"plug {self.serial} must be reset before entering AP mode")
        self.state.phase = PlugPhase.AP_MODE
        logger.info(f"Plug {self.serial} broadcasting setup AP")

    def reset(self) -> None:
        """Factory reset: pairing data goes, the plug key stays."""
        self.state.phase = PlugPhase.FACTORY
        self.state.pairing = None
        self.state.paired_phone_node = None
        self.state.stored_phone_key = None
        self.state.relay_port = None
        logger.info(f"Plug {self.serial} reset (plug key retained: {self.state.plug_key is not None})")

    # Pairing

    def _on_get_info(self, envelope: Envelope) -> None:
        if envelope.channel is not Channel.LOCAL_AP or self.state.phase is not PlugPhase.AP_MODE:
            return
        self.sim.reply(envelope, PairGetInfoResponse(self.identity))

    def _on_setup(self, envelope: Envelope) -> None:
        if envelope.channel is not Channel.LOCAL_AP or self.state.phase is not PlugPhase.AP_MODE:
            return
        self.state.pairing = envelope.msg
        self.state.paired_phone_node = envelope.src
        self.state.phase = PlugPhase.PAIRED
        logger.info(f"Plug {self.serial} paired with {envelope.msg.phone_id} on SSID {envelope.msg.wifi.ssid}")
        self.sim.reply(envelope, PairSetupAck(self.serial))

    # Binding

    def _bind_request(self, auth, re_register: bool) -> BindRequest:
        pairing = self.state.pairing
        return BindRequest(
            plug=self.identity,
            phone_id=pairing.phone_id,
            phone_description=pairing.phone_description,
            wifi=pairing.wifi.without_passphrase(),
            timestamp=self.sim.unix_time(),
            auth=auth,
            re_register=re_register,
        )

    def _bind_bootstrap(self, server: str, re_register: bool) -> BindResponse:
        now = self.sim.unix_time()
        first = self._request(server, self._bind_request(dummy_authorization(self.identity, now, self._nonce()),
                                                         re_register), Channel.INTERNET, (BindResponse,))
        if first.outcome is not BindKind.TEMP_KEY_ISSUED:
            raise BindRejected("UnexpectedResponse", self.serial)
        logger.info(f"Plug {self.serial} received temporary key")
        auth = compute_authorization(first.temp_key, self.identity, self.sim.unix_time(), self._nonce())
        return self._request(server, self._bind_request(auth, re_register), Channel.INTERNET, (BindResponse,))

    def bind(self, server: str) -> BindResponse:
        """
        Bind to the HTTPS server.

        A plug holding a key rebinds with one keyed request; if that is
        refused, or if it has no key, it runs the dummy/temp-key bootstrap.
        The phone key is handed to the paired phone when it shares the LAN.

        Args:
            server (str): Node id of the HTTPS server

        Returns:
            BindResponse: The KeysIssued response

        Raises:
            LifecycleError: The plug is not Paired
            BindRejected: The server refused the bootstrap
            AuthRejected: The temp-key request failed verification
        """
        if self.state.phase is not PlugPhase.PAIRED:
            raise LifecycleError(f"plug {self.serial} is {self.state.phase.value}, must be Paired to bind")
        self.server_node = server
        response = None
        if self.state.plug_key is not None:
            auth = compute_authorization(self.state.plug_key, self.identity, self.sim.unix_time(), self._nonce())
            try:
                response = self._request(server, self._bind_request(auth, True), Channel.INTERNET, (BindResponse,))
            except (AuthRejected, BindRejected) as e:
                logger.warning(f"Plug {self.serial} keyed rebind refused ({e.reason}), falling back to bootstrap")
        if response is None:
            response = self._bind_bootstrap(server, self.state.plug_key is not None or self.claims_rebind)
        if response.outcome is not BindKind.KEYS_ISSUED:
            raise BindRejected("UnexpectedResponse", self.serial)
        self.state.plug_key = response.plug_key
        self.state.stored_phone_key = response.phone_key
        self.state.phase = PlugPhase.BOUND
        logger.info(f"Plug {self.serial} bound, plug key {response.plug_key.fingerprint}")
        phone = self.state.paired_phone_node
        if phone is not None and self.sim.has_node(phone) and self.sim.same_lan(self.node_id, phone):
            self.sim.send(self.node_id, phone, LocalKeyDelivery(self.serial, response.phone_key), Channel.LOCAL_AP)
            self.sim.run_until_idle()
        return response

    # Relay

    def connect_relay(self, turn: str) -> int:
        """
        CHAP-authenticate to the TURN server and take a relay port.

        Args:
            turn (str): Node id of the TURN server

        Returns:
            int: The relay port granted
        """
        if self.state.plug_key is None:
            raise LifecycleError(f"plug {self.serial} has no plug key")
        challenge = self._request(turn, TurnChallengeRequest(self.serial), Channel.INTERNET, (TurnChallenge,))
        chap = chap_respond(self.state.plug_key, challenge.challenge, self.identity)
        granted = self._request(turn, TurnAllocateRequest(self.serial, chap), Channel.INTERNET,
                                (TurnAllocateResponse,))
        self.state.relay_port = granted.relay_port
        self.state.phase = PlugPhase.ONLINE
        logger.info(f"Plug {self.serial} online via relay port {granted.relay_port}")
        return granted.relay_port

    def _on_relayed(self, envelope: Envelope) -> None:
        self.commands_received += 1
        relayed = envelope.msg
        key = self.state.plug_key
        if key is None or not verify_message_integrity(key, integrity_input(relayed), relayed.integrity):
            self.integrity_failures += 1
            logger.warning(f"Plug {self.serial} discarded relayed command: MESSAGE-INTEGRITY mismatch")
            if key is not None:
                self._send_status_update()
            return
        self._apply(relayed.command.action)
        self.commands_applied += 1
        self._send_status_update()

    def _apply(self, action: ControlAction) -> SwitchStatus:
        self.state.switch = action.target_status(self.state.switch)
        logger.info(f"Plug {self.serial} switched {'on' if self.state.switch == SwitchStatus.SWITCH_ON else 'off'}")
        return self.state.switch

    def _on_local_control(self, envelope: Envelope) -> None:
        if envelope.channel is not Channel.LOCAL_AP:
            return
        # no key check on the local network
        status = self._apply(envelope.msg.action)
        self.sim.reply(envelope, LocalControlAck(self.serial, status))
        if self.state.phase is PlugPhase.ONLINE:
            self._send_status_update()

    # Status

    def _send_status_update(self) -> None:
        server = self.server_node
        if server is None or self.state.plug_key is None:
            return
        auth = compute_authorization(self.state.plug_key, self.identity, self.sim.unix_time(), self._nonce())
        self.sim.send(self.node_id, server, StatusUpdate(self.serial, self.state.switch, auth), Channel.INTERNET)

    def _on_status_ack(self, envelope: Envelope) -> None:
        logger.debug(f"Plug {self.serial} status {int(envelope.msg.status)} acknowledged")

    def _on_error(self, envelope: Envelope) -> None:
        error = envelope.msg
        if error.in_reply_to == StatusUpdate.__name__ and self.state.phase is PlugPhase.ONLINE:
            self.state.phase = PlugPhase.BOUND
            logger.warning(f"Plug {self.serial} lost its session: status update rejected ({error.reason})")

    def sync_status(self, server: str) -> SwitchStatus:
        """Report the switch state to the HTTPS server."""
        if self.state.plug_key is None:
            raise LifecycleError(f"plug {self.serial} has no plug key")
        self.server_node = server
        auth = compute_authorization(self.state.plug_key, self.identity, self.sim.unix_time(), self._nonce())
        ack = self._request(server, StatusUpdate(self.serial, self.state.switch, auth), Channel.INTERNET,
                            (StatusAck,))
        return ack.status

    def snapshot(self) -> Dict:
        return {
            'node_id': self.node_id,
            'serial': self.serial,
            'mac': format_mac(self.identity.mac),
            'phase': self.state.phase.value,
            'switch': int(self.state.switch),
            'plug_key': _fingerprint(self.state.plug_key),
            'stored_phone_key': _fingerprint(self.state.stored_phone_key),
            'relay_port': self.state.relay_port,
            'commands_received': self.commands_received,
            'commands_applied': self.commands_applied,
            'integrity_failures': self.integrity_failures,
        }


class FakePlug(SmartPlug):
    """
    Software plug run by an attacker under a victim's identity.

    It claims to be a reset plug, so its bootstrap requests carry reRegister.
    """

    kind = "fakeplug"
    claims_rebind = True
    broadcasts_mac = False

    def __init__(self, sim: SimNetwork, forged: DeviceIdentity, nat: Optional[NatRouter] = None,
                 node_id: Optional[str] = None):
        super().__init__(sim, forged, nat=nat, node_id=node_id)

    def impersonate(self, phone_id: str, phone_description: str, wifi: WifiInfo) -> None:
        """Skip pairing and adopt fabricated controller information."""
        self.state.pairing = PairSetupRequest(phone_id, phone_description, self.sim.unix_time(), wifi)
        self.state.phase = PlugPhase.PAIRED


# Smartphone

@dataclass
class PhoneState:
    phone_id: str
    description: str
    phone_key: Optional[SecretKey] = None
    known_plug: Optional[DeviceIdentity] = None


@dataclass(frozen=True)
class PairingTranscript:
    plug: DeviceIdentity
    serial_acknowledged: str
    seqs: Tuple[int, ...]


class Smartphone(Actor):
    """
    Controller app on a phone.

    Args:
        sim (SimNetwork): Network
        phone_id (str): Identifier the app sends in every request
        description (str): Human readable device name
        nat (NatRouter): Home router, or None for a phone on the Internet
    """

    kind = "phone"

    def __init__(self, sim: SimNetwork, phone_id: str, description: str, nat: Optional[NatRouter] = None,
                 mac: Optional[bytes] = None, node_id: Optional[str] = None):
        super().__init__(sim, nat=nat, mac=mac, node_id=node_id)
        self.state = PhoneState(phone_id=phone_id, description=description)
        self.on(LocalKeyDelivery, self._on_key_delivery)

    @property
    def phone_id(self) -> str:
        return self.state.phone_id

    @property
    def phone_key(self) -> Optional[SecretKey]:
        return self.state.phone_key

    def adopt_plug(self, identity: DeviceIdentity) -> None:
        self.state.known_plug = identity

    def pair(self, plug: str, wifi: WifiInfo, channel: Channel = Channel.LOCAL_AP) -> PairingTranscript:
        """
        Run the local pairing exchange with a plug in AP mode.

        Args:
            plug (str): Node id of the plug
            wifi (WifiInfo): Home AP credentials handed to the plug
            channel (Channel): Must be LocalAp

        Returns:
            PairingTranscript: Plug identity and the trace seqs of the exchange
        """
        if Channel(channel) is not Channel.LOCAL_AP:
            raise ChannelError("pairing is only possible over the plug's local AP")
        mark = len(self.sim.trace)
        info = self._request(plug, PairGetInfoRequest(self.phone_id), Channel.LOCAL_AP, (PairGetInfoResponse,))
        self.state.known_plug = info.plug
        setup = PairSetupRequest(self.phone_id, self.state.description, self.sim.unix_time(), wifi)
        ack = self._request(plug, setup, Channel.LOCAL_AP, (PairSetupAck,))
        logger.info(f"Phone {self.phone_id} paired plug {info.plug.serial}")
        seqs = tuple(record.seq for record in self.sim.trace[mark:])
        return PairingTranscript(plug=info.plug, serial_acknowledged=ack.serial, seqs=seqs)

    def _on_key_delivery(self, envelope: Envelope) -> None:
        delivery = envelope.msg
        if self.state.known_plug is not None and delivery.serial == self.state.known_plug.serial:
            self.state.phone_key = delivery.phone_key
            logger.info(f"Phone {self.phone_id} received phone key locally")

    def _require_plug(self) -> DeviceIdentity:
        if self.state.known_plug is None:
            raise LifecycleError(f"phone {self.phone_id} knows no plug")
        return self.state.known_plug

    def _auth(self):
        plug = self._require_plug()
        now = self.sim.unix_time()
        if self.state.phone_key is None:
            return dummy_authorization(plug, now, self._nonce())
        return compute_authorization(self.state.phone_key, plug, now, self._nonce())

    def fetch_key_remote(self, server: str) -> SecretKey:
        """Ask the HTTPS server for the phone key; the request carries no secret."""
        plug = self._require_plug()
        now = self.sim.unix_time()
        request = KeyFetchRequest(self.phone_id, plug.serial, now, key_fetch_mac(self.phone_id, plug.serial, now))
        response = self._request(server, request, Channel.INTERNET, (KeyFetchResponse,))
        self.state.phone_key = response.phone_key
        logger.info(f"Phone {self.phone_id} fetched phone key {response.phone_key.fingerprint}")
        return response.phone_key

    def query_status(self, server: str) -> SwitchStatus:
        plug = self._require_plug()
        reply = self._request(server, StatusQuery(self.phone_id, plug.serial, self._auth()), Channel.INTERNET,
                              (StatusReply,))
        return reply.status

    def control(self, server: str, action: ControlAction) -> ControlAck:
        """
        Send an On or Off command through the HTTPS server.

        The Authorization is computed with the phone key, or is the dummy
        one when the phone never received a key.

        Args:
            server (str): Node id of the HTTPS server
            action (ControlAction): On or Off

        Returns:
            ControlAck: Echo of the action and the relay port it was forwarded to

        Raises:
            LifecycleError: The phone knows no plug
            AuthRejected: Dummy or wrong Authorization
            Unavailable: The plug holds no relay allocation
        """
        plug = self._require_plug()
        command = ControlCommand(plug.serial, ControlAction(action), self._auth(), self.phone_id)
        return self._request(server, command, Channel.INTERNET, (ControlAck,))

    def control_local(self, plug: str, action: ControlAction = ControlAction.TOGGLE) -> SwitchStatus:
        """Switch the plug over the shared LAN. No key is involved."""
        if not self.sim.same_lan(self.node_id, plug):
            raise ChannelError(f"phone {self.phone_id} is not on the plug's local network")
        serial = self.state.known_plug.serial if self.state.known_plug else ""
        ack = self._request(plug, LocalControl(serial, ControlAction(action)), Channel.LOCAL_AP,
                            (LocalControlAck,))
        return ack.status

    def snapshot(self) -> Dict:
        return {
            'node_id': self.node_id,
            'phone_id': self.phone_id,
            'phone_key': _fingerprint(self.state.phone_key),
            'known_plug': self.state.known_plug.serial if self.state.known_plug else None,
        }


# HTTPS server

@dataclass
class BindingRecord:
    identity: DeviceIdentity
    plug_key: SecretKey
    phone_id: str
    wifi: WifiInfo
    last_public_ip: str
    phone_keys: Dict[str, SecretKey] = field(default_factory=dict)

    @property
    def phone_key(self) -> SecretKey:
        return self.phone_keys[self.phone_id]


@dataclass
class PendingTempKey:
    key: SecretKey
    expires_at: int
    re_register: bool


@dataclass
class ServerState:
    patched: bool = False
    bindings: Dict[str, BindingRecord] = field(default_factory=dict)
    plug_status: Dict[str, Tuple[SwitchStatus, int]] = field(default_factory=dict)
    allocations: Dict[str, int] = field(default_factory=dict)
    temp_keys: Dict[str, PendingTempKey] = field(default_factory=dict)


class HttpsServer(Server):
    """
    Vendor cloud: binding, key issuance, status and command forwarding.

    Args:
        sim (SimNetwork): Network
        patched (bool): Issue a fresh plug key on rebinding from a changed public address
        auth_window (int): Accepted Authorization clock skew in seconds
        sync_period (int): Expected plug status period in virtual time units
        temp_key_ttl (int): Lifetime of a temporary key
    """

    kind = "https"

    def __init__(self, sim: SimNetwork, patched: bool = False, auth_window: int = DEFAULT_AUTH_WINDOW,
                 sync_period: int = DEFAULT_SYNC_PERIOD, temp_key_ttl: int = DEFAULT_TEMP_KEY_TTL,
                 node_id: str = "https-server"):
        super().__init__(sim, node_id=node_id)
        self.state = ServerState(patched=patched)
        self.auth_window = auth_window
        self.sync_period = sync_period
        self.temp_key_ttl = temp_key_ttl
        self.turn_node: Optional[str] = None
        self.serve(BindRequest, lambda e: self.handle_bind(e.msg, e.observed_ip))
        self.serve(KeyFetchRequest, self._on_key_fetch)
        self.serve(StatusUpdate, self._on_status_update)
        self.serve(StatusQuery, self._on_status_query)
        self.serve(ControlCommand, self._on_control)
        self.on(AllocationNotice, self._on_allocation_notice)

    @property
    def patched(self) -> bool:
        return self.state.patched

    def _new_key(self, role: KeyRole) -> SecretKey:
        return SecretKey(self.sim.random_bytes(KEY_SIZE), role)

    def plug_key_for(self, serial: str) -> Optional[SecretKey]:
        record = self.state.bindings.get(serial)
        return record.plug_key if record else None

    def _verify(self, key: SecretKey, auth, serial: str) -> None:
        if auth.identity.serial != serial:
            raise AuthRejected(RejectReason.IDENTITY_MISMATCH.value, serial)
        verdict = verify_authorization(key, auth, self.sim.unix_time(), self.auth_window)
        if not verdict:
            raise AuthRejected(verdict.reason.value, serial)

    # Binding

    def handle_bind(self, req: BindRequest, observed_public_ip: str) -> BindResponse:
        """
        Answer one binding request.

        Args:
            req (BindRequest): The request
            observed_public_ip (str): Source address as seen by the server

        Returns:
            BindResponse: TempKeyIssued for a dummy request, KeysIssued otherwise
        """
        serial = req.plug.serial
        record = self.state.bindings.get(serial)
        if record is not None and not req.re_register:
            raise BindRejected("AlreadyBound", serial)

        if req.auth.is_dummy:
            temp = self._new_key(KeyRole.TEMP_KEY)
            self.state.temp_keys[serial] = PendingTempKey(temp, self.sim.now + self.temp_key_ttl, req.re_register)
            logger.info(f"Issued temporary key for {serial} to {observed_public_ip}")
            return BindResponse(serial, BindKind.TEMP_KEY_ISSUED, temp_key=temp)

        if req.auth.identity.serial != serial:
            raise AuthRejected(RejectReason.IDENTITY_MISMATCH.value, serial)

        pending = self.state.temp_keys.get(serial)
        if pending is not None:
            if self.sim.now > pending.expires_at:
                del self.state.temp_keys[serial]
                raise BindRejected("TempKeyExpired", serial)
            verdict = verify_authorization(pending.key, req.auth, self.sim.unix_time(), self.auth_window)
            if verdict:
                del self.state.temp_keys[serial]
                return self._issue_keys(req, record, observed_public_ip)
            if record is None:
                raise BindRejected(f"BadTempKey:{verdict.reason.value}", serial)

        if record is None:
            raise BindRejected("NoTemporaryKey", serial)
        self._verify(record.plug_key, req.auth, serial)
        return self._issue_keys(req, record, observed_public_ip)

    def _issue_keys(self, req: BindRequest, record: Optional[BindingRecord], observed_ip: str) -> BindResponse:
        serial = req.plug.serial
        phone_key = self._new_key(KeyRole.PHONE_KEY)
        if record is None:
            record = BindingRecord(identity=req.plug, plug_key=self._new_key(KeyRole.PLUG_KEY),
                                   phone_id=req.phone_id, wifi=req.wifi, last_public_ip=observed_ip)
            self.state.bindings[serial] = record
            logger.info(f"Bound {serial} to phone {req.phone_id}")
        else:
            if self.state.patched and observed_ip != record.last_public_ip:
                record.plug_key = self._new_key(KeyRole.PLUG_KEY)
                logger.warning(f"Rebind of {serial} from new address {observed_ip} "
                               f"(was {record.last_public_ip}): issuing fresh plug key")
            else:
                logger.info(f"Rebound {serial} for phone {req.phone_id}, original plug key returned")
            record.identity = req.plug
            record.phone_id = req.phone_id
            record.wifi = req.wifi
            record.last_public_ip = observed_ip
        record.phone_keys[req.phone_id] = phone_key
        return BindResponse(serial, BindKind.KEYS_ISSUED, plug_key=record.plug_key, phone_key=phone_key)

    # Keys, status and control

    def _on_key_fetch(self, envelope: Envelope) -> KeyFetchResponse:
        req = envelope.msg
        record = self.state.bindings.get(req.serial)
        if record is None or req.phone_id not in record.phone_keys:
            raise NotBound("UnknownAssociation", req.serial)
        if not hmac.compare_digest(req.mac_field, key_fetch_mac(req.phone_id, req.serial, req.timestamp)):
            raise AuthRejected(RejectReason.BAD_DIGEST.value, req.serial)
        return KeyFetchResponse(req.serial, record.phone_keys[req.phone_id])

    def _on_status_update(self, envelope: Envelope) -> StatusAck:
        update = envelope.msg
        record = self.state.bindings.get(update.serial)
        if record is None:
            raise NotBound("UnknownPlug", update.serial)
        self._verify(record.plug_key, update.auth, update.serial)
        self.state.plug_status[update.serial] = (update.status, self.sim.now)
        return StatusAck(update.serial, update.status)

    def _phone_key(self, serial: str, phone_id: str) -> SecretKey:
        record = self.state.bindings.get(serial)
        if record is None:
            raise NotBound("UnknownPlug", serial)
        key = record.phone_keys.get(phone_id)
        if key is None:
            raise AuthRejected("UnknownPhone", serial)
        return key

    def current_status(self, serial: str) -> SwitchStatus:
        """Last synced status, or Unavailable without a relay or a recent sync."""
        if serial not in self.state.allocations or serial not in self.state.plug_status:
            return SwitchStatus.UNAVAILABLE
        status, synced_at = self.state.plug_status[serial]
        if self.sim.now - synced_at > 2 * self.sync_period:
            return SwitchStatus.UNAVAILABLE
        return status

    def _on_status_query(self, envelope: Envelope) -> StatusReply:
        query = envelope.msg
        key = self._phone_key(query.serial, query.phone_id)
        self._verify(key, query.auth, query.serial)
        return StatusReply(query.serial, self.current_status(query.serial))

    def _on_control(self, envelope: Envelope) -> ControlAck:
        command = envelope.msg
        if command.auth.is_dummy:
            raise AuthRejected(RejectReason.DUMMY.value, command.target_serial)
        key = self._phone_key(command.target_serial, command.phone_id)
        self._verify(key, command.auth, command.target_serial)
        port = self.state.allocations.get(command.target_serial)
        if port is None or self.turn_node is None:
            raise Unavailable("NoRelayAllocation", command.target_serial)
        self.sim.send(self.node_id, self.turn_node, RelayForward(command), Channel.SERVER_INTERNAL)
        logger.info(f"Forwarded {command.action.value} for {command.target_serial} to relay port {port}")
        return ControlAck(command.target_serial, command.action, port)

    def _on_allocation_notice(self, envelope: Envelope) -> None:
        notice = envelope.msg
        self.state.allocations[notice.serial] = notice.relay_port

    def snapshot(self) -> Dict:
        return {
            'node_id': self.node_id,
            'patched': self.state.patched,
            'bindings': {
                serial: {
                    'plug_key': record.plug_key.fingerprint,
                    'phone_id': record.phone_id,
                    'phone_keys': {pid: k.fingerprint for pid, k in sorted(record.phone_keys.items())},
                    'ssid': record.wifi.ssid,
                    'last_public_ip': record.last_public_ip,
                }
                for serial, record in sorted(self.state.bindings.items())
            },
            'plug_status': {serial: int(self.current_status(serial)) for serial in sorted(self.state.bindings)},
            'allocations': dict(sorted(self.state.allocations.items())),
        }


# TURN server

@dataclass
class Allocation:
    serial: str
    relay_port: int
    holder: str
    envelope: Envelope
    relayed: int = 0


@dataclass
class TurnState:
    allocations: Dict[str, Allocation] = field(default_factory=dict)
    challenges: Dict[Tuple[str, str], bytes] = field(default_factory=dict)


class TurnServer(Server):
    """
    Relay for NAT'd plugs. Reads plug keys from the HTTPS server.

    The latest successful allocation for a serial replaces any earlier one.
    """

    kind = "turn"

    def __init__(self, sim: SimNetwork, https: HttpsServer, node_id: str = "turn-server"):
        super().__init__(sim, node_id=node_id)
        self.https = https
        https.turn_node = self.node_id
        self.state = TurnState()
        self._next_port = RELAY_PORT_BASE
        self.serve(TurnChallengeRequest, self._on_challenge_request)
        self.serve(TurnAllocateRequest, self._on_allocate)
        self.on(RelayForward, self._on_relay_forward)

    def holder_of(self, serial: str) -> Optional[str]:
        allocation = self.state.allocations.get(serial)
        return allocation.holder if allocation else None

    def _on_challenge_request(self, envelope: Envelope) -> TurnChallenge:
        serial = envelope.msg.serial
        challenge = self.sim.random_bytes(CHALLENGE_SIZE)
        self.state.challenges[(serial, envelope.src)] = challenge
        return TurnChallenge(serial, challenge)

    def _on_allocate(self, envelope: Envelope) -> TurnAllocateResponse:
        req = envelope.msg
        expected = self.state.challenges.pop((req.serial, envelope.src), None)
        if expected is None or expected != req.chap.challenge:
            raise AllocationDenied(RejectReason.CHALLENGE_MISMATCH.value, req.serial)
        if req.chap.peer_id.serial != req.serial:
            raise AllocationDenied(RejectReason.IDENTITY_MISMATCH.value, req.serial)
        return TurnAllocateResponse(req.serial, self.allocate(envelope))

    def allocate(self, envelope: Envelope) -> int:
        """
        Verify the CHAP exchange in ``envelope`` and give its sender the relay.

        The key is read from the HTTPS server's binding record, and any
        earlier allocation for the serial is replaced.

        Args:
            envelope (Envelope): The TurnAllocateRequest as delivered

        Returns:
            int: The new relay port

        Raises:
            AllocationDenied: Unbound serial or a CHAP response that does not verify
        """
        req = envelope.msg
        key = self.https.plug_key_for(req.serial)
        if key is None:
            raise AllocationDenied("NotBound", req.serial)
        verdict = chap_verify(key, req.chap)
        if not verdict:
            raise AllocationDenied(verdict.reason.value, req.serial)
        previous = self.state.allocations.get(req.serial)
        port = self._next_port
        self._next_port += 1
        self.state.allocations[req.serial] = Allocation(req.serial, port, envelope.src, envelope)
        if previous is not None and previous.holder != envelope.src:
            logger.warning(f"Relay for {req.serial} moved from {previous.holder} to {envelope.src} "
                           f"({envelope.observed_src})")
        else:
            logger.info(f"Relay port {port} allocated for {req.serial}")
        self.sim.send(self.node_id, self.https.node_id, AllocationNotice(req.serial, port), Channel.SERVER_INTERNAL)
        return port

    def relay(self, command: ControlCommand) -> Optional[Envelope]:
        """
        Seal ``command`` with MESSAGE-INTEGRITY and push it to the allocation holder.

        Args:
            command (ControlCommand): Command forwarded by the HTTPS server

        Returns:
            Optional[Envelope]: The relayed envelope, or None without an allocation
        """
        allocation = self.state.allocations.get(command.target_serial)
        key = self.https.plug_key_for(command.target_serial)
        if allocation is None or key is None:
            logger.warning(f"No relay allocation for {command.target_serial}, command dropped")
            return None
        unsealed = TurnRelayedCommand(command, IntegrityAttribute.zeroed())
        sealed = TurnRelayedCommand(command, compute_message_integrity(key, integrity_input(unsealed)))
        allocation.relayed += 1
        return self.sim.reply(allocation.envelope, sealed)

    def _on_relay_forward(self, envelope: Envelope) -> None:
        self.relay(envelope.msg.command)

    def snapshot(self) -> Dict:
        return {
            'node_id': self.node_id,
            'allocations': {
                serial: {'relay_port': a.relay_port, 'holder': a.holder, 'relayed': a.relayed}
                for serial, a in sorted(self.state.allocations.items())
            },
        }
