"""
Messages Module for plugnet

Every wire message of the pairing, binding, authentication and control
phases as immutable values, plus the canonical byte serialization used for
traces and for entropy analysis.

Frame layout (all integers big-endian)::

    u16 tag length | tag (ASCII) | u16 field count | field*
    field := type code (1 byte) | u32 payload length | payload

Type codes: ``n`` None, ``b`` bool, ``i`` signed 64-bit int, ``s`` UTF-8
string, ``x`` octet string as lowercase hex, ``e`` enum as
``EnumName:value``, ``m`` nested frame. Fields appear in declaration order
and carry no names. Decoding checks each value against the declared field
type and refuses frames nested more than MAX_NESTING levels deep.
"""

import dataclasses
import logging
import struct
import typing
from dataclasses import dataclass
from enum import Enum, IntEnum
from functools import lru_cache
from typing import Any, Dict, Optional, Tuple, Type

from .crypto_auth import (
    AuthField,
    ChapExchange,
    IntegrityAttribute,
    KeyRole,
    SecretKey,
    hmac_sha1,
)
from .exceptions import ParseError

logger = logging.getLogger(__name__)

_TAG_LEN = struct.Struct(">H")
_COUNT = struct.Struct(">H")
_FIELD_HEAD = struct.Struct(">cI")
_INT = struct.Struct(">q")

MAX_NESTING = 8

_WIRE_TYPES: Dict[str, type] = {}
_ENUMS: Dict[str, Type[Enum]] = {}


def wire_type(cls):
    """Register a dataclass so it can be framed on the wire."""
    _WIRE_TYPES[cls.__name__] = cls
    return cls


def wire_enum(cls):
    _ENUMS[cls.__name__] = cls
    return cls


class SwitchStatus(IntEnum):
    SWITCH_OFF = 0
    SWITCH_ON = 1
    UNAVAILABLE = 3


class ControlAction(str, Enum):
    ON = "On"
    OFF = "Off"
    TOGGLE = "Toggle"

    def target_status(self, current: SwitchStatus) -> SwitchStatus:
        if self is ControlAction.ON:
            return SwitchStatus.SWITCH_ON
        if self is ControlAction.OFF:
            return SwitchStatus.SWITCH_OFF
        return SwitchStatus.SWITCH_OFF if current == SwitchStatus.SWITCH_ON else SwitchStatus.SWITCH_ON


class BindKind(str, Enum):
    TEMP_KEY_ISSUED = "TempKeyIssued"
    KEYS_ISSUED = "KeysIssued"


for _enum in (SwitchStatus, ControlAction, BindKind, KeyRole):
    wire_enum(_enum)


class ProtocolMessage:
    """Base of every top-level wire message."""

    @property
    def kind(self) -> str:
        return type(self).__name__


# Value types

@wire_type
@dataclass(frozen=True)
class DeviceIdentity:
    """What a plug says about itself: MAC, the serial derived from it and a model string."""

    mac: bytes
    serial: str
    description: str = ""

    def __post_init__(self):
        if len(self.mac) != 6:
            raise ValueError("MAC must be 6 bytes")


@wire_type
@dataclass(frozen=True)
class WifiInfo:
    """Home AP credentials. Only pairing carries the passphrase."""

    ssid: str
    ap_mac: bytes
    passphrase: str = ""

    def __post_init__(self):
        if not self.ssid:
            raise ValueError("ssid must not be empty")
        if len(self.ap_mac) != 6:
            raise ValueError("AP MAC must be 6 bytes")

    def without_passphrase(self) -> "WifiInfo":
        return dataclasses.replace(self, passphrase="")


for _crypto_type in (SecretKey, AuthField, ChapExchange, IntegrityAttribute):
    wire_type(_crypto_type)


# Pairing (local AP channel)

@wire_type
@dataclass(frozen=True)
class PairGetInfoRequest(ProtocolMessage):
    phone_id: str


@wire_type
@dataclass(frozen=True)
class PairGetInfoResponse(ProtocolMessage):
    plug: DeviceIdentity


@wire_type
@dataclass(frozen=True)
class PairSetupRequest(ProtocolMessage):
    phone_id: str
    phone_description: str
    timestamp: int
    wifi: WifiInfo

    def __post_init__(self):
        if self.timestamp <= 0:
            raise ValueError("timestamp must be positive")


@wire_type
@dataclass(frozen=True)
class PairSetupAck(ProtocolMessage):
    serial: str


@wire_type
@dataclass(frozen=True)
class LocalKeyDelivery(ProtocolMessage):
    serial: str
    phone_key: SecretKey


@wire_type
@dataclass(frozen=True)
class LocalControl(ProtocolMessage):
    serial: str
    action: ControlAction


@wire_type
@dataclass(frozen=True)
class LocalControlAck(ProtocolMessage):
    serial: str
    status: SwitchStatus


# Binding

@wire_type
@dataclass(frozen=True)
class BindRequest(ProtocolMessage):
    """
    Plug to HTTPS server: register this plug for the phone that paired it.

    ``re_register`` asks the server to replace an existing binding, which a
    factory-reset plug (or anything claiming to be one) sets.
    """

    plug: DeviceIdentity
    phone_id: str
    phone_description: str
    wifi: WifiInfo
    timestamp: int
    auth: AuthField
    re_register: bool = False

    def __post_init__(self):
        if self.wifi.passphrase:
            raise ValueError("binding requests carry only ssid and AP MAC")


@wire_type
@dataclass(frozen=True)
class BindResponse(ProtocolMessage):
    """
    HTTPS server to plug.

    ``outcome`` TempKeyIssued carries only ``temp_key``; KeysIssued carries
    ``plug_key`` and ``phone_key``.
    """

    serial: str
    outcome: BindKind
    temp_key: Optional[SecretKey] = None
    plug_key: Optional[SecretKey] = None
    phone_key: Optional[SecretKey] = None

    def __post_init__(self):
        if self.outcome is BindKind.TEMP_KEY_ISSUED:
            if self.temp_key is None or self.plug_key is not None or self.phone_key is not None:
                raise ValueError("TempKeyIssued carries only a temp key")
            if self.temp_key.role is not KeyRole.TEMP_KEY:
                raise ValueError("temp_key must have role TempKey")
        else:
            if self.temp_key is not None or self.plug_key is None or self.phone_key is None:
                raise ValueError("KeysIssued carries exactly a plug key and a phone key")
            if self.plug_key.role is not KeyRole.PLUG_KEY or self.phone_key.role is not KeyRole.PHONE_KEY:
                raise ValueError("KeysIssued key roles must be PlugKey and PhoneKey")


@wire_type
@dataclass(frozen=True)
class KeyFetchRequest(ProtocolMessage):
    """Phone asks for its phone key. ``mac_field`` is keyed with the serial only."""

    phone_id: str
    serial: str
    timestamp: int
    mac_field: bytes

    def __post_init__(self):
        if len(self.mac_field) != 20:
            raise ValueError("mac_field must be 20 bytes")


@wire_type
@dataclass(frozen=True)
class KeyFetchResponse(ProtocolMessage):
    serial: str
    phone_key: SecretKey


# Status and control (HTTPS server)

@wire_type
@dataclass(frozen=True)
class StatusUpdate(ProtocolMessage):
    serial: str
    status: SwitchStatus
    auth: AuthField


@wire_type
@dataclass(frozen=True)
class StatusAck(ProtocolMessage):
    serial: str
    status: SwitchStatus


@wire_type
@dataclass(frozen=True)
class StatusQuery(ProtocolMessage):
    phone_id: str
    serial: str
    auth: AuthField


@wire_type
@dataclass(frozen=True)
class StatusReply(ProtocolMessage):
    serial: str
    status: SwitchStatus


@wire_type
@dataclass(frozen=True)
class ControlCommand(ProtocolMessage):
    """Remote On/Off from a phone, authorized with its phone key."""

    target_serial: str
    action: ControlAction
    auth: AuthField
    phone_id: str = ""

    def __post_init__(self):
        if self.action is ControlAction.TOGGLE:
            raise ValueError("remote commands are On or Off")


@wire_type
@dataclass(frozen=True)
class ControlAck(ProtocolMessage):
    serial: str
    action: ControlAction
    relay_port: int


@wire_type
@dataclass(frozen=True)
class ErrorResponse(ProtocolMessage):
    """A refusal. ``code`` names the rejection class, ``in_reply_to`` the refused message kind."""

    code: str
    reason: str
    subject: str = ""
    in_reply_to: str = ""


# TURN relay

@wire_type
@dataclass(frozen=True)
class TurnChallengeRequest(ProtocolMessage):
    serial: str


@wire_type
@dataclass(frozen=True)
class TurnChallenge(ProtocolMessage):
    serial: str
    challenge: bytes


@wire_type
@dataclass(frozen=True)
class TurnAllocateRequest(ProtocolMessage):
    serial: str
    chap: ChapExchange


@wire_type
@dataclass(frozen=True)
class TurnAllocateResponse(ProtocolMessage):
    serial: str
    relay_port: int


@wire_type
@dataclass(frozen=True)
class AllocationNotice(ProtocolMessage):
    serial: str
    relay_port: int


@wire_type
@dataclass(frozen=True)
class RelayForward(ProtocolMessage):
    command: ControlCommand


@wire_type
@dataclass(frozen=True)
class TurnRelayedCommand(ProtocolMessage):
    """A control command pushed down the relay, sealed with the plug key."""

    command: ControlCommand
    integrity: IntegrityAttribute


PROTOCOL_MESSAGES = tuple(cls for cls in _WIRE_TYPES.values() if issubclass(cls, ProtocolMessage))


def is_wire_type(value: Any) -> bool:
    return _WIRE_TYPES.get(type(value).__name__) is type(value)


# Serialization

def _encode_value(value: Any) -> Tuple[bytes, bytes]:
    if value is None:
        return b"n", b""
    if isinstance(value, bool):
        return b"b", b"\x01" if value else b"\x00"
    if isinstance(value, Enum):
        name = type(value).__name__
        if name not in _ENUMS:
            raise TypeError(f"enum {name} is not registered for the wire")
        return b"e", f"{name}:{value.value}".encode("ascii")
    if isinstance(value, int):
        return b"i", _INT.pack(value)
    if isinstance(value, str):
        return b"s", value.encode("utf-8")
    if isinstance(value, bytes):
        return b"x", value.hex().encode("ascii")
    if is_wire_type(value):
        return b"m", serialize(value)
    raise TypeError(f"cannot serialize {type(value).__name__}")


def serialize(msg: Any) -> bytes:
    """
    Canonical bytes of a message or registered value type.

    Args:
        msg: Instance of a registered wire dataclass

    Returns:
        bytes: Frame per the module layout
    """
    if not is_wire_type(msg):
        raise TypeError(f"{type(msg).__name__} is not a wire type")
    tag = type(msg).__name__.encode("ascii")
    fields = dataclasses.fields(msg)
    parts = [_TAG_LEN.pack(len(tag)), tag, _COUNT.pack(len(fields))]
    for field in fields:
        code, payload = _encode_value(getattr(msg, field.name))
        parts.append(_FIELD_HEAD.pack(code, len(payload)))
        parts.append(payload)
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes, base: int = 0):
        self.data = data
        self.base = base
        self.pos = 0

    @property
    def offset(self) -> int:
        return self.base + self.pos

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ParseError(f"truncated frame: need {n} bytes", offset=self.offset)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, st: struct.Struct) -> tuple:
        return st.unpack(self.take(st.size))


def _read_tag(reader: _Reader) -> str:
    (length,) = reader.unpack(_TAG_LEN)
    start = reader.offset
    raw = reader.take(length)
    try:
        return raw.decode("ascii")
    except UnicodeDecodeError as e:
        raise ParseError("tag is not ASCII", offset=start) from e


@lru_cache(maxsize=None)
def _field_types(cls: type) -> Tuple[Any, ...]:
    hints = typing.get_type_hints(cls, localns=globals())
    return tuple(hints[f.name] for f in dataclasses.fields(cls))


def _matches(value: Any, hint: Any) -> bool:
    if hint is Any:
        return True
    if typing.get_origin(hint) is typing.Union:
        return any(_matches(value, arg) for arg in typing.get_args(hint))
    if hint is type(None):
        return value is None
    if hint in (bool, int, str, bytes):
        # no bool for int, no str-valued enum for str
        return type(value) is hint
    return isinstance(value, hint)


def _decode_value(code: bytes, payload: bytes, offset: int, depth: int) -> Any:
    try:
        if code == b"n":
            if payload:
                raise ParseError("None field with payload", offset=offset)
            return None
        if code == b"b":
            if payload not in (b"\x00", b"\x01"):
                raise ParseError("bad bool", offset=offset)
            return payload == b"\x01"
        if code == b"i":
            if len(payload) != _INT.size:
                raise ParseError("bad int width", offset=offset)
            return _INT.unpack(payload)[0]
        if code == b"s":
            return payload.decode("utf-8")
        if code == b"x":
            return bytes.fromhex(payload.decode("ascii"))
        if code == b"e":
            name, _, raw = payload.decode("ascii").partition(":")
            enum_cls = _ENUMS.get(name)
            if enum_cls is None:
                raise ParseError(f"unknown enum {name!r}", offset=offset)
            return enum_cls(int(raw)) if issubclass(enum_cls, IntEnum) else enum_cls(raw)
        if code == b"m":
            if depth >= MAX_NESTING:
                raise ParseError(f"frames nested deeper than {MAX_NESTING}", offset=offset)
            return _decode_frame(_Reader(payload, offset), whole=True, depth=depth + 1)
    except ValueError as e:
        raise ParseError(f"bad field payload: {e}", offset=offset) from e
    raise ParseError(f"unknown field type {code!r}", offset=offset)


def _decode_frame(reader: _Reader, whole: bool, depth: int = 0) -> Any:
    frame_start = reader.offset
    tag = _read_tag(reader)
    cls = _WIRE_TYPES.get(tag)
    if cls is None:
        raise ParseError(f"unknown message tag {tag!r}", offset=frame_start)
    (count,) = reader.unpack(_COUNT)
    fields = dataclasses.fields(cls)
    if count != len(fields):
        raise ParseError(f"{tag} expects {len(fields)} fields, got {count}", offset=frame_start)
    values = []
    for field, hint in zip(fields, _field_types(cls)):
        code, length = reader.unpack(_FIELD_HEAD)
        payload_offset = reader.offset
        value = _decode_value(code, reader.take(length), payload_offset, depth)
        if not _matches(value, hint):
            raise ParseError(f"{tag}.{field.name} cannot hold {type(value).__name__}", offset=payload_offset)
        values.append(value)
    if whole and reader.pos != len(reader.data):
        raise ParseError("trailing bytes after frame", offset=reader.offset)
    try:
        return cls(*values)
    except (TypeError, ValueError, AttributeError) as e:
        raise ParseError(f"invalid {tag}: {e}", offset=frame_start) from e


def deserialize(data: bytes) -> Any:
    """
    Inverse of ``serialize``.

    Every field is checked against the declared type of its dataclass field
    and nested frames may go at most MAX_NESTING levels deep.

    Raises:
        ParseError: With the byte offset of the fault
    """
    if not data:
        raise ParseError("empty buffer", offset=0)
    return _decode_frame(_Reader(bytes(data)), whole=True)


def message_kind(data: bytes) -> str:
    """Peek the tag of a frame without decoding its fields."""
    if not data:
        raise ParseError("empty buffer", offset=0)
    return _read_tag(_Reader(bytes(data)))


# Helpers shared by actors and analysis

def integrity_input(relayed: TurnRelayedCommand) -> bytes:
    """Serialization of a relayed command with its integrity attribute zeroed."""
    return serialize(dataclasses.replace(relayed, integrity=IntegrityAttribute.zeroed()))


def key_fetch_mac(phone_id: str, serial: str, timestamp: int) -> bytes:
    # keyed with the plug serial, so the server needs only its binding records
    return hmac_sha1(serial.encode("ascii"), f"{phone_id}{serial}{int(timestamp)}".encode("utf-8"))


def redact_for_trace(msg: Any) -> Any:
    """Copy of ``msg`` whose Wi-Fi passphrase is replaced by asterisks of equal length."""
    if isinstance(msg, PairSetupRequest) and msg.wifi.passphrase:
        wifi = dataclasses.replace(msg.wifi, passphrase="*" * len(msg.wifi.passphrase))
        return dataclasses.replace(msg, wifi=wifi)
    return msg
