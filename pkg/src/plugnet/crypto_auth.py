"""
Crypto and Authentication Module for plugnet

HMAC-SHA1 primitives and the authentication material carried by the plug
protocol: Authorization fields, MESSAGE-INTEGRITY attributes, the CHAP
exchange run by the TURN server, and the serial-from-MAC derivation.
"""

import hashlib
import hmac
import logging
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Optional

from .exceptions import InvalidKey, InvalidMac, WrongKeyRole

if TYPE_CHECKING:
    from .messages import DeviceIdentity

logger = logging.getLogger(__name__)

DIGEST_SIZE = 20
NONCE_SIZE = 8
CHALLENGE_SIZE = 16
MAX_KEY_SIZE = 64
DUMMY_DIGEST = b"dummy"
DEFAULT_AUTH_WINDOW = 300
SERIAL_PREFIX = "221"


class KeyRole(str, Enum):
    PLUG_KEY = "PlugKey"
    PHONE_KEY = "PhoneKey"
    TEMP_KEY = "TempKey"


class RejectReason(str, Enum):
    DUMMY = "Dummy"
    STALE = "Stale"
    BAD_DIGEST = "BadDigest"
    IDENTITY_MISMATCH = "IdentityMismatch"
    CHALLENGE_MISMATCH = "ChallengeMismatch"


@dataclass(frozen=True)
class Verdict:
    """Outcome of a verification. Truthy iff accepted."""

    accepted: bool
    reason: Optional[RejectReason] = None

    @classmethod
    def accept(cls) -> "Verdict":
        return cls(True)

    @classmethod
    def reject(cls, reason: RejectReason) -> "Verdict":
        return cls(False, reason)

    def __bool__(self) -> bool:
        return self.accepted


@dataclass(frozen=True, eq=False)
class SecretKey:
    """HMAC secret issued by the HTTPS server."""

    key_bytes: bytes
    role: KeyRole

    def __post_init__(self):
        if not isinstance(self.key_bytes, bytes) or not 1 <= len(self.key_bytes) <= MAX_KEY_SIZE:
            raise InvalidKey(f"key must be 1-{MAX_KEY_SIZE} bytes")

    def __eq__(self, other):
        if not isinstance(other, SecretKey):
            return NotImplemented
        return self.role == other.role and hmac.compare_digest(self.key_bytes, other.key_bytes)

    def __hash__(self):
        return hash((self.role, self.key_bytes))

    def __repr__(self):
        return f"SecretKey(role={self.role.value}, fingerprint={self.fingerprint})"

    @property
    def fingerprint(self) -> str:
        """Short non-secret identifier for logs."""
        return hashlib.sha1(self.key_bytes).hexdigest()[:8]


@dataclass(frozen=True)
class AuthField:
    """The ``Authorization`` value of a request to the HTTPS server."""

    identity: "DeviceIdentity"
    timestamp: int
    nonce: bytes
    digest: bytes
    is_dummy: bool = False

    def __post_init__(self):
        if len(self.nonce) != NONCE_SIZE:
            raise ValueError(f"nonce must be {NONCE_SIZE} bytes")
        if self.is_dummy:
            if self.digest != DUMMY_DIGEST:
                raise ValueError("dummy authorization must carry the literal digest 'dummy'")
        elif len(self.digest) != DIGEST_SIZE:
            raise ValueError(f"digest must be {DIGEST_SIZE} bytes")


@dataclass(frozen=True)
class ChapExchange:
    challenge: bytes
    response: bytes
    peer_id: "DeviceIdentity"

    def __post_init__(self):
        if len(self.challenge) != CHALLENGE_SIZE:
            raise ValueError(f"challenge must be {CHALLENGE_SIZE} bytes")
        if len(self.response) != DIGEST_SIZE:
            raise ValueError(f"response must be {DIGEST_SIZE} bytes")


@dataclass(frozen=True)
class IntegrityAttribute:
    digest: bytes

    def __post_init__(self):
        if len(self.digest) != DIGEST_SIZE:
            raise ValueError(f"MESSAGE-INTEGRITY must be {DIGEST_SIZE} bytes")

    @classmethod
    def zeroed(cls) -> "IntegrityAttribute":
        return cls(bytes(DIGEST_SIZE))


def hmac_sha1(key: bytes, message: bytes) -> bytes:
    """
    HMAC-SHA1 of ``message`` under ``key``.

    Args:
        key (bytes): Non-empty key material
        message (bytes): Data to authenticate

    Returns:
        bytes: 20-byte digest
    """
    if not key:
        raise InvalidKey("HMAC key must not be empty")
    return hmac.new(key, message, hashlib.sha1).digest()


def canonical_auth_string(identity: "DeviceIdentity", timestamp: int, nonce: bytes) -> bytes:
    """``serial:timestamp:hex(nonce)`` in ASCII."""
    return f"{identity.serial}:{int(timestamp)}:{nonce.hex()}".encode("ascii")


def compute_authorization(key: SecretKey, identity: "DeviceIdentity", timestamp: int,
                          nonce: bytes) -> AuthField:
    digest = hmac_sha1(key.key_bytes, canonical_auth_string(identity, timestamp, nonce))
    return AuthField(identity=identity, timestamp=int(timestamp), nonce=nonce, digest=digest)


def dummy_authorization(identity: "DeviceIdentity", timestamp: int,
                        nonce: bytes = bytes(NONCE_SIZE)) -> AuthField:
    """Authorization used when the sender has no key yet (or pretends it lost it)."""
    return AuthField(identity=identity, timestamp=int(timestamp), nonce=nonce,
                     digest=DUMMY_DIGEST, is_dummy=True)


def verify_authorization(key: SecretKey, field: AuthField, now: int,
                         window: int = DEFAULT_AUTH_WINDOW) -> Verdict:
    """
    Check an Authorization field against ``key``.

    Args:
        key (SecretKey): Key the verifier holds for the sender
        field (AuthField): Received authorization
        now (int): Verifier's clock, unix seconds
        window (int): Accepted clock skew in seconds

    Returns:
        Verdict: accept, or reject with a reason
    """
    if field.is_dummy:
        return Verdict.reject(RejectReason.DUMMY)
    if abs(int(now) - field.timestamp) > window:
        return Verdict.reject(RejectReason.STALE)
    expected = hmac_sha1(key.key_bytes, canonical_auth_string(field.identity, field.timestamp, field.nonce))
    if not hmac.compare_digest(expected, field.digest):
        return Verdict.reject(RejectReason.BAD_DIGEST)
    return Verdict.accept()


def _require_plug_key(key: SecretKey) -> None:
    if key.role is not KeyRole.PLUG_KEY:
        raise WrongKeyRole(f"CHAP needs a plug key, got {key.role.value}")


def chap_respond(key: SecretKey, challenge: bytes, peer: "DeviceIdentity") -> ChapExchange:
    _require_plug_key(key)
    response = hmac_sha1(key.key_bytes, challenge + peer.serial.encode("ascii"))
    return ChapExchange(challenge=challenge, response=response, peer_id=peer)


def chap_verify(key: SecretKey, exchange: ChapExchange) -> Verdict:
    _require_plug_key(key)
    expected = hmac_sha1(key.key_bytes, exchange.challenge + exchange.peer_id.serial.encode("ascii"))
    if hmac.compare_digest(expected, exchange.response):
        return Verdict.accept()
    return Verdict.reject(RejectReason.BAD_DIGEST)


def compute_message_integrity(key: SecretKey, message_bytes: bytes) -> IntegrityAttribute:
    """
    MESSAGE-INTEGRITY over ``message_bytes``.

    The caller passes the serialization of the message with its own
    integrity attribute zeroed (see ``messages.integrity_input``).
    """
    return IntegrityAttribute(hmac_sha1(key.key_bytes, message_bytes))


def verify_message_integrity(key: SecretKey, message_bytes: bytes,
                             attribute: IntegrityAttribute) -> Verdict:
    expected = hmac_sha1(key.key_bytes, message_bytes)
    if hmac.compare_digest(expected, attribute.digest):
        return Verdict.accept()
    return Verdict.reject(RejectReason.BAD_DIGEST)


def parse_mac(text: str) -> bytes:
    """``"ec:1a:59:00:00:01"`` -> six octets."""
    parts = text.replace("-", ":").split(":")
    try:
        mac = bytes(int(part, 16) for part in parts)
    except ValueError as e:
        raise InvalidMac(f"not a MAC address: {text!r}") from e
    if len(mac) != 6 or any(len(part) != 2 for part in parts):
        raise InvalidMac(f"not a MAC address: {text!r}")
    return mac


def format_mac(mac: bytes) -> str:
    return ":".join(f"{b:02x}" for b in mac)


def derive_serial(mac: bytes) -> str:
    """
    Serial number of a genuine plug, computed from its MAC.

    The vendor prefix followed by the upper-case hex of all six octets, so
    the map is injective and anyone who sniffs the MAC knows the serial.
    """
    if not isinstance(mac, bytes) or len(mac) != 6:
        raise InvalidMac("MAC must be exactly 6 bytes")
    return SERIAL_PREFIX + mac.hex().upper()
