import random
import struct

import pytest

from plugnet.crypto_auth import (
    ChapExchange,
    IntegrityAttribute,
    KeyRole,
    SecretKey,
    compute_authorization,
    derive_serial,
    dummy_authorization,
)
from plugnet.exceptions import ParseError
from plugnet.messages import (
    MAX_NESTING,
    PROTOCOL_MESSAGES,
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
    deserialize,
    integrity_input,
    key_fetch_mac,
    message_kind,
    redact_for_trace,
    serialize,
)

MAC = bytes.fromhex("ec1a59abcdef")
PLUG = DeviceIdentity(MAC, derive_serial(MAC), "WeMo Smart Plug")
AP_MAC = bytes.fromhex("f4f26d000001")
TS = 1_600_000_000
PLUG_KEY = SecretKey(b"\x11" * 20, KeyRole.PLUG_KEY)
PHONE_KEY = SecretKey(b"\x22" * 20, KeyRole.PHONE_KEY)


def bind_request(**overrides):
    fields = dict(plug=PLUG, phone_id="alice-phone", phone_description="Alice's phone",
                  wifi=WifiInfo("HomeNet", AP_MAC), timestamp=TS,
                  auth=dummy_authorization(PLUG, TS), re_register=False)
    fields.update(overrides)
    return BindRequest(**fields)


def relayed_command():
    auth = compute_authorization(PHONE_KEY, PLUG, TS, b"\x01" * 8)
    return TurnRelayedCommand(ControlCommand(PLUG.serial, ControlAction.ON, auth, "alice-phone"),
                              IntegrityAttribute(b"\x33" * 20))


def sample_messages():
    auth = compute_authorization(PHONE_KEY, PLUG, TS, b"\x01" * 8)
    command = ControlCommand(PLUG.serial, ControlAction.ON, auth, "alice-phone")
    challenge = b"\x44" * 16
    return [
        PairGetInfoRequest("alice-phone"),
        PairGetInfoResponse(PLUG),
        PairSetupRequest("alice-phone", "Alice's phone", TS, WifiInfo("HomeNet", AP_MAC, "hunter22")),
        PairSetupAck(PLUG.serial),
        LocalKeyDelivery(PLUG.serial, PHONE_KEY),
        LocalControl(PLUG.serial, ControlAction.TOGGLE),
        LocalControlAck(PLUG.serial, SwitchStatus.SWITCH_ON),
        bind_request(),
        BindResponse(PLUG.serial, BindKind.TEMP_KEY_ISSUED, temp_key=SecretKey(b"t" * 20, KeyRole.TEMP_KEY)),
        BindResponse(PLUG.serial, BindKind.KEYS_ISSUED, plug_key=PLUG_KEY, phone_key=PHONE_KEY),
        KeyFetchRequest("alice-phone", PLUG.serial, TS, key_fetch_mac("alice-phone", PLUG.serial, TS)),
        KeyFetchResponse(PLUG.serial, PHONE_KEY),
        StatusUpdate(PLUG.serial, SwitchStatus.SWITCH_OFF, compute_authorization(PLUG_KEY, PLUG, TS, b"\x02" * 8)),
        StatusAck(PLUG.serial, SwitchStatus.SWITCH_OFF),
        StatusQuery("alice-phone", PLUG.serial, auth),
        StatusReply(PLUG.serial, SwitchStatus.UNAVAILABLE),
        command,
        ControlAck(PLUG.serial, ControlAction.OFF, 49152),
        ErrorResponse("AuthRejected", "BadDigest", PLUG.serial, "ControlCommand"),
        TurnChallengeRequest(PLUG.serial),
        TurnChallenge(PLUG.serial, challenge),
        TurnAllocateRequest(PLUG.serial, ChapExchange(challenge, b"\x55" * 20, PLUG)),
        TurnAllocateResponse(PLUG.serial, 49152),
        AllocationNotice(PLUG.serial, 49152),
        RelayForward(command),
        relayed_command(),
    ]


SAMPLES = sample_messages()


def frame(tag, fields):
    name = tag.encode("ascii")
    parts = [struct.pack(">H", len(name)), name, struct.pack(">H", len(fields))]
    for code, payload in fields:
        parts.append(struct.pack(">cI", code, len(payload)))
        parts.append(payload)
    return b"".join(parts)


class TestSerialization:
    def test_nested_message_survives(self):
        msg = bind_request(re_register=True)
        assert deserialize(serialize(msg)) == msg

    def test_keys_and_enums_survive(self):
        msg = BindResponse(PLUG.serial, BindKind.KEYS_ISSUED, plug_key=PLUG_KEY, phone_key=PHONE_KEY)
        decoded = deserialize(serialize(msg))
        assert decoded.plug_key == PLUG_KEY and decoded.outcome is BindKind.KEYS_ISSUED

    def test_status_codes_on_the_wire(self):
        assert [int(s) for s in SwitchStatus] == [0, 1, 3]
        assert deserialize(serialize(StatusReply("s", SwitchStatus.UNAVAILABLE))).status == 3

    def test_encoding_is_canonical(self):
        assert serialize(relayed_command()) == serialize(relayed_command())

    def test_message_kind_peeks_tag(self):
        assert message_kind(serialize(bind_request())) == "BindRequest"
        assert bind_request().kind == "BindRequest"

    def test_registry_lists_top_level_messages_only(self):
        names = {cls.__name__ for cls in PROTOCOL_MESSAGES}
        assert {"BindRequest", "TurnRelayedCommand", "ErrorResponse"} <= names
        assert "DeviceIdentity" not in names and "SecretKey" not in names

    def test_non_wire_type_rejected(self):
        with pytest.raises(TypeError):
            serialize({"not": "a message"})


class TestParseErrors:
    def test_empty_buffer(self):
        with pytest.raises(ParseError) as exc:
            deserialize(b"")
        assert exc.value.offset == 0

    def test_truncated_frame(self):
        data = serialize(bind_request())
        with pytest.raises(ParseError) as exc:
            deserialize(data[:-3])
        assert exc.value.offset is not None

    def test_trailing_bytes(self):
        data = serialize(bind_request())
        with pytest.raises(ParseError) as exc:
            deserialize(data + b"\x00")
        assert exc.value.offset == len(data)

    def test_unknown_tag(self):
        data = b"\x00\x04Nope\x00\x00"
        with pytest.raises(ParseError) as exc:
            deserialize(data)
        assert exc.value.offset == 0

    def test_field_count_mismatch(self):
        data = bytearray(serialize(StatusReply("s", SwitchStatus.SWITCH_ON)))
        tag_end = 2 + len("StatusReply")
        data[tag_end:tag_end + 2] = b"\x00\x03"
        with pytest.raises(ParseError):
            deserialize(bytes(data))

    def test_invalid_values_become_parse_errors(self):
        good = serialize(StatusReply("s", SwitchStatus.SWITCH_ON))
        bad = good.replace(b"SwitchStatus:1", b"SwitchStatus:2")
        with pytest.raises(ParseError):
            deserialize(bad)

    def test_wrong_field_types_rejected(self):
        data = frame("BindRequest", [(b"s", b"field")] * 7)
        with pytest.raises(ParseError) as exc:
            deserialize(data)
        assert exc.value.offset == 2 + len("BindRequest") + 2 + 5

    def test_bool_is_not_an_int(self):
        data = frame("AllocationNotice", [(b"s", b"221"), (b"b", b"\x01")])
        with pytest.raises(ParseError):
            deserialize(data)

    def test_plain_string_is_not_an_enum(self):
        data = frame("LocalControl", [(b"s", b"221"), (b"s", b"On")])
        with pytest.raises(ParseError):
            deserialize(data)

    def test_deep_nesting_rejected(self):
        ap = (b"x", AP_MAC.hex().encode("ascii"))
        nested = frame("WifiInfo", [(b"s", b"HomeNet"), ap, (b"s", b"")])
        for _ in range(2000):
            nested = frame("WifiInfo", [(b"m", nested), ap, (b"s", b"")])
        with pytest.raises(ParseError) as exc:
            deserialize(nested)
        assert f"deeper than {MAX_NESTING}" in str(exc.value)


class TestEveryMessage:
    def test_samples_cover_the_registry(self):
        assert {type(msg) for msg in SAMPLES} == set(PROTOCOL_MESSAGES)

    @pytest.mark.parametrize("msg", SAMPLES, ids=lambda m: m.kind)
    def test_round_trip(self, msg):
        assert deserialize(serialize(msg)) == msg

    @pytest.mark.parametrize("msg", SAMPLES, ids=lambda m: m.kind)
    def test_message_kind_is_type_name(self, msg):
        assert message_kind(serialize(msg)) == type(msg).__name__ == msg.kind

    def test_distinct_messages_give_distinct_bytes(self):
        encoded = [serialize(msg) for msg in SAMPLES]
        assert len(set(encoded)) == len(SAMPLES)
        on, off = StatusReply("a", SwitchStatus.SWITCH_ON), StatusReply("a", SwitchStatus.SWITCH_OFF)
        assert serialize(on) != serialize(off)
        assert serialize(ErrorResponse("ab", "c")) != serialize(ErrorResponse("a", "bc"))

    @pytest.mark.parametrize("msg", SAMPLES, ids=lambda m: m.kind)
    def test_every_truncation_is_a_parse_error(self, msg):
        data = serialize(msg)
        for cut in range(len(data)):
            with pytest.raises(ParseError):
                deserialize(data[:cut])

    @pytest.mark.parametrize("msg", SAMPLES, ids=lambda m: m.kind)
    def test_bit_flips_raise_only_parse_errors(self, msg):
        rng = random.Random(len(msg.kind))
        data = serialize(msg)
        for _ in range(200):
            mutated = bytearray(data)
            for _ in range(rng.randint(1, 3)):
                mutated[rng.randrange(len(mutated))] ^= 1 << rng.randrange(8)
            try:
                deserialize(bytes(mutated))
            except ParseError:
                pass


class TestInvariants:
    def test_bind_request_never_carries_passphrase(self):
        with pytest.raises(ValueError):
            bind_request(wifi=WifiInfo("HomeNet", AP_MAC, "secret"))

    def test_remote_toggle_rejected(self):
        auth = dummy_authorization(PLUG, TS)
        with pytest.raises(ValueError):
            ControlCommand(PLUG.serial, ControlAction.TOGGLE, auth)

    def test_temp_key_response_shape(self):
        temp = SecretKey(b"t" * 20, KeyRole.TEMP_KEY)
        assert BindResponse("s", BindKind.TEMP_KEY_ISSUED, temp_key=temp).temp_key == temp
        with pytest.raises(ValueError):
            BindResponse("s", BindKind.TEMP_KEY_ISSUED, temp_key=temp, plug_key=PLUG_KEY)
        with pytest.raises(ValueError):
            BindResponse("s", BindKind.TEMP_KEY_ISSUED, temp_key=PLUG_KEY)

    def test_keys_issued_roles(self):
        with pytest.raises(ValueError):
            BindResponse("s", BindKind.KEYS_ISSUED, plug_key=PHONE_KEY, phone_key=PLUG_KEY)
        with pytest.raises(ValueError):
            BindResponse("s", BindKind.KEYS_ISSUED, plug_key=PLUG_KEY)

    def test_wifi_requires_ssid(self):
        with pytest.raises(ValueError):
            WifiInfo("", AP_MAC)


class TestHelpers:
    def test_integrity_input_zeroes_the_attribute(self):
        sealed = relayed_command()
        unsealed = TurnRelayedCommand(sealed.command, IntegrityAttribute.zeroed())
        assert integrity_input(sealed) == serialize(unsealed)
        assert integrity_input(sealed) != serialize(sealed)

    def test_redaction_masks_passphrase_with_equal_length(self):
        msg = PairSetupRequest("alice-phone", "Alice's phone", TS, WifiInfo("HomeNet", AP_MAC, "hunter22"))
        redacted = redact_for_trace(msg)
        assert redacted.wifi.passphrase == "********"
        assert b"hunter22" not in serialize(redacted)
        assert msg.wifi.passphrase == "hunter22"

    def test_redaction_leaves_other_messages(self):
        msg = ErrorResponse("AuthRejected", "BadDigest", PLUG.serial, "ControlCommand")
        assert redact_for_trace(msg) is msg

    def test_key_fetch_mac_depends_on_every_input(self):
        base = key_fetch_mac("alice-phone", PLUG.serial, TS)
        assert len(base) == 20
        assert base != key_fetch_mac("mallory-phone", PLUG.serial, TS)
        assert base != key_fetch_mac("alice-phone", PLUG.serial, TS + 1)
