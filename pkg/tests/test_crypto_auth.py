import random

import pytest

from plugnet.crypto_auth import (
    DUMMY_DIGEST,
    AuthField,
    KeyRole,
    RejectReason,
    SecretKey,
    chap_respond,
    chap_verify,
    compute_authorization,
    compute_message_integrity,
    derive_serial,
    dummy_authorization,
    format_mac,
    hmac_sha1,
    parse_mac,
    verify_authorization,
    verify_message_integrity,
)
from plugnet.exceptions import InvalidKey, InvalidMac, WrongKeyRole
from plugnet.messages import DeviceIdentity

NOW = 1_600_000_100
MAC = bytes.fromhex("ec1a59000001")
PLUG = DeviceIdentity(MAC, derive_serial(MAC), "WeMo Smart Plug")

# RFC 2202, HMAC-SHA-1 test cases 1-7
RFC2202_VECTORS = [
    (b"\x0b" * 20, b"Hi There", "b617318655057264e28bc0b6fb378c8ef146be00"),
    (b"Jefe", b"what do ya want for nothing?", "effcdf6ae5eb2fa2d27416d5f184df9c259a7c79"),
    (b"\xaa" * 20, b"\xdd" * 50, "125d7342b9ac11cd91a39af48aa17b4f63f175d3"),
    (bytes(range(1, 26)), b"\xcd" * 50, "4c9007f4026250c6bc8414f9bf50c86c2d7235da"),
    (b"\x0c" * 20, b"Test With Truncation", "4c1a03424b55e07fe7f27be1d58bb9324a9a5a04"),
    (b"\xaa" * 80, b"Test Using Larger Than Block-Size Key - Hash Key First",
     "aa4ae5e15272d00e95705637ce8a3b55ed402112"),
    (b"\xaa" * 80, b"Test Using Larger Than Block-Size Key and Larger Than One Block-Size Data",
     "e8e99d0f45237d786d6bbaa7965c7808bbff1a91"),
]


def plug_key(fill=1):
    return SecretKey(bytes([fill]) * 20, KeyRole.PLUG_KEY)


class TestHmacSha1:
    @pytest.mark.parametrize("key,data,digest", RFC2202_VECTORS)
    def test_rfc2202_vectors(self, key, data, digest):
        assert hmac_sha1(key, data).hex() == digest

    def test_empty_key_rejected(self):
        with pytest.raises(InvalidKey):
            hmac_sha1(b"", b"data")


class TestSecretKey:
    @pytest.mark.parametrize("size", [0, 65])
    def test_size_limits(self, size):
        with pytest.raises(InvalidKey):
            SecretKey(b"\x01" * size, KeyRole.PLUG_KEY)

    def test_invalid_key_is_value_error(self):
        with pytest.raises(ValueError):
            SecretKey(b"", KeyRole.PHONE_KEY)

    def test_equality_includes_role(self):
        assert SecretKey(b"k" * 20, KeyRole.PLUG_KEY) == SecretKey(b"k" * 20, KeyRole.PLUG_KEY)
        assert SecretKey(b"k" * 20, KeyRole.PLUG_KEY) != SecretKey(b"k" * 20, KeyRole.PHONE_KEY)

    def test_repr_hides_key_material(self):
        key = SecretKey(bytes.fromhex("00112233445566778899aabbccddeeff00112233"), KeyRole.PLUG_KEY)
        assert "00112233" not in repr(key)
        assert key.fingerprint in repr(key)
        assert len(key.fingerprint) == 8


class TestAuthorization:
    def test_round_trip_accepts(self):
        field = compute_authorization(plug_key(), PLUG, NOW, b"\x07" * 8)
        assert verify_authorization(plug_key(), field, NOW)

    def test_wrong_keys_never_accept(self):
        rng = random.Random(2202)
        field = compute_authorization(plug_key(), PLUG, NOW, b"\x07" * 8)
        accepted = 0
        for _ in range(100):
            wrong = SecretKey(bytes(rng.getrandbits(8) for _ in range(20)), KeyRole.PLUG_KEY)
            accepted += bool(verify_authorization(wrong, field, NOW))
        assert accepted == 0

    def test_mutations_never_accept(self):
        rng = random.Random(99)
        key = plug_key()
        field = compute_authorization(key, PLUG, NOW, b"\x07" * 8)
        accepted = 0
        for trial in range(200):
            choice = trial % 4
            if choice == 0:
                digest = bytearray(field.digest)
                digest[rng.randrange(20)] ^= 1 << rng.randrange(8)
                mutated = AuthField(field.identity, field.timestamp, field.nonce, bytes(digest))
            elif choice == 1:
                nonce = bytearray(field.nonce)
                nonce[rng.randrange(8)] ^= 1 << rng.randrange(8)
                mutated = AuthField(field.identity, field.timestamp, bytes(nonce), field.digest)
            elif choice == 2:
                mutated = AuthField(field.identity, field.timestamp + rng.randint(1, 100), field.nonce, field.digest)
            else:
                other_mac = MAC[:5] + bytes([rng.randrange(2, 256)])
                other = DeviceIdentity(other_mac, derive_serial(other_mac))
                mutated = AuthField(other, field.timestamp, field.nonce, field.digest)
            accepted += bool(verify_authorization(key, mutated, NOW))
        assert accepted == 0

    def test_stale_timestamp(self):
        field = compute_authorization(plug_key(), PLUG, NOW - 301, b"\x07" * 8)
        verdict = verify_authorization(plug_key(), field, NOW)
        assert not verdict
        assert verdict.reason is RejectReason.STALE

    def test_window_is_inclusive(self):
        field = compute_authorization(plug_key(), PLUG, NOW - 300, b"\x07" * 8)
        assert verify_authorization(plug_key(), field, NOW)

    def test_dummy_is_rejected(self):
        field = dummy_authorization(PLUG, NOW)
        assert field.is_dummy and field.digest == DUMMY_DIGEST
        verdict = verify_authorization(plug_key(), field, NOW)
        assert verdict.reason is RejectReason.DUMMY

    def test_dummy_flag_requires_literal_digest(self):
        with pytest.raises(ValueError):
            AuthField(PLUG, NOW, bytes(8), b"x" * 20, is_dummy=True)

    def test_digest_size_checked(self):
        with pytest.raises(ValueError):
            AuthField(PLUG, NOW, bytes(8), b"short")


class TestChap:
    def test_round_trip(self):
        exchange = chap_respond(plug_key(), b"\x55" * 16, PLUG)
        assert chap_verify(plug_key(), exchange)

    def test_other_key_rejected(self):
        exchange = chap_respond(plug_key(1), b"\x55" * 16, PLUG)
        verdict = chap_verify(plug_key(2), exchange)
        assert verdict.reason is RejectReason.BAD_DIGEST

    def test_phone_key_cannot_answer(self):
        with pytest.raises(WrongKeyRole):
            chap_respond(SecretKey(b"p" * 20, KeyRole.PHONE_KEY), b"\x55" * 16, PLUG)

    def test_response_bound_to_challenge(self):
        exchange = chap_respond(plug_key(), b"\x55" * 16, PLUG)
        replayed = type(exchange)(b"\x56" * 16, exchange.response, exchange.peer_id)
        assert not chap_verify(plug_key(), replayed)


class TestMessageIntegrity:
    def test_round_trip_and_bit_flips(self):
        key = plug_key()
        message = b"relayed command bytes"
        attribute = compute_message_integrity(key, message)
        assert verify_message_integrity(key, message, attribute)
        for i in range(len(message)):
            flipped = bytearray(message)
            flipped[i] ^= 0x01
            assert not verify_message_integrity(key, bytes(flipped), attribute)

    def test_other_key_rejected(self):
        attribute = compute_message_integrity(plug_key(1), b"m")
        assert not verify_message_integrity(plug_key(2), b"m", attribute)


class TestMacAndSerial:
    def test_serial_is_derived_from_mac(self):
        assert derive_serial(MAC) == "221EC1A59000001"

    def test_serial_is_injective(self):
        rng = random.Random(5)
        macs = {bytes(rng.getrandbits(8) for _ in range(6)) for _ in range(500)}
        assert len({derive_serial(m) for m in macs}) == len(macs)

    @pytest.mark.parametrize("bad", [b"", b"\x00" * 5, b"\x00" * 7])
    def test_bad_mac_length(self, bad):
        with pytest.raises(InvalidMac):
            derive_serial(bad)

    def test_parse_and_format(self):
        assert parse_mac("EC-1A-59-00-00-01") == MAC
        assert format_mac(MAC) == "ec:1a:59:00:00:01"

    @pytest.mark.parametrize("text", ["ec:1a:59", "zz:1a:59:00:00:01", "ec1a59000001"])
    def test_parse_rejects_garbage(self, text):
        with pytest.raises(InvalidMac):
            parse_mac(text)
