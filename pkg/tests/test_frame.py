"""Wire-format framing: bit-exact layout, roundtrips, damage detection."""

from __future__ import annotations

import struct
import zlib
from random import Random

import pytest

from peerprof.errors import MalformedError, ProtocolVersionError
from peerprof.transport import Envelope, MsgType, decode_frame, encode_frame

from conftest import random_envelope


def test_layout_is_bit_exact():
    env = Envelope(
        msg_type=MsgType.DATA,
        payload=b"xyz",
        metadata=b"MM",
        sender="dev",
        seq=7,
        send_ts=-5,
    )
    body = (
        b"PEER"
        + bytes([1, 1, 0x01, 3])  # version, msg_type DATA, metadata flag, name len
        + b"dev"
        + struct.pack(">Qq", 7, -5)
        + struct.pack(">I", 2)
        + b"MM"
        + struct.pack(">Q", 3)
        + b"xyz"
    )
    expected = body + struct.pack(">I", zlib.crc32(body[4:]) & 0xFFFFFFFF)
    assert encode_frame(env) == expected


def test_no_metadata_omits_field_entirely():
    env = Envelope(MsgType.CONTROL, payload=b"", sender="a", seq=0, send_ts=0)
    frame = encode_frame(env)
    # magic(4) + fixed(4) + name(1) + seq/ts(16) + payload len(8) + crc(4)
    assert len(frame) == 4 + 4 + 1 + 16 + 8 + 4
    assert decode_frame(frame).metadata is None


def test_empty_metadata_distinct_from_absent():
    env = Envelope(MsgType.DATA, payload=b"", metadata=b"", sender="a", seq=0, send_ts=0)
    back = decode_frame(encode_frame(env))
    assert back.metadata == b""


def test_roundtrip_random_envelopes(rng):
    for _ in range(300):
        env = random_envelope(rng)
        frame = encode_frame(env)
        back = decode_frame(frame)
        assert back == env
        assert encode_frame(back) == frame


def test_bad_magic_rejected():
    frame = bytearray(encode_frame(Envelope(MsgType.DATA, b"p", sender="a", seq=0, send_ts=0)))
    frame[0:4] = b"PUMA"
    with pytest.raises(MalformedError):
        decode_frame(bytes(frame))


def test_version_mismatch_distinct_error():
    frame = bytearray(encode_frame(Envelope(MsgType.DATA, b"p", sender="a", seq=0, send_ts=0)))
    frame[4] = 2
    with pytest.raises(ProtocolVersionError):
        decode_frame(bytes(frame))


def test_unknown_msg_type_rejected():
    frame = bytearray(encode_frame(Envelope(MsgType.DATA, b"p", sender="a", seq=0, send_ts=0)))
    frame[5] = 99
    with pytest.raises(MalformedError):
        decode_frame(bytes(frame))


def test_unknown_flag_bits_rejected():
    frame = bytearray(encode_frame(Envelope(MsgType.DATA, b"p", sender="a", seq=0, send_ts=0)))
    frame[6] |= 0x80
    with pytest.raises(MalformedError):
        decode_frame(bytes(frame))


def test_crc_mismatch_rejected():
    frame = bytearray(encode_frame(Envelope(MsgType.DATA, b"payload", sender="a", seq=0, send_ts=0)))
    frame[-10] ^= 0xFF  # flip a payload byte; checksum no longer matches
    with pytest.raises(MalformedError):
        decode_frame(bytes(frame))


def test_every_truncation_rejected():
    frame = encode_frame(
        Envelope(MsgType.RESULT, b"abcdef", metadata=b"meta", sender="dev", seq=3, send_ts=9)
    )
    for cut in range(len(frame)):
        with pytest.raises(MalformedError):
            decode_frame(frame[:cut])


def test_trailing_bytes_rejected():
    frame = encode_frame(Envelope(MsgType.DATA, b"p", sender="a", seq=0, send_ts=0))
    with pytest.raises(MalformedError):
        decode_frame(frame + b"\x00")


def test_single_byte_corruption_never_silent(rng):
    # any one-byte change must surface as an error, not a wrong envelope
    env = Envelope(
        MsgType.DATA, payload=b"hello world", metadata=b"md", sender="dev", seq=42, send_ts=1234
    )
    frame = encode_frame(env)
    for _ in range(300):
        pos = rng.randrange(len(frame))
        delta = rng.randrange(1, 256)
        damaged = bytearray(frame)
        damaged[pos] = (damaged[pos] + delta) % 256
        with pytest.raises((MalformedError, ProtocolVersionError)):
            decode_frame(bytes(damaged))


def test_sender_name_required():
    env = Envelope(MsgType.DATA, b"", sender="", seq=0, send_ts=0)
    with pytest.raises(ValueError):
        encode_frame(env)
    env = Envelope(MsgType.DATA, b"", sender="x" * 256, seq=0, send_ts=0)
    with pytest.raises(ValueError):
        encode_frame(env)


def test_unset_seq_or_ts_rejected():
    with pytest.raises(ValueError):
        encode_frame(Envelope(MsgType.DATA, b"", sender="a"))
