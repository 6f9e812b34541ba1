"""Binary wire format for framed messages.

Layout, big-endian throughout::

    magic   "PEER"                      4 bytes
    version u8 = 1
    msg_type u8
    flags   u8   (bit0: metadata field present)
    name_len u8, sender name UTF-8
    seq     u64
    send_ts i64  (sender clock, ns since epoch)
    [metadata_len u32, metadata bytes]   only when flags bit0 is set
    payload_len u64, payload bytes
    crc32   u32  over everything after the magic (version..payload)

Any mismatch (bad magic, unknown type or flags, short read, CRC failure,
trailing bytes) decodes to MalformedError; only a version byte other than 1
raises ProtocolVersionError so peers can tell incompatibility from damage.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from enum import IntEnum

from ..errors import MalformedError, ProtocolVersionError

MAGIC = b"PEER"
WIRE_VERSION = 1

FLAG_METADATA = 0x01

MAX_METADATA = 64 * 2**20
MAX_PAYLOAD = 2**30

_FIXED_HEAD = struct.Struct(">4sBBBB")  # magic, version, msg_type, flags, name_len
_SEQ_TS = struct.Struct(">Qq")
_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")


class MsgType(IntEnum):
    DATA = 1
    RESULT = 2
    PROBE_REQ = 3
    PROBE_RESP = 4
    CONTROL = 5


@dataclass
class Envelope:
    """One framed message: payload plus timing metadata.

    ``seq`` and ``send_ts`` may be left unset; the sending channel assigns
    the next sequence number and stamps the send time immediately before
    the write.
    """

    msg_type: MsgType
    payload: bytes = b""
    metadata: bytes | None = None
    sender: str = ""
    seq: int | None = None
    send_ts: int | None = None


def encode_frame(env: Envelope) -> bytes:
    """Serialize a fully-populated envelope (seq and send_ts set)."""
    if env.seq is None or env.send_ts is None:
        raise ValueError("seq and send_ts must be set before encoding")
    name = env.sender.encode("utf-8")
    if not name or len(name) > 255:
        raise ValueError("sender name must be 1..255 UTF-8 bytes")
    if env.metadata is not None and len(env.metadata) > MAX_METADATA:
        raise ValueError("metadata too large")
    if len(env.payload) > MAX_PAYLOAD:
        raise ValueError("payload too large")

    flags = FLAG_METADATA if env.metadata is not None else 0
    parts = [
        _FIXED_HEAD.pack(MAGIC, WIRE_VERSION, int(env.msg_type), flags, len(name)),
        name,
        _SEQ_TS.pack(env.seq, env.send_ts),
    ]
    if env.metadata is not None:
        parts.append(_U32.pack(len(env.metadata)))
        parts.append(env.metadata)
    parts.append(_U64.pack(len(env.payload)))
    parts.append(env.payload)
    body = b"".join(parts)
    crc = zlib.crc32(body[4:]) & 0xFFFFFFFF
    return body + _U32.pack(crc)


def decode_frame(data: bytes) -> Envelope:
    """Decode one standalone frame; trailing bytes are an error."""
    env, used = _decode(data)
    if used != len(data):
        raise MalformedError(f"{len(data) - used} trailing bytes after frame")
    return env


def _decode(data: bytes) -> tuple[Envelope, int]:
    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise MalformedError(f"truncated frame: short {what}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    pos = 0
    magic, version, msg_type, flags, name_len = _FIXED_HEAD.unpack(
        take(_FIXED_HEAD.size, "header")
    )
    if magic != MAGIC:
        raise MalformedError("bad magic")
    if version != WIRE_VERSION:
        raise ProtocolVersionError(f"wire version {version}, expected {WIRE_VERSION}")
    if msg_type not in MsgType._value2member_map_:
        raise MalformedError(f"unknown message type {msg_type}")
    if flags & ~FLAG_METADATA:
        raise MalformedError(f"unknown flag bits 0x{flags:02x}")
    if name_len == 0:
        raise MalformedError("empty sender name")
    try:
        sender = take(name_len, "sender name").decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedError("sender name is not UTF-8") from exc
    seq, send_ts = _SEQ_TS.unpack(take(_SEQ_TS.size, "seq/send_ts"))

    metadata = None
    if flags & FLAG_METADATA:
        (meta_len,) = _U32.unpack(take(_U32.size, "metadata length"))
        if meta_len > MAX_METADATA:
            raise MalformedError("metadata length exceeds limit")
        metadata = take(meta_len, "metadata")

    (payload_len,) = _U64.unpack(take(_U64.size, "payload length"))
    if payload_len > MAX_PAYLOAD:
        raise MalformedError("payload length exceeds limit")
    payload = take(payload_len, "payload")

    (crc,) = _U32.unpack(take(_U32.size, "checksum"))
    if zlib.crc32(data[4:pos - 4]) & 0xFFFFFFFF != crc:
        raise MalformedError("checksum mismatch")

    env = Envelope(
        msg_type=MsgType(msg_type),
        payload=payload,
        metadata=metadata,
        sender=sender,
        seq=seq,
        send_ts=send_ts,
    )
    return env, pos


def read_frame(read_exact) -> Envelope:
    """Read one frame from a byte stream.

    ``read_exact(n)`` must return exactly n bytes or raise. Used by the TCP
    channel; the CRC is verified over the reassembled frame.
    """
    head = read_exact(_FIXED_HEAD.size)
    magic, version, msg_type, flags, name_len = _FIXED_HEAD.unpack(head)
    if magic != MAGIC:
        raise MalformedError("bad magic")
    if version != WIRE_VERSION:
        raise ProtocolVersionError(f"wire version {version}, expected {WIRE_VERSION}")
    if flags & ~FLAG_METADATA:
        raise MalformedError(f"unknown flag bits 0x{flags:02x}")
    if name_len == 0:
        raise MalformedError("empty sender name")
    parts = [head, read_exact(name_len + _SEQ_TS.size)]
    if flags & FLAG_METADATA:
        len_bytes = read_exact(_U32.size)
        (meta_len,) = _U32.unpack(len_bytes)
        if meta_len > MAX_METADATA:
            raise MalformedError("metadata length exceeds limit")
        parts.append(len_bytes)
        parts.append(read_exact(meta_len))
    len_bytes = read_exact(_U64.size)
    (payload_len,) = _U64.unpack(len_bytes)
    if payload_len > MAX_PAYLOAD:
        raise MalformedError("payload length exceeds limit")
    parts.append(len_bytes)
    parts.append(read_exact(payload_len))
    parts.append(read_exact(_U32.size))
    return decode_frame(b"".join(parts))
