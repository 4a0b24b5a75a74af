"""Wire messages and their framing.

Frame: 4B magic | u8 version | u8 kind | u32 round | u64 payload length
| payload | u32 CRC32(payload), integers little-endian.

A payload is ``u32 len | JSON header`` followed by any number of
``u64 len | blob`` entries.
"""

from __future__ import annotations

import enum
import hashlib
import json
import struct
import zlib
from dataclasses import dataclass, field

MAGIC = b"FGP1"
VERSION = 1
HEADER = struct.Struct("<4sBBIQ")
CRC = struct.Struct("<I")
DEFAULT_MAX_PAYLOAD = 256 * 1024 * 1024


class FrameError(ValueError):
    pass


class Kind(enum.IntEnum):
    EVK_TRANSFER = 1
    ROUND_DATA = 2
    MODEL_RESULT = 3
    LOO_MODEL_RESULT = 4
    REFRESH_REQUEST = 5
    REFRESH_RESPONSE = 6
    CONTINUE = 7
    TERMINATE = 8

    @property
    def title(self) -> str:
        return "".join(w.capitalize() for w in self.name.split("_"))


@dataclass(frozen=True)
class Message:
    kind: Kind
    round: int
    meta: dict = field(default_factory=dict)
    blobs: tuple[bytes, ...] = ()

    def payload(self) -> bytes:
        if not self.meta and not self.blobs:
            return b""
        head = json.dumps(self.meta, sort_keys=True, separators=(",", ":")).encode()
        parts = [struct.pack("<I", len(head)), head]
        for b in self.blobs:
            parts.append(struct.pack("<Q", len(b)))
            parts.append(b)
        return b"".join(parts)

    @classmethod
    def from_payload(cls, kind: Kind, rnd: int, payload: bytes) -> "Message":
        if not payload:
            return cls(kind, rnd)
        mv = memoryview(payload)
        if len(mv) < 4:
            raise FrameError("payload too short for its header")
        (hlen,) = struct.unpack_from("<I", mv, 0)
        pos = 4 + hlen
        if pos > len(mv):
            raise FrameError("payload header overruns the payload")
        try:
            meta = json.loads(bytes(mv[4:pos]))
        except ValueError as exc:
            raise FrameError(f"bad payload header: {exc}") from exc
        blobs = []
        while pos < len(mv):
            if pos + 8 > len(mv):
                raise FrameError("truncated blob length")
            (blen,) = struct.unpack_from("<Q", mv, pos)
            pos += 8
            if pos + blen > len(mv):
                raise FrameError("truncated blob")
            blobs.append(bytes(mv[pos : pos + blen]))
            pos += blen
        return cls(kind, rnd, meta, tuple(blobs))

    def digest(self) -> str:
        return hashlib.sha256(self.payload()).hexdigest()


def frame_encode(msg: Message, max_payload: int = DEFAULT_MAX_PAYLOAD) -> bytes:
    payload = msg.payload()
    if len(payload) > max_payload:
        raise FrameError(f"payload of {len(payload)} bytes exceeds the {max_payload}-byte limit")
    if not 0 <= msg.round < 1 << 32:
        raise FrameError("round out of range")
    head = HEADER.pack(MAGIC, VERSION, int(msg.kind), msg.round, len(payload))
    return head + payload + CRC.pack(zlib.crc32(payload))


def parse_header(head: bytes, max_payload: int = DEFAULT_MAX_PAYLOAD) -> tuple[Kind, int, int]:
    if len(head) < HEADER.size:
        raise FrameError("truncated frame header")
    magic, version, kind, rnd, length = HEADER.unpack(head[: HEADER.size])
    if magic != MAGIC:
        raise FrameError("bad magic")
    if version != VERSION:
        raise FrameError(f"unsupported protocol version {version}")
    try:
        k = Kind(kind)
    except ValueError:
        raise FrameError(f"unknown message kind {kind}") from None
    if length > max_payload:
        raise FrameError(f"payload of {length} bytes exceeds the {max_payload}-byte limit")
    return k, rnd, length


def frame_decode(frame: bytes, max_payload: int = DEFAULT_MAX_PAYLOAD) -> Message:
    kind, rnd, length = parse_header(frame, max_payload)
    end = HEADER.size + length
    if len(frame) < end + CRC.size:
        raise FrameError("truncated frame")
    if len(frame) > end + CRC.size:
        raise FrameError("trailing bytes after frame")
    payload = frame[HEADER.size : end]
    (crc,) = CRC.unpack(frame[end:])
    if zlib.crc32(payload) != crc:
        raise FrameError("CRC mismatch")
    return Message.from_payload(kind, rnd, payload)
