"""OSC 1.0 message subset used on the sensor and field wire.

Messages only (no bundles, no timetags).  Strings are null-terminated and
zero-padded to 4-byte boundaries; numbers are big-endian; blobs carry an
int32 byte count and pad to 4 bytes.  Three addresses are used:

  /em/sensor      ,ifff   sensor_id, x, y, value_db
  /em/field       ,iib    frame_id, row_index, blob of float32 means
  /em/field/var   ,iib    frame_id, row_index, blob of float32 variances
  /em/error       ,s      human-readable failure text

The byte layouts are normative; tests pin them against hand-assembled
fixtures.
"""

from __future__ import annotations

import math
import struct
import time
from dataclasses import dataclass

import numpy as np

from .errors import ProtocolError, UnknownSensorError

SENSOR_ADDRESS = "/em/sensor"
FIELD_ADDRESS = "/em/field"
VARIANCE_ADDRESS = "/em/field/var"
ERROR_ADDRESS = "/em/error"


@dataclass
class Counters:
    """Monotone receive-side tallies; owned by the receiver thread."""

    received: int = 0
    ignored_address: int = 0
    malformed: int = 0
    rejected_unknown: int = 0


@dataclass(frozen=True)
class SensorReading:
    sensor_id: int
    x: float
    y: float
    value_db: float
    recv_time: float


# -- encoding ----------------------------------------------------------------


def _padded_string(s: str) -> bytes:
    raw = s.encode("ascii") + b"\x00"
    return raw + b"\x00" * (-len(raw) % 4)


def _padded_blob(data: bytes) -> bytes:
    return struct.pack(">i", len(data)) + data + b"\x00" * (-len(data) % 4)


def encode_message(address: str, typetag: str, args) -> bytes:
    """Assemble one OSC message; typetag is given without the leading comma."""
    out = [_padded_string(address), _padded_string("," + typetag)]
    if len(typetag) != len(args):
        raise ProtocolError(f"typetag {typetag!r} expects {len(typetag)} args, got {len(args)}")
    for tag, arg in zip(typetag, args):
        if tag == "i":
            out.append(struct.pack(">i", int(arg)))
        elif tag == "f":
            out.append(struct.pack(">f", float(arg)))
        elif tag == "s":
            out.append(_padded_string(str(arg)))
        elif tag == "b":
            out.append(_padded_blob(bytes(arg)))
        else:
            raise ProtocolError(f"unsupported type tag {tag!r}")
    return b"".join(out)


def encode_sensor_reading(sensor_id: int, x: float, y: float, value_db: float) -> bytes:
    return encode_message(SENSOR_ADDRESS, "ifff", [sensor_id, x, y, value_db])


def _row_blob(values) -> bytes:
    return np.asarray(values, dtype=">f4").tobytes()


def encode_field_row(frame_id: int, row_index: int, values) -> bytes:
    return encode_message(FIELD_ADDRESS, "iib", [frame_id, row_index, _row_blob(values)])


def encode_variance_row(frame_id: int, row_index: int, values) -> bytes:
    return encode_message(VARIANCE_ADDRESS, "iib", [frame_id, row_index, _row_blob(values)])


def encode_error(text: str) -> bytes:
    return encode_message(ERROR_ADDRESS, "s", [text])


# -- decoding ----------------------------------------------------------------


def _read_string(data: bytes, offset: int):
    end = data.find(b"\x00", offset)
    if end < 0:
        raise ProtocolError("unterminated string")
    value = data[offset:end]
    next_offset = offset + ((end - offset + 1 + 3) // 4) * 4
    if next_offset > len(data):
        raise ProtocolError("string padding runs past the datagram")
    if any(data[end:next_offset]):
        raise ProtocolError("nonzero padding after string")
    try:
        return value.decode("ascii"), next_offset
    except UnicodeDecodeError:
        raise ProtocolError("non-ascii string")


def decode_message(data: bytes):
    """Parse one datagram into (address, typetag, args); strict padding."""
    if len(data) % 4 != 0:
        raise ProtocolError(f"datagram length {len(data)} is not a multiple of 4")
    address, offset = _read_string(data, 0)
    if not address.startswith("/"):
        raise ProtocolError(f"address must start with '/', got {address!r}")
    typetag, offset = _read_string(data, offset)
    if not typetag.startswith(","):
        raise ProtocolError(f"type tag must start with ',', got {typetag!r}")
    args = []
    for tag in typetag[1:]:
        if tag == "i":
            if offset + 4 > len(data):
                raise ProtocolError("truncated int32 argument")
            args.append(struct.unpack_from(">i", data, offset)[0])
            offset += 4
        elif tag == "f":
            if offset + 4 > len(data):
                raise ProtocolError("truncated float32 argument")
            args.append(struct.unpack_from(">f", data, offset)[0])
            offset += 4
        elif tag == "s":
            value, offset = _read_string(data, offset)
            args.append(value)
        elif tag == "b":
            if offset + 4 > len(data):
                raise ProtocolError("truncated blob size")
            size = struct.unpack_from(">i", data, offset)[0]
            offset += 4
            if size < 0 or offset + size > len(data):
                raise ProtocolError("blob runs past the datagram")
            args.append(data[offset:offset + size])
            offset += size + (-size % 4)
            if offset > len(data):
                raise ProtocolError("blob padding runs past the datagram")
        else:
            raise ProtocolError(f"unsupported type tag {tag!r}")
    if offset != len(data):
        raise ProtocolError(f"{len(data) - offset} trailing bytes after arguments")
    return address, typetag, args


def decode_reading(datagram: bytes, known_ids=None, counters: Counters | None = None) -> SensorReading | None:
    """Decode a sensor message, tallying the outcome on `counters`.

    Returns None for messages addressed elsewhere (ignored).  Raises
    ProtocolError for malformed datagrams and UnknownSensorError for ids
    outside `known_ids`.
    """
    if counters is not None:
        counters.received += 1
    try:
        address, typetag, args = decode_message(datagram)
    except ProtocolError:
        if counters is not None:
            counters.malformed += 1
        raise
    if address != SENSOR_ADDRESS:
        if counters is not None:
            counters.ignored_address += 1
        return None
    if typetag != ",ifff":
        if counters is not None:
            counters.malformed += 1
        raise ProtocolError(f"sensor message needs type tag ',ifff', got {typetag!r}")
    sensor_id, x, y, value_db = args
    if not all(math.isfinite(v) for v in (x, y, value_db)):
        if counters is not None:
            counters.malformed += 1
        raise ProtocolError("sensor reading fields must be finite")
    if known_ids is not None and sensor_id not in known_ids:
        if counters is not None:
            counters.rejected_unknown += 1
        raise UnknownSensorError(f"sensor id {sensor_id} is not configured")
    return SensorReading(
        sensor_id=int(sensor_id),
        x=float(x),
        y=float(y),
        value_db=float(value_db),
        recv_time=time.monotonic(),
    )
