"""Deterministic CBOR subset used for all wire formats in this package.

Implements the core deterministic encoding profile of RFC 8949 section
4.2.1 for the value shapes we actually serialize: integers, byte strings,
text strings, arrays, string-keyed maps, booleans, and null. Definite
lengths only, minimal-length heads, map keys sorted by the bytewise order
of their encodings. Anything outside that subset is rejected rather than
encoded loosely, so equal values always produce identical bytes.

The decoder accepts only what the encoder can produce (no floats, tags,
or indefinite lengths) and refuses trailing garbage. Callers that need
byte-level canonicality on input re-encode the decoded value and compare.
"""

from __future__ import annotations

from typing import Any, Iterator, List, Tuple

_UINT64_MAX = 2**64 - 1

# Major type numbers, shifted into the high bits of the initial byte.
_MAJOR_UINT = 0
_MAJOR_NINT = 1
_MAJOR_BYTES = 2
_MAJOR_TEXT = 3
_MAJOR_ARRAY = 4
_MAJOR_MAP = 5
_MAJOR_SIMPLE = 7

_SIMPLE_FALSE = 0xF4
_SIMPLE_TRUE = 0xF5
_SIMPLE_NULL = 0xF6


class CBOREncodeError(ValueError):
    """Value cannot be represented in the deterministic subset."""


class CBORDecodeError(ValueError):
    """Input is not a well-formed encoding from the deterministic subset."""


def _head(major: int, argument: int) -> bytes:
    """Initial byte plus minimal-length argument per RFC 8949 4.2.1."""
    if argument < 24:
        return bytes([(major << 5) | argument])
    if argument <= 0xFF:
        return bytes([(major << 5) | 24, argument])
    if argument <= 0xFFFF:
        return bytes([(major << 5) | 25]) + argument.to_bytes(2, "big")
    if argument <= 0xFFFFFFFF:
        return bytes([(major << 5) | 26]) + argument.to_bytes(4, "big")
    return bytes([(major << 5) | 27]) + argument.to_bytes(8, "big")


def _encode_into(value: Any, out: List[bytes]) -> None:
    # bool must be tested before int: bool is an int subclass.
    if value is True:
        out.append(bytes([_SIMPLE_TRUE]))
    elif value is False:
        out.append(bytes([_SIMPLE_FALSE]))
    elif value is None:
        out.append(bytes([_SIMPLE_NULL]))
    elif isinstance(value, int):
        if value >= 0:
            if value > _UINT64_MAX:
                raise CBOREncodeError("integer exceeds 64-bit range")
            out.append(_head(_MAJOR_UINT, value))
        else:
            magnitude = -1 - value
            if magnitude > _UINT64_MAX:
                raise CBOREncodeError("integer exceeds 64-bit range")
            out.append(_head(_MAJOR_NINT, magnitude))
    elif isinstance(value, (bytes, bytearray, memoryview)):
        data = bytes(value)
        out.append(_head(_MAJOR_BYTES, len(data)))
        out.append(data)
    elif isinstance(value, str):
        data = value.encode("utf-8")
        out.append(_head(_MAJOR_TEXT, len(data)))
        out.append(data)
    elif isinstance(value, (list, tuple)):
        out.append(_head(_MAJOR_ARRAY, len(value)))
        for item in value:
            _encode_into(item, out)
    elif isinstance(value, dict):
        pairs: List[Tuple[bytes, bytes]] = []
        for key, item in value.items():
            if not isinstance(key, str):
                raise CBOREncodeError(
                    f"map keys must be text, got {type(key).__name__}"
                )
            pairs.append((encode(key), encode(item)))
        pairs.sort(key=lambda kv: kv[0])
        for i in range(1, len(pairs)):
            if pairs[i][0] == pairs[i - 1][0]:
                raise CBOREncodeError("duplicate map key")
        out.append(_head(_MAJOR_MAP, len(pairs)))
        for key_bytes, item_bytes in pairs:
            out.append(key_bytes)
            out.append(item_bytes)
    else:
        raise CBOREncodeError(
            f"type {type(value).__name__} not in the deterministic subset"
        )


def encode(value: Any) -> bytes:
    """Encode `value` deterministically; equal values give equal bytes."""
    out: List[bytes] = []
    _encode_into(value, out)
    return b"".join(out)


class _Decoder:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def _take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CBORDecodeError("truncated input")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def _read_argument(self, info: int) -> int:
        if info < 24:
            return info
        if info == 24:
            return self._take(1)[0]
        if info == 25:
            return int.from_bytes(self._take(2), "big")
        if info == 26:
            return int.from_bytes(self._take(4), "big")
        if info == 27:
            return int.from_bytes(self._take(8), "big")
        # 28-30 reserved, 31 indefinite: both outside the subset.
        raise CBORDecodeError(f"unsupported additional info {info}")

    def decode_item(self) -> Any:
        initial = self._take(1)[0]
        major = initial >> 5
        info = initial & 0x1F
        if major == _MAJOR_UINT:
            return self._read_argument(info)
        if major == _MAJOR_NINT:
            return -1 - self._read_argument(info)
        if major == _MAJOR_BYTES:
            return self._take(self._read_argument(info))
        if major == _MAJOR_TEXT:
            raw = self._take(self._read_argument(info))
            try:
                return raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CBORDecodeError("invalid UTF-8 in text string") from exc
        if major == _MAJOR_ARRAY:
            count = self._read_argument(info)
            return [self.decode_item() for _ in range(count)]
        if major == _MAJOR_MAP:
            count = self._read_argument(info)
            result = {}
            for _ in range(count):
                key = self.decode_item()
                if not isinstance(key, str):
                    raise CBORDecodeError("map keys must be text")
                if key in result:
                    raise CBORDecodeError("duplicate map key")
                result[key] = self.decode_item()
            return result
        if major == _MAJOR_SIMPLE:
            if initial == _SIMPLE_FALSE:
                return False
            if initial == _SIMPLE_TRUE:
                return True
            if initial == _SIMPLE_NULL:
                return None
            raise CBORDecodeError(f"unsupported simple value 0x{initial:02x}")
        raise CBORDecodeError(f"unsupported major type {major}")


def decode(data: bytes) -> Any:
    """Decode exactly one value; trailing bytes are an error."""
    decoder = _Decoder(bytes(data))
    value = decoder.decode_item()
    if decoder.pos != len(decoder.data):
        raise CBORDecodeError("trailing bytes after value")
    return value


def iter_length_prefixed(data: bytes) -> Iterator[bytes]:
    """Split a little-endian u32 length-prefixed frame stream.

    Raises CBORDecodeError on a truncated frame or trailing partial data.
    """
    pos = 0
    total = len(data)
    while pos < total:
        if pos + 4 > total:
            raise CBORDecodeError("truncated frame length")
        length = int.from_bytes(data[pos : pos + 4], "little")
        pos += 4
        if pos + length > total:
            raise CBORDecodeError("truncated frame body")
        yield data[pos : pos + length]
        pos += length


def length_prefixed(frame: bytes) -> bytes:
    """Frame bytes with their little-endian u32 length prefix."""
    if len(frame) > 0xFFFFFFFF:
        raise CBOREncodeError("frame too large for u32 length prefix")
    return len(frame).to_bytes(4, "little") + frame
