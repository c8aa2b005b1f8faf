"""LEB128 encoding and decoding helpers."""

from .errors import MalformedBinary


def write_u(value: int) -> bytes:
    if value < 0:
        raise ValueError("unsigned LEB of negative value")
    out = bytearray()
    while True:
        b = value & 0x7F
        value >>= 7
        if value:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def write_s(value: int) -> bytes:
    out = bytearray()
    while True:
        b = value & 0x7F
        value >>= 7
        if (value == 0 and not b & 0x40) or (value == -1 and b & 0x40):
            out.append(b)
            return bytes(out)
        out.append(b | 0x80)


def read_u(data: bytes, pos: int, max_bits: int = 64) -> tuple[int, int]:
    """Read an unsigned LEB at pos, return (value, next_pos)."""
    result = 0
    shift = 0
    while True:
        if pos >= len(data):
            raise MalformedBinary(pos, "truncated LEB128")
        b = data[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        shift += 7
        if not b & 0x80:
            break
        if shift >= max_bits + 7:
            raise MalformedBinary(pos, "LEB128 too long")
    if result >= 1 << max_bits:
        raise MalformedBinary(pos, f"LEB128 exceeds {max_bits} bits")
    return result, pos


def read_s(data: bytes, pos: int, max_bits: int = 64) -> tuple[int, int]:
    """Read a signed LEB at pos, return (value, next_pos)."""
    result = 0
    shift = 0
    while True:
        if pos >= len(data):
            raise MalformedBinary(pos, "truncated LEB128")
        b = data[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        shift += 7
        if not b & 0x80:
            if b & 0x40:
                result |= -1 << shift
            break
        if shift >= max_bits + 7:
            raise MalformedBinary(pos, "LEB128 too long")
    lo, hi = -(1 << (max_bits - 1)), (1 << (max_bits - 1)) - 1
    if not lo <= result <= hi:
        raise MalformedBinary(pos, f"signed LEB128 exceeds {max_bits} bits")
    return result, pos
