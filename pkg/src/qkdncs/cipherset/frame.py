"""64-bit admissible-plaintext frame.

Layout, most significant bit first::

    magic(8) | seq(16) | payload(32, signed, 2^-16 fixed point) | crc(8)

A bit string belongs to the admissible set iff the magic byte matches and the
CRC-8 (poly 0x07, init 0) over the first seven bytes verifies.  Random strings
pass with probability 2^-16.

Frames carried under raw keys exclude the ``tolerant_bits`` lowest payload
bits from the CRC, so key-error noise in those digits does not invalidate the
frame.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import FrameRangeError

MAGIC = 0xA5
FRACTION_BITS = 16
QUANTUM = 2.0**-FRACTION_BITS
PAYLOAD_BITS = 32
PAYLOAD_SHIFT = 8
FRAME_BITS = 64
VALUE_LIMIT = 2.0**15


def _crc8_table(poly: int = 0x07) -> tuple[int, ...]:
    table = []
    for byte in range(256):
        crc = byte
        for _ in range(8):
            crc = ((crc << 1) ^ poly) & 0xFF if crc & 0x80 else (crc << 1) & 0xFF
        table.append(crc)
    return tuple(table)


_CRC_TABLE = _crc8_table()


def crc8(data: bytes) -> int:
    crc = 0
    for b in data:
        crc = _CRC_TABLE[crc ^ b]
    return crc


def quantize(value: float) -> int:
    """Two's-complement 32-bit fixed-point code of ``value``."""
    if not abs(value) < VALUE_LIMIT:
        raise FrameRangeError(f"value {value!r} outside (-2^15, 2^15)")
    code = int(round(value * (1 << FRACTION_BITS)))
    # round() can push 2^15 - tiny up to the limit
    code = max(-(1 << 31), min((1 << 31) - 1, code))
    return code & 0xFFFFFFFF


def dequantize(payload: int) -> float:
    payload &= 0xFFFFFFFF
    if payload & 0x80000000:
        payload -= 1 << 32
    return payload * QUANTUM


def quantized(value: float) -> float:
    return dequantize(quantize(value))


def _crc_over(head56: int, tolerant_bits: int) -> int:
    if tolerant_bits:
        head56 &= ~((1 << tolerant_bits) - 1)
    return crc8(head56.to_bytes(7, "big"))


def encode_payload(payload: int, seq: int, tolerant_bits: int = 0) -> int:
    if not 0 <= seq < 1 << 16:
        raise FrameRangeError(f"sequence number {seq} outside [0, 2^16)")
    head = (MAGIC << 48) | (seq << 32) | (payload & 0xFFFFFFFF)
    return (head << 8) | _crc_over(head, tolerant_bits)


def encode_frame(value: float, seq: int, tolerant_bits: int = 0) -> int:
    return encode_payload(quantize(value), seq, tolerant_bits)


@dataclass(frozen=True)
class DecodedFrame:
    in_E: bool
    seq: int | None = None
    value: float | None = None
    payload: int | None = None


INVALID = DecodedFrame(False)


def decode_frame(bits: int, tolerant_bits: int = 0) -> DecodedFrame:
    """Membership test plus field extraction; invalid frames carry no fields."""
    bits &= (1 << FRAME_BITS) - 1
    head = bits >> 8
    if head >> 48 != MAGIC or _crc_over(head, tolerant_bits) != bits & 0xFF:
        return INVALID
    payload = head & 0xFFFFFFFF
    return DecodedFrame(True, (head >> 32) & 0xFFFF, dequantize(payload), payload)


def in_admissible_set(bits: int, tolerant_bits: int = 0) -> bool:
    return decode_frame(bits, tolerant_bits).in_E


def payload_mask(low_bits: int) -> int:
    """Frame-bit mask of the lowest ``low_bits`` payload digits."""
    return ((1 << low_bits) - 1) << PAYLOAD_SHIFT
