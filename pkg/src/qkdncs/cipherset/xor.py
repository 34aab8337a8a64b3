"""Bitwise XOR (RoundKeyAddition only)."""

from __future__ import annotations


def tile_key(key: int, key_bits: int, width: int) -> int:
    """Repeat a ``key_bits``-wide key until it covers ``width`` bits."""
    unit = key & ((1 << key_bits) - 1)
    out = 0
    for shift in range(0, width, key_bits):
        out |= unit << shift
    return out & ((1 << width) - 1)


def xor_encrypt(block: int, key: int, block_bits: int = 64, key_bits: int | None = None) -> int:
    """XOR ``block`` with ``key``; a short key is tiled across the block.

    Self-inverse, so decryption is the same call.
    """
    if key_bits is not None and key_bits < block_bits:
        key = tile_key(key, key_bits, block_bits)
    return (block ^ key) & ((1 << block_bits) - 1)


xor_decrypt = xor_encrypt
