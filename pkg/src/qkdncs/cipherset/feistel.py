"""Parametric balanced Feistel network on 64-bit blocks.

Round function ``F(R, K_i) = M(S(R ^ K_i))``: the 4-bit PRESENT S-box on each
nibble, then a rotate-and-xor mix ``M(y) = y ^ rotl(y, 7) ^ rotl(y, 19)``
spreading each bit across nibbles.  Passing ``mix=False`` drops ``M``.  Subkey ``K_i`` (rounds numbered from 1) is the upper half of
the 64-bit master key rotated left by ``i``.  The final half swap is omitted,
so decryption runs the same rounds with the subkeys in reverse order.
"""

from __future__ import annotations

from collections.abc import Sequence

# PRESENT block cipher S-box (Bogdanov et al., CHES 2007)
PRESENT_SBOX = (0xC, 0x5, 0x6, 0xB, 0x9, 0x0, 0xA, 0xD, 0x3, 0xE, 0xF, 0x8, 0x4, 0x7, 0x1, 0x2)
IDENTITY_SBOX = tuple(range(16))

MASK32 = 0xFFFFFFFF
MASK64 = 0xFFFFFFFFFFFFFFFF


def _rotl64(x: int, r: int) -> int:
    r %= 64
    return ((x << r) | (x >> (64 - r))) & MASK64


def subkey(key: int, round_index: int) -> int:
    return _rotl64(key & MASK64, round_index) >> 32


def _sbox32(x: int, sbox: Sequence[int]) -> int:
    out = 0
    for shift in range(0, 32, 4):
        out |= sbox[(x >> shift) & 0xF] << shift
    return out


def _rotl32(x: int, r: int) -> int:
    return ((x << r) | (x >> (32 - r))) & MASK32


def mix32(y: int) -> int:
    return y ^ _rotl32(y, 7) ^ _rotl32(y, 19)


def round_function(right: int, k: int, sbox: Sequence[int] = PRESENT_SBOX, mix: bool = True) -> int:
    y = _sbox32((right ^ k) & MASK32, sbox)
    return mix32(y) if mix else y


def feistel_encrypt(
    block: int, key: int, rounds: int, sbox: Sequence[int] = PRESENT_SBOX, mix: bool = True
) -> int:
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    left, right = (block >> 32) & MASK32, block & MASK32
    for i in range(1, rounds + 1):
        left, right = right, left ^ round_function(right, subkey(key, i), sbox, mix)
    return (left << 32) | right


def feistel_decrypt(
    block: int, key: int, rounds: int, sbox: Sequence[int] = PRESENT_SBOX, mix: bool = True
) -> int:
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    left, right = (block >> 32) & MASK32, block & MASK32
    for i in range(rounds, 0, -1):
        left, right = right ^ round_function(left, subkey(key, i), sbox, mix), left
    return (left << 32) | right
