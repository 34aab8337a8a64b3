"""Symmetric ciphers and the admissible-frame codec."""

from .aes import aes_decrypt, aes_decrypt_int, aes_encrypt, aes_encrypt_int
from .feistel import feistel_decrypt, feistel_encrypt
from .frame import DecodedFrame, decode_frame, encode_frame, in_admissible_set
from .spec import (
    AES128,
    AES192,
    AES256,
    DES,
    PLAIN,
    TABLE3_CIPHERS,
    XOR,
    CipherSpec,
    feistel,
    parse_cipher,
)
from .xor import xor_decrypt, xor_encrypt

FRAME_MASK = (1 << 64) - 1


def ciphertext_bits(spec: CipherSpec) -> int:
    return 128 if spec.family == "aes" else 64


def encrypt_frame(spec: CipherSpec, frame: int, key: int, key_bits: int | None = None) -> int:
    """Encrypt one 64-bit frame; AES carries it zero-padded in a 128-bit block."""
    if spec.family == "none":
        return frame
    if spec.family == "xor":
        return xor_encrypt(frame, key, 64, key_bits)
    if spec.family == "feistel":
        return feistel_encrypt(frame, key, spec.rounds_R)
    if spec.family == "aes":
        return aes_encrypt_int(frame & FRAME_MASK, key, spec.key_len_N)
    raise ValueError(f"unknown cipher family {spec.family!r}")


def decrypt_frame(spec: CipherSpec, ciphertext: int, key: int, key_bits: int | None = None) -> int:
    if spec.family == "none":
        return ciphertext & FRAME_MASK
    if spec.family == "xor":
        return xor_decrypt(ciphertext, key, 64, key_bits)
    if spec.family == "feistel":
        return feistel_decrypt(ciphertext, key, spec.rounds_R)
    if spec.family == "aes":
        return aes_decrypt_int(ciphertext, key, spec.key_len_N) & FRAME_MASK
    raise ValueError(f"unknown cipher family {spec.family!r}")


__all__ = [
    "AES128",
    "AES192",
    "AES256",
    "DES",
    "PLAIN",
    "TABLE3_CIPHERS",
    "XOR",
    "CipherSpec",
    "DecodedFrame",
    "aes_decrypt",
    "aes_encrypt",
    "ciphertext_bits",
    "decode_frame",
    "decrypt_frame",
    "encode_frame",
    "encrypt_frame",
    "feistel",
    "feistel_decrypt",
    "feistel_encrypt",
    "in_admissible_set",
    "parse_cipher",
    "xor_decrypt",
    "xor_encrypt",
]
