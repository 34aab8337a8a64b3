"""AES-128/192/256 single-block encryption (ECB on one block, no padding)."""

from __future__ import annotations

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

ROUNDS = {128: 10, 192: 12, 256: 14}


def _check_key(key: bytes) -> None:
    if len(key) * 8 not in ROUNDS:
        raise ValueError(f"AES key must be 128, 192 or 256 bits, got {len(key) * 8}")


def aes_encrypt(block: bytes, key: bytes) -> bytes:
    _check_key(key)
    if len(block) != 16:
        raise ValueError("AES block must be 16 bytes")
    enc = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
    return enc.update(block) + enc.finalize()


def aes_decrypt(block: bytes, key: bytes) -> bytes:
    _check_key(key)
    if len(block) != 16:
        raise ValueError("AES block must be 16 bytes")
    dec = Cipher(algorithms.AES(key), modes.ECB()).decryptor()
    return dec.update(block) + dec.finalize()


def aes_encrypt_int(block: int, key: int, key_bits: int) -> int:
    out = aes_encrypt(block.to_bytes(16, "big"), key.to_bytes(key_bits // 8, "big"))
    return int.from_bytes(out, "big")


def aes_decrypt_int(block: int, key: int, key_bits: int) -> int:
    out = aes_decrypt(block.to_bytes(16, "big"), key.to_bytes(key_bits // 8, "big"))
    return int.from_bytes(out, "big")
