"""Cipher parameter records and the config-string registry."""

from __future__ import annotations

import re
from dataclasses import dataclass

from .. import metrics


@dataclass(frozen=True)
class CipherSpec:
    name: str
    family: str  # "none", "xor", "feistel" or "aes"
    key_len_N: int
    rounds_R: int
    eta: float
    block_len: int

    def security_params(self, epsilon: float = 0.1, reuse_r: float = 1.0) -> metrics.SecurityParams:
        return metrics.SecurityParams(
            eta=self.eta,
            rounds_R=self.rounds_R,
            key_len_N=self.key_len_N,
            epsilon=epsilon,
            reuse_r=reuse_r,
        )

    @property
    def security_algorithm(self) -> float:
        return metrics.security_algorithm(self.security_params())

    def frame_key_bits(self, frame_bits: int = 64) -> int:
        """Pool bits charged per encrypted frame under OTP."""
        if self.family == "none":
            return 0
        if self.family == "xor":
            return -(-frame_bits // self.key_len_N) * self.key_len_N
        return self.key_len_N


XOR = CipherSpec("xor", "xor", 8, 1, metrics.tabulated_eta("xor"), 8)
DES = CipherSpec("des", "feistel", 64, 16, metrics.tabulated_eta("feistel"), 64)
AES128 = CipherSpec("aes128", "aes", 128, 10, 1.0, 128)
AES192 = CipherSpec("aes192", "aes", 192, 12, 1.0, 128)
AES256 = CipherSpec("aes256", "aes", 256, 14, 1.0, 128)
# framing only, no encryption: the baseline for the transparency checks
PLAIN = CipherSpec("none", "none", 8, 1, metrics.tabulated_eta("xor"), 64)


def feistel(rounds: int) -> CipherSpec:
    if rounds < 1:
        raise ValueError("a Feistel network needs at least one round")
    return CipherSpec(f"feistel:{rounds}", "feistel", 64, rounds, metrics.tabulated_eta("feistel"), 64)


_NAMED = {c.name: c for c in (XOR, DES, AES128, AES192, AES256, PLAIN)}
_NAMED["plain"] = PLAIN
_FEISTEL_RE = re.compile(r"^feistel:(\d+)$")


def parse_cipher(text: str) -> CipherSpec:
    key = text.strip().lower()
    if key in _NAMED:
        return _NAMED[key]
    m = _FEISTEL_RE.match(key)
    if m:
        return feistel(int(m.group(1)))
    raise ValueError(f"unknown cipher {text!r}; expected xor, feistel:<n>, des, aes128, aes192, aes256")


# rows of the security-vs-performance comparison, in table order
TABLE3_CIPHERS = (XOR, feistel(1), feistel(8), DES, AES128, AES192, AES256)
