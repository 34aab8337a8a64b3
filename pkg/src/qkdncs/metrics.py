"""Closed-form security and delay models.

Security of an algorithm is ``eta * R * log2(N)`` normalized by the AES-256
value, and the overall system score folds in key insecurity ``epsilon`` and the
key reuse count ``r``.  The delay side converts per-period traffic (ciphertext
plus Cascade parity bits) into a round-trip latency with the identified
``T0``/``C`` constants of the servo testbed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidReuseError, NoSecurityError

log = logging.getLogger(__name__)

# ByteSub, ShiftRow, MixColumn, RoundKeyAddition
OPERATIONS = ("bytesub", "shiftrow", "mixcolumn", "roundkeyadd")
SPN_COUNTS = (16 * 16, 3, 1, 128)
OP_COUNTS = {
    "xor": (0, 0, 0, 32),
    "feistel": (4 * 16, 1, 0, 32),
    "spn": SPN_COUNTS,
}
SPN_WEIGHT = 0.25

# S_A of AES-256 = eta(1) * R(14) * log2(256)(8).  Hard-coded so that editing
# the eta table does not silently rescale every other row.
NORMALIZER = 112.0

MAX_QBER = 0.11
T0_DEFAULT = 0.055
BANDWIDTH_DEFAULT = 18000.0


@dataclass(frozen=True)
class EtaBreakdown:
    s_bytesub: float
    s_shiftrow: float
    s_mixcolumn: float
    s_roundkeyadd: float
    op_counts: tuple[int, int, int, int]

    @property
    def eta(self) -> float:
        return self.s_bytesub + self.s_shiftrow + self.s_mixcolumn + self.s_roundkeyadd


def eta_breakdown(op_counts, spn_counts=SPN_COUNTS) -> EtaBreakdown:
    if len(op_counts) != 4 or len(spn_counts) != 4:
        raise ValueError("expected four operation counts")
    if min(spn_counts) <= 0:
        raise ValueError("SPN reference counts must be strictly positive")
    parts = [c / s * SPN_WEIGHT for c, s in zip(op_counts, spn_counts)]
    return EtaBreakdown(*parts, op_counts=tuple(int(c) for c in op_counts))


def eta_of(op_counts, spn_counts=SPN_COUNTS) -> float:
    """Round-function complexity relative to one SPN round (which scores 1)."""
    return eta_breakdown(op_counts, spn_counts).eta


def tabulated_eta(family: str) -> float:
    """eta rounded to the four decimals the comparison table carries."""
    return round(eta_of(OP_COUNTS[family]), 4)


def log2_key_len(n_bits: int) -> float:
    """log2(N) at the two-decimal precision of the security table.

    Only AES-192 is affected (7.5850 -> 7.58); that rounding is what makes the
    tabulated 0.8121 come out.
    """
    return round(math.log2(n_bits), 2)


@dataclass(frozen=True)
class SecurityParams:
    eta: float
    rounds_R: int
    key_len_N: int
    epsilon: float = 0.1
    reuse_r: float = 1.0
    normalizer: float = NORMALIZER

    def __post_init__(self):
        if self.key_len_N < 2:
            raise ValueError("key length must be at least 2 bits")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.reuse_r < 1:
            raise ValueError("reuse count r must be >= 1")
        if self.reuse_r >= 2.0**self.key_len_N:
            raise InvalidReuseError(f"r={self.reuse_r} must stay below 2^{self.key_len_N}")


def security_algorithm(spec: SecurityParams) -> float:
    """Normalized algorithm strength S_A."""
    return spec.eta * spec.rounds_R * log2_key_len(spec.key_len_N) / spec.normalizer


def security_overall(spec: SecurityParams) -> float:
    """S = 1 - eps * r * (1 - S_A)."""
    s_a = security_algorithm(spec)
    loss = spec.epsilon * spec.reuse_r * (1.0 - s_a)
    if loss > 1.0 + 1e-12:
        raise ValueError(f"epsilon*r*(1-S_A) = {loss:.4g} exceeds 1")
    return 1.0 - loss


# -- communication load and delay ------------------------------------------


def block_length(e: float) -> int:
    """Cascade first-pass block length l0 = floor(1/e)."""
    if not 0 < e <= MAX_QBER:
        raise ValueError(f"QBER e={e} outside (0, {MAX_QBER}]")
    # 1/e of e.g. 0.1 lands a hair above or below the integer
    return max(1, math.floor(1.0 / e + 1e-9))


def ec_blocks(N: int, l0: int, m_over_n: float) -> int:
    """The bracketed block count [n N / (m l0)], rounded to nearest."""
    if not 0 < m_over_n <= 1:
        raise ValueError("m/n must lie in (0, 1]")
    exact = N / (m_over_n * l0)
    count = round(exact)
    if abs(exact - count) > 1e-9:
        log.info("rounding block count %.6g -> %d", exact, count)
    return count


def ec_leak_for_block(N: int, l0: int, m_over_n: float) -> float:
    return ec_blocks(N, l0, m_over_n) * math.log2(l0)


def ec_leak(N: int, e: float, m_over_n: float) -> float:
    """Model Cascade traffic l_EC in bits (real valued)."""
    return ec_leak_for_block(N, block_length(e), m_over_n)


def comm_load(N: int, e: float, m_over_n: float) -> float:
    """Bits exchanged per period: ciphertext N plus reconciliation traffic."""
    return N + ec_leak(N, e, m_over_n)


@dataclass(frozen=True)
class DelayParams:
    T0: float = T0_DEFAULT
    bandwidth_C: float = BANDWIDTH_DEFAULT
    qber_e: float = 0.1
    ratio_m_over_n: float = 0.2
    delta_tau_dist: tuple[float, float] = field(default=(0.004, 0.002))
    # raw keys skip reconciliation, so no l_EC traffic
    include_ec: bool = True

    def __post_init__(self):
        if self.T0 < 0 or self.bandwidth_C <= 0:
            raise ValueError("T0 must be >= 0 and C > 0")
        if not 0 < self.qber_e <= MAX_QBER:
            raise ValueError(f"QBER e={self.qber_e} outside (0, {MAX_QBER}]")


def deterministic_delay(params: DelayParams, N: int) -> float:
    load = comm_load(N, params.qber_e, params.ratio_m_over_n) if params.include_ec else float(N)
    if math.isinf(params.bandwidth_C):
        return params.T0
    return params.T0 + 2.0 * load / params.bandwidth_C


def sample_delta_tau(params: DelayParams, rng: np.random.Generator) -> float:
    mean, std = params.delta_tau_dist
    if std <= 0:
        return max(mean, 0.0)
    # normal truncated at zero, by rejection
    while True:
        x = rng.normal(mean, std)
        if x >= 0:
            return float(x)


def round_trip_delay(
    params: DelayParams,
    N: int,
    sample_noise: bool = False,
    rng: np.random.Generator | None = None,
) -> float:
    """tau = T0 + 2 l / C (+ hardware jitter when ``sample_noise``)."""
    tau = deterministic_delay(params, N)
    if sample_noise:
        if rng is None:
            raise ValueError("sample_noise requires an rng")
        tau += sample_delta_tau(params, rng)
    return tau


# -- key management and privacy amplification --------------------------------


def reuse_leakage(l_bits: int, r: int) -> float:
    """Eve's posterior on a plaintext when each l-bit pad is used r times."""
    if r < 1 or r >= 2**l_bits:
        raise InvalidReuseError(f"reuse count r={r} must satisfy 1 <= r < 2^{l_bits}")
    return r * 2.0**-l_bits


def pa_bound(n: int, t: int, m: int) -> float:
    """Upper bound on Eve's mutual information after hashing n -> m bits."""
    s = n - t - m
    if s <= 0:
        raise NoSecurityError(f"n={n} <= t+m={t + m}: no security margin left")
    return 2.0**-s / math.log(2)
