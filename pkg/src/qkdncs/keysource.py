"""Bit-level BB84 post-processing and the synchronized key pools.

The photon layer is reduced to bit arrays plus a channel flip mask.  From there
the pipeline is the usual one: sifting with QBER estimation on sacrificed
check bits, Cascade reconciliation (parity blocks, binary search, reshuffled
passes with backtracking), and privacy amplification by a seeded binary
Toeplitz matrix.

All bit sequences are ``numpy.uint8`` arrays of zeros and ones.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from . import metrics
from .errors import (
    EmptyInputError,
    InsufficientKeyMaterial,
    KeyUnderrunError,
    QberAbortError,
    ReconciliationError,
)

log = logging.getLogger(__name__)

ABORT_QBER = metrics.MAX_QBER
DEFAULT_CHECK_FRACTION = 0.1
DEFAULT_PASSES = 4
# block length per pass, in units of l0
PASS_SCHEDULE = (1, 1, 2, 4)


def random_bits(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 2, size=n, dtype=np.uint8)


def bits_to_int(bits) -> int:
    """MSB-first bit array to integer."""
    return int("".join("1" if b else "0" for b in bits) or "0", 2)


def int_to_bits(value: int, width: int) -> np.ndarray:
    return np.array([(value >> (width - 1 - i)) & 1 for i in range(width)], dtype=np.uint8)


# -- sifting -------------------------------------------------------------------


@dataclass
class PhotonBatch:
    alice_bits: np.ndarray
    alice_bases: np.ndarray
    bob_bases: np.ndarray
    flip_mask: np.ndarray

    def __post_init__(self):
        n = len(self.alice_bits)
        if not (len(self.alice_bases) == len(self.bob_bases) == len(self.flip_mask) == n):
            raise ValueError("photon batch sequences must have equal length")

    def __len__(self) -> int:
        return len(self.alice_bits)


def generate_batch(n: int, qber: float, rng: np.random.Generator) -> PhotonBatch:
    return PhotonBatch(
        alice_bits=random_bits(n, rng),
        alice_bases=random_bits(n, rng),
        bob_bases=random_bits(n, rng),
        flip_mask=(rng.random(n) < qber).astype(np.uint8),
    )


@dataclass
class SiftedKeyPair:
    alice_key: np.ndarray
    bob_key: np.ndarray
    qber_estimate: float
    check_bits_spent: int = 0

    def __post_init__(self):
        if len(self.alice_key) != len(self.bob_key):
            raise ValueError("sifted keys differ in length")

    def __len__(self) -> int:
        return len(self.alice_key)

    @property
    def true_error_rate(self) -> float:
        if len(self) == 0:
            return 0.0
        return float(np.mean(self.alice_key != self.bob_key))


def sacrifice_check_bits(
    alice: np.ndarray,
    bob: np.ndarray,
    check_fraction: float,
    rng: np.random.Generator | None,
    abort_qber: float = ABORT_QBER,
) -> SiftedKeyPair:
    """Publicly compare a random subset of positions, then drop them."""
    n = len(alice)
    n_check = int(round(check_fraction * n))
    if n_check == 0:
        return SiftedKeyPair(alice.copy(), bob.copy(), 0.0, 0)
    if rng is None:
        raise ValueError("QBER estimation needs an rng to pick check bits")
    chk = rng.choice(n, size=n_check, replace=False)
    qber = float(np.mean(alice[chk] != bob[chk]))
    if qber > abort_qber:
        raise QberAbortError(qber, abort_qber)
    keep = np.ones(n, dtype=bool)
    keep[chk] = False
    return SiftedKeyPair(alice[keep], bob[keep], qber, n_check)


def sift(
    batch: PhotonBatch,
    check_fraction: float = DEFAULT_CHECK_FRACTION,
    rng: np.random.Generator | None = None,
    abort_qber: float = ABORT_QBER,
) -> SiftedKeyPair:
    """Keep matching-basis positions and estimate the QBER on check bits."""
    if len(batch) == 0:
        raise EmptyInputError("empty photon batch")
    keep = batch.alice_bases == batch.bob_bases
    alice = batch.alice_bits[keep]
    bob = alice ^ batch.flip_mask[keep]
    return sacrifice_check_bits(alice, bob, check_fraction, rng, abort_qber)


# -- Cascade -------------------------------------------------------------------


@dataclass
class ReconciliationResult:
    corrected_alice: np.ndarray
    corrected_bob: np.ndarray
    leaked_model: float
    leaked_bits: int
    block_length_l0: int
    passes_used: int = 0
    parity_bits: int = 0
    search_bits: int = 0
    corrections: int = 0
    first_pass_errored_blocks: int = 0
    first_pass_search_bits: int = 0

    @property
    def success(self) -> bool:
        return bool(np.array_equal(self.corrected_alice, self.corrected_bob))


def cascade_block_length(qber: float, n: int) -> int:
    if qber <= 0:
        return max(1, n)
    return max(1, min(n, math.floor(1.0 / qber + 1e-9)))


def _block_parities(bits: np.ndarray, perm: np.ndarray, size: int) -> np.ndarray:
    starts = np.arange(0, len(perm), size)
    return (np.add.reduceat(bits[perm].astype(np.int64), starts) & 1).astype(np.uint8)


def _first_pass(alice, bob, size):
    """Identity-permutation pass, binary searches run in lockstep."""
    n = len(alice)
    a_par = _block_parities(alice, np.arange(n), size)
    b_par = _block_parities(bob, np.arange(n), size)
    odd = np.nonzero(a_par ^ b_par)[0]
    lo = odd * size
    hi = np.minimum(lo + size, n)
    ca = np.concatenate(([0], np.cumsum(alice, dtype=np.int64)))
    cb = np.concatenate(([0], np.cumsum(bob, dtype=np.int64)))
    steps = np.zeros(len(odd), dtype=np.int64)
    active = hi - lo > 1
    while active.any():
        mid = (lo + hi) // 2
        left_odd = ((ca[mid] - ca[lo]) + (cb[mid] - cb[lo])) & 1
        go_left = active & (left_odd == 1)
        go_right = active & (left_odd == 0)
        hi = np.where(go_left, mid, hi)
        lo = np.where(go_right, mid, lo)
        steps += active
        active = hi - lo > 1
    bob[lo] ^= 1
    b_par[odd] ^= 1
    return a_par, b_par, len(odd), int(steps.sum())


def _search(alice: list, bob: list, idx: list) -> tuple[int, int]:
    """Binary search for one error in an odd-parity block (plain lists for speed)."""
    lo, hi = 0, len(idx)
    steps = 0
    while hi - lo > 1:
        mid = (lo + hi) // 2
        steps += 1
        a_par = b_par = 0
        for i in idx[lo:mid]:
            a_par ^= alice[i]
            b_par ^= bob[i]
        if a_par != b_par:
            hi = mid
        else:
            lo = mid
    return idx[lo], steps


def reconcile(
    pair: SiftedKeyPair,
    output_len_N: int,
    ratio_m_over_n: float,
    rng: np.random.Generator | None = None,
    passes: int = DEFAULT_PASSES,
) -> ReconciliationResult:
    """Cascade error correction on Bob's copy.

    Passes stop early once both copies agree (equality is assumed to be
    confirmed over the public channel; that check is not counted as leakage).
    ``leaked_model`` is the closed-form traffic per ``output_len_N`` output
    bits, ``leaked_bits`` the parities actually disclosed here.
    """
    n = len(pair)
    if pair.qber_estimate > ABORT_QBER:
        raise ValueError(f"QBER estimate {pair.qber_estimate} above {ABORT_QBER}")
    if output_len_N > n:
        raise ValueError(f"output length {output_len_N} exceeds key length {n}")
    if n == 0:
        raise EmptyInputError("empty sifted key")
    if rng is None:
        rng = np.random.default_rng(0)
    l0 = cascade_block_length(pair.qber_estimate, n)
    leaked_model = metrics.ec_leak_for_block(output_len_N, l0, ratio_m_over_n)

    alice = pair.alice_key
    bob = pair.bob_key.copy()
    result = ReconciliationResult(alice.copy(), bob, leaked_model, 0, l0)

    perms: list[np.ndarray] = []
    inverses: list[np.ndarray] = []
    sizes: list[int] = []
    a_pars: list[np.ndarray] = []
    b_pars: list[np.ndarray] = []
    schedule = PASS_SCHEDULE + (PASS_SCHEDULE[-1],) * max(0, passes - len(PASS_SCHEDULE))
    a_list = b_list = None

    for p in range(passes):
        size = min(n, l0 * schedule[p])
        if p == 0:
            perm = np.arange(n)
            a_par, b_par, errored, steps = _first_pass(alice, bob, size)
            result.first_pass_errored_blocks = errored
            result.first_pass_search_bits = steps
            result.search_bits += steps
            result.corrections += errored
        else:
            perm = rng.permutation(n)
            a_par = _block_parities(alice, perm, size)
            b_par = _block_parities(bob, perm, size)
        inv = np.empty(n, dtype=np.int64)
        inv[perm] = np.arange(n)
        perms.append(perm)
        inverses.append(inv)
        sizes.append(size)
        a_pars.append(a_par)
        b_pars.append(b_par)
        result.parity_bits += len(a_par)
        result.passes_used = p + 1

        if p > 0:
            if a_list is None:
                a_list, b_list = alice.tolist(), bob.tolist()
            stack = [(p, int(b)) for b in np.nonzero(a_par ^ b_par)[0]]
            while stack:
                q, blk = stack.pop()
                if a_pars[q][blk] == b_pars[q][blk]:
                    continue
                sq = sizes[q]
                pos, steps = _search(a_list, b_list, perms[q][blk * sq : (blk + 1) * sq].tolist())
                result.search_bits += steps
                result.corrections += 1
                bob[pos] ^= 1
                b_list[pos] ^= 1
                # the flip toggles one block parity in every earlier pass
                for r in range(p + 1):
                    rb = int(inverses[r][pos] // sizes[r])
                    b_pars[r][rb] ^= 1
                    if r != q and a_pars[r][rb] != b_pars[r][rb]:
                        stack.append((r, rb))

        if np.array_equal(alice, bob):
            break

    result.leaked_bits = result.parity_bits + result.search_bits
    residual = int(np.count_nonzero(alice != bob))
    if residual:
        raise ReconciliationError(residual, result.passes_used)
    return result


# -- privacy amplification -------------------------------------------------------


def toeplitz_vector(n: int, m: int, seed: int) -> np.ndarray:
    """Diagonal constants of an m x n Toeplitz matrix: T[i, j] = v[i - j + n - 1]."""
    return random_bits(n + m - 1, np.random.default_rng(seed))


def toeplitz_hash(bits: np.ndarray, out_len: int, seed: int) -> np.ndarray:
    """Multiply ``bits`` by a seeded random binary Toeplitz matrix over GF(2)."""
    n = len(bits)
    if out_len < 1:
        raise InsufficientKeyMaterial("hash output length must be >= 1")
    v = toeplitz_vector(n, out_len, seed)
    if n * out_len <= 1 << 16:
        full = np.convolve(v.astype(np.int64), bits.astype(np.int64))
    else:
        full = np.rint(fftconvolve(v.astype(np.float64), bits.astype(np.float64)))
    return (full[n - 1 : n - 1 + out_len].astype(np.int64) & 1).astype(np.uint8)


def privacy_amplify(
    result: ReconciliationResult, leaked_t: int, security_s: int, seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Compress both corrected keys to m = n - t - s bits with a shared hash.

    Returns ``(alice_final, bob_final)``.
    """
    n = len(result.corrected_alice)
    m = n - leaked_t - security_s
    if m < 1:
        raise InsufficientKeyMaterial(
            f"n={n}, t={leaked_t}, s={security_s} leaves no output bits"
        )
    return (
        toeplitz_hash(result.corrected_alice, m, seed),
        toeplitz_hash(result.corrected_bob, m, seed),
    )


# -- pools -------------------------------------------------------------------------


@dataclass
class PoolKey:
    """One key id with both parties' copies (identical for final grade)."""

    key_id: int
    alice: np.ndarray
    bob: np.ndarray
    grade: str
    use_count: int = 0

    @property
    def hamming_gap(self) -> int:
        return int(np.count_nonzero(self.alice != self.bob))


@dataclass
class PoolStats:
    sifted_bits: int = 0
    check_bits: int = 0
    output_bits: int = 0
    leaked_bits: int = 0
    batches: int = 0
    qber_aborts: int = 0
    reconcile_failures: int = 0
    starved_batches: int = 0
    keys_generated: int = 0
    keys_consumed: int = 0
    key_uses: int = 0


@dataclass
class KeyPool:
    """Synchronized key store shared (by key id) between Alice and Bob.

    ``generation_rate`` is in sifted bits per second.  Raw grade hands those
    bits out directly; final grade pushes them through QBER estimation,
    Cascade and privacy amplification first.
    """

    key_len: int
    generation_rate: float
    grade: str = "final"
    qber: float = 0.1
    check_fraction: float = DEFAULT_CHECK_FRACTION
    ratio_m_over_n: float = 0.2
    pa_security_s: int = 20
    policy: str = "strict"
    # sifted bits to accumulate before running the pipeline (0: immediately)
    batch_bits: int = 0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    keys: list[PoolKey] = field(default_factory=list)
    stats: PoolStats = field(default_factory=PoolStats)

    def __post_init__(self):
        if self.grade not in ("raw", "final"):
            raise ValueError(f"grade must be raw or final, not {self.grade!r}")
        if self.policy not in ("strict", "reuse"):
            raise ValueError(f"policy must be strict or reuse, not {self.policy!r}")
        self.cursor = 0  # index of the next never-used key
        self.next_id = 0
        self._credit = 0.0
        self._pending = 0
        self._spill_a = np.zeros(0, dtype=np.uint8)
        self._spill_b = np.zeros(0, dtype=np.uint8)
        self._reuse_at = 0

    # generation ----------------------------------------------------------

    @property
    def available(self) -> int:
        return len(self.keys) - self.cursor

    @property
    def pending_bits(self) -> int:
        return self._pending

    def _append_bits(self, alice: np.ndarray, bob: np.ndarray, grade: str) -> int:
        a = np.concatenate((self._spill_a, alice))
        b = np.concatenate((self._spill_b, bob))
        count = len(a) // self.key_len
        for k in range(count):
            sl = slice(k * self.key_len, (k + 1) * self.key_len)
            self.keys.append(PoolKey(self.next_id, a[sl].copy(), b[sl].copy(), grade))
            self.next_id += 1
        used = count * self.key_len
        self._spill_a, self._spill_b = a[used:], b[used:]
        self.stats.keys_generated += count
        return count

    def _final_bits(self, nbits: int) -> tuple[np.ndarray, np.ndarray] | None:
        rng = self.rng
        alice = random_bits(nbits, rng)
        bob = alice ^ (rng.random(nbits) < self.qber).astype(np.uint8)
        self.stats.batches += 1
        try:
            pair = sacrifice_check_bits(alice, bob, self.check_fraction, rng)
        except QberAbortError as exc:
            self.stats.qber_aborts += 1
            log.debug("batch discarded: %s", exc)
            return None
        self.stats.check_bits += pair.check_bits_spent
        if len(pair) == 0:
            return None
        try:
            result = reconcile(pair, min(self.key_len, len(pair)), self.ratio_m_over_n, rng)
        except ReconciliationError as exc:
            self.stats.reconcile_failures += 1
            log.debug("batch discarded: %s", exc)
            return None
        n = len(pair)
        t = result.leaked_bits
        m = min(int(self.ratio_m_over_n * n), n - t - self.pa_security_s)
        if m < 1:
            self.stats.starved_batches += 1
            return None
        self.stats.leaked_bits += t
        seed = int(rng.integers(0, 2**63))
        return privacy_amplify(result, t, n - t - m, seed)

    def process(self, nbits: int, grade: str | None = None) -> int:
        """Run ``nbits`` sifted bits through the pipeline; returns new key count."""
        grade = grade or self.grade
        if nbits <= 0:
            return 0
        self.stats.sifted_bits += nbits
        if grade == "raw":
            alice = random_bits(nbits, self.rng)
            bob = alice ^ (self.rng.random(nbits) < self.qber).astype(np.uint8)
            out = (alice, bob)
        else:
            out = self._final_bits(nbits)
            if out is None:
                return 0
        self.stats.output_bits += len(out[0])
        return self._append_bits(out[0], out[1], grade)

    def credit(self, elapsed: float) -> int:
        """Accrue generation time; returns whole sifted bits now pending."""
        if elapsed < 0:
            raise ValueError("elapsed time must be >= 0")
        self._credit += self.generation_rate * elapsed
        whole = math.floor(self._credit + 1e-9)
        self._credit -= whole
        self._pending += whole
        return self._pending

    def flush(self, grade: str | None = None) -> int:
        nbits, self._pending = self._pending, 0
        return self.process(nbits, grade)

    # consumption ---------------------------------------------------------

    def ensure(self, count: int) -> bool:
        """Process pending credit until ``count`` fresh keys exist (if possible).

        Works through the backlog in ``batch_bits`` chunks so that only the
        material actually needed is post-processed.
        """
        while self.available < count and self._pending:
            chunk = self._pending if self.batch_bits <= 0 else min(self._pending, self.batch_bits)
            self._pending -= chunk
            self.process(chunk)
        return self.available >= count

    def take(self, count: int, clock: float | None = None) -> list[PoolKey]:
        """Consume ``count`` keys, marking one use each."""
        self.ensure(count)
        fresh = min(count, self.available)
        out = self.keys[self.cursor : self.cursor + fresh]
        self.cursor += fresh
        short = count - fresh
        if short:
            if self.policy == "strict" or self.cursor == 0:
                self.cursor -= fresh
                raise KeyUnderrunError(count, fresh, clock)
            # reuse already-consumed keys round robin
            for _ in range(short):
                out.append(self.keys[self._reuse_at % self.cursor])
                self._reuse_at += 1
        for key in out:
            key.use_count += 1
        self.stats.keys_consumed += fresh
        self.stats.key_uses += count
        return out

    def reuse_factor(self) -> float:
        """Measured r: uses per distinct consumed key (1.0 under OTP)."""
        if self.cursor == 0:
            return 1.0
        return self.stats.key_uses / self.cursor

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["key_id", "grade", "use_count", "hamming_gap"])
        for key in self.keys:
            w.writerow([key.key_id, key.grade, key.use_count, key.hamming_gap])
        return buf.getvalue()


def refill(pool: KeyPool, grade: str | None = None, elapsed: float = 0.0) -> KeyPool:
    """Credit ``elapsed`` seconds of generation and package new keys.

    With ``pool.batch_bits`` > 0 the pipeline only runs once that many sifted
    bits have accrued (``KeyPool.ensure`` flushes early on demand).
    """
    pending = pool.credit(elapsed)
    if pending and pending >= pool.batch_bits:
        pool.flush(grade)
    return pool
