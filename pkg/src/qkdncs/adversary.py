"""Attack injection on the ciphertext channel and key-desync detection.

Under one-time-pad keys every frame is decrypted with the key reserved for its
slot.  A dropped, replayed or altered ciphertext therefore decrypts to a
string outside the admissible frame set, except with probability 2^-16.  The
receiver tells the three cases apart by (a) finding a later slot key that does
open the frame (a gap: DoS), (b) matching the ciphertext digest against what it
has already seen (replay), or (c) neither (deception).
"""

from __future__ import annotations

import hashlib
import logging
from collections import Counter, deque
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .cipherset.frame import DecodedFrame

log = logging.getLogger(__name__)

SEQ_MOD = 1 << 16


class AttackKind(str, Enum):
    NONE = "none"
    DOS = "dos"
    REPLAY = "replay"
    DECEPTION = "deception"


class Verdict(str, Enum):
    CLEAN = "clean"
    DOS = "dos_suspected"
    REPLAY = "replay_suspected"
    DECEPTION = "deception_suspected"


# worst-first, for summarizing several verdicts in one period
SEVERITY = {Verdict.CLEAN: 0, Verdict.DOS: 1, Verdict.REPLAY: 2, Verdict.DECEPTION: 3}


@dataclass(frozen=True)
class AttackScenario:
    kind: AttackKind = AttackKind.NONE
    start: int = 0
    end: int | None = None  # exclusive; None runs to the horizon
    drop_p: float = 1.0
    replay_offset: int = 1
    flip_bits: int = 1
    flip_mask: int | None = None
    path: str = "u"  # "u" (Alice -> Bob), "y" (Bob -> Alice) or "both"

    def __post_init__(self):
        object.__setattr__(self, "kind", AttackKind(self.kind))
        if self.replay_offset < 1:
            raise ValueError("replay offset must be >= 1")
        if not 0.0 <= self.drop_p <= 1.0:
            raise ValueError("drop probability must lie in [0, 1]")
        if self.path not in ("u", "y", "both"):
            raise ValueError(f"attack path must be u, y or both, not {self.path!r}")
        if self.end is not None and self.end < self.start:
            raise ValueError("attack window ends before it starts")

    def active(self, period: int) -> bool:
        if self.kind is AttackKind.NONE or period < self.start:
            return False
        return self.end is None or period < self.end

    def targets(self, path: str) -> bool:
        return self.path == "both" or self.path == path


def random_flip_mask(count: int, width: int, rng: np.random.Generator) -> int:
    mask = 0
    for pos in rng.choice(width, size=min(count, width), replace=False):
        mask |= 1 << int(pos)
    return mask


def apply_attack(
    scenario: AttackScenario,
    period: int,
    ciphertext: int,
    history: Sequence[int],
    rng: np.random.Generator,
    width: int = 64,
) -> int | None:
    """What Eve forwards for this period's ciphertext (``None``: dropped).

    ``history[k]`` is the ciphertext originally sent in period ``k``.
    """
    if not scenario.active(period):
        return ciphertext
    kind = scenario.kind
    if kind is AttackKind.DOS:
        if scenario.drop_p >= 1.0 or rng.random() < scenario.drop_p:
            return None
        return ciphertext
    if kind is AttackKind.REPLAY:
        src = period - scenario.replay_offset
        if src < 0 or src >= len(history):
            log.info("period %d: nothing recorded %d periods back, passing through",
                     period, scenario.replay_offset)
            return ciphertext
        return history[src]
    if kind is AttackKind.DECEPTION:
        mask = scenario.flip_mask
        if mask is None:
            mask = random_flip_mask(scenario.flip_bits, width, rng)
        return ciphertext ^ mask
    return ciphertext


def digest(ciphertext: int) -> bytes:
    raw = ciphertext.to_bytes(max(1, (ciphertext.bit_length() + 7) // 8), "big")
    return hashlib.blake2b(raw, digest_size=8).digest()


class DigestHistory:
    """Bounded memory of ciphertext digests seen on one channel."""

    def __init__(self, depth: int = 1024):
        self.depth = depth
        self._ring: deque[bytes] = deque()
        self._counts: Counter[bytes] = Counter()

    def __contains__(self, d: bytes) -> bool:
        return self._counts[d] > 0

    def add(self, d: bytes) -> None:
        self._ring.append(d)
        self._counts[d] += 1
        if len(self._ring) > self.depth:
            old = self._ring.popleft()
            self._counts[old] -= 1
            if not self._counts[old]:
                del self._counts[old]

    def __len__(self) -> int:
        return len(self._ring)


def detect(
    frame: DecodedFrame | None,
    expected_seq: int,
    ciphertext: int | None,
    history: DigestHistory,
) -> Verdict:
    """Classify one reception decrypted with the slot's expected key."""
    if frame is None or ciphertext is None:
        return Verdict.DOS
    if frame.in_E:
        return Verdict.CLEAN if frame.seq == expected_seq % SEQ_MOD else Verdict.DOS
    if digest(ciphertext) in history:
        return Verdict.REPLAY
    return Verdict.DECEPTION


@dataclass(frozen=True)
class Reception:
    frame: DecodedFrame
    slot: int
    verdict: Verdict
    gap: int = 0


class Receiver:
    """Per-channel decrypt-and-detect state machine.

    ``open_frame(ciphertext, slot)`` decrypts with the key reserved for
    ``slot`` and decodes the frame.  After a loss the receiver looks ahead up
    to ``lookahead`` slots and resynchronizes on the first key that opens the
    frame with a matching sequence number.
    """

    def __init__(
        self,
        open_frame: Callable[[int, int], DecodedFrame],
        lookahead: int = 8,
        history_depth: int = 1024,
        run_length: int = 1,
        timeout: int | None = None,
    ):
        self.open_frame = open_frame
        self.lookahead = lookahead
        self.history = DigestHistory(history_depth)
        self.run_length = max(1, run_length)
        self.timeout = timeout
        self.ptr = 0
        self._invalid_run = 0
        self._silent = 0
        self._silence_flagged = False

    def receive(self, ciphertext: int, max_slot: int | None = None) -> Reception:
        slot = self.ptr
        frame = self.open_frame(ciphertext, slot)
        verdict = detect(frame, slot, ciphertext, self.history)
        gap = 0
        if verdict is Verdict.CLEAN:
            self.ptr += 1
        else:
            limit = self.lookahead if max_slot is None else min(self.lookahead, max_slot - slot - 1)
            for g in range(1, limit + 1):
                later = self.open_frame(ciphertext, slot + g)
                if later.in_E and later.seq == (slot + g) % SEQ_MOD:
                    frame, gap, verdict = later, g, Verdict.DOS
                    break
            self.ptr = slot + gap + 1
        self.history.add(digest(ciphertext))
        self._silent = 0
        self._silence_flagged = False

        if frame.in_E:
            self._invalid_run = 0
        else:
            self._invalid_run += 1
            if self._invalid_run < self.run_length:
                # under raw keys a lone bad frame is expected noise
                verdict = Verdict.CLEAN
        return Reception(frame, slot + gap, verdict, gap)

    def idle(self) -> Verdict:
        """Call once per period without arrivals; flags prolonged silence."""
        self._silent += 1
        if self.timeout is not None and self._silent > self.timeout and not self._silence_flagged:
            self._silence_flagged = True
            return Verdict.DOS
        return Verdict.CLEAN
