"""Closed-loop simulation of the encrypted servo.

Each control period Bob samples the plant, frames and encrypts the
measurement, and sends it to Alice over a delayed and possibly attacked
channel.  Alice decrypts, runs detection, optionally smooths and filters the
measurement, computes the PI command and sends it back the same way.  Bob
applies the newest valid command (zero-order hold otherwise) and the plant
steps.  Performance is the accumulated squared tracking error.

Delays are quantized to period boundaries and each direction is FIFO, so a
message never overtakes an earlier one on the same channel.
"""

from __future__ import annotations

import csv
import heapq
import io
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics
from .adversary import (
    SEVERITY,
    AttackKind,
    AttackScenario,
    Receiver,
    Verdict,
    apply_attack,
    digest,
)
from .cipherset import PLAIN, XOR, CipherSpec, decrypt_frame, encrypt_frame
from .cipherset.frame import (
    FRAME_BITS,
    INVALID,
    PAYLOAD_SHIFT,
    QUANTUM,
    VALUE_LIMIT,
    decode_frame,
    dequantize,
    encode_frame,
    quantize,
)
from .controlplant import (
    KalmanState,
    PIController,
    PlantModel,
    kalman_predict,
    kalman_update,
    pi_control,
    plant_step,
)
from .errors import ConfigError, KeyUnderrunError
from .keysource import KeyPool

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNDERRUN = 2
EXIT_ATTACK = 3


@dataclass(frozen=True)
class Reference:
    amplitude: float = 1.0
    step_time: float = 0.0

    def at(self, t: float) -> float:
        return self.amplitude if t >= self.step_time - 1e-12 else 0.0


@dataclass(frozen=True)
class DelayConfig:
    model: metrics.DelayParams = field(default_factory=metrics.DelayParams)
    noise: bool = True
    # share of the round trip spent on the Bob -> Alice leg
    split: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.split <= 1.0:
            raise ValueError("delay split must lie in [0, 1]")


@dataclass(frozen=True)
class KeyConfig:
    generation_rate_bps: float = 500_000.0
    qber: float = 0.1
    check_fraction: float = 0.1
    pa_security_s: int = 20
    ratio_m_over_n: float = 0.2
    policy: str = "strict"
    prefill_s: float = 0.5
    batch_bits: int = 16384


@dataclass(frozen=True)
class RawKeyConfig:
    threshold_delta: float = 0.1
    high_digit_split_h: int = 14
    # payload digits keyed with raw material; the rest of the frame uses final keys
    raw_bits: int = 12
    # the measurement path is smoothed at Alice, so it may carry more raw digits
    y_raw_bits: int = 32
    warmup_final_periods: int = 10
    run_length: int = 3

    def __post_init__(self):
        if self.threshold_delta <= 0:
            raise ValueError("raw-key threshold delta must be positive")
        if not 0 <= self.high_digit_split_h <= 32:
            raise ValueError("high-digit split must lie within the 32-bit payload")
        if not 0 <= self.raw_bits <= 32:
            raise ValueError("raw region must lie within the 32-bit payload")


@dataclass(frozen=True)
class DetectConfig:
    # slots to search after a loss (also bounded by how many were sent)
    lookahead: int = 1024
    history_depth: int = 1024
    # periods of silence before a missing-traffic alarm (None: off)
    timeout: int | None = None
    tail_periods: int = 10


@dataclass(frozen=True)
class LoopConfig:
    cipher: CipherSpec = XOR
    key_grade: str = "final"
    horizon_periods: int = 300
    reference: Reference = field(default_factory=Reference)
    delay: DelayConfig = field(default_factory=DelayConfig)
    attack: AttackScenario = field(default_factory=AttackScenario)
    rawkey: RawKeyConfig = field(default_factory=RawKeyConfig)
    kalman_enabled: bool = False
    # explicit noise covariances; None uses the analytic raw-key variances
    kalman_Q: np.ndarray | None = None
    kalman_R: np.ndarray | None = None
    plant: PlantModel = field(default_factory=PlantModel.servo)
    controller: PIController = field(default_factory=PIController)
    keys: KeyConfig = field(default_factory=KeyConfig)
    detect: DetectConfig = field(default_factory=DetectConfig)
    epsilon: float = 0.1
    rng_seed: int = 0

    def __post_init__(self):
        if self.horizon_periods < 0:
            raise ValueError("horizon must be >= 0")
        if self.key_grade not in ("raw", "final"):
            raise ValueError(f"key grade must be raw or final, not {self.key_grade!r}")
        if self.key_grade == "raw" and self.cipher.family != "xor":
            raise ConfigError("raw keys are only meaningful with the xor cipher")
        if self.plant.B.shape[1] != 1 or self.plant.C.shape[0] != 1:
            raise ValueError("the loop is single-input single-output")

    @property
    def Ts(self) -> float:
        return self.plant.Ts


# -- building blocks -------------------------------------------------------------


def apply_delay(send_period: int, tau: float, Ts: float) -> int:
    """Period at which a message sent at ``send_period`` with delay ``tau`` lands."""
    if tau < 0:
        raise ValueError("delay must be >= 0")
    return send_period + max(0, math.ceil(tau / Ts - 1e-9))


def smooth_high_digits(y_new: float, y_prev_good: float, delta: float, h: int) -> float:
    """Replace the digits at and above bit ``h`` by the previous good sample's.

    Only applied when the jump exceeds ``delta``; bit positions count from the
    least significant fixed-point digit.  When the signal has legitimately
    crossed a multiple of 2^h, copying the digits verbatim would lock onto the
    wrong side, so the high part may move by one unit, whichever lands nearest
    the previous sample.
    """
    if abs(y_new - y_prev_good) <= delta:
        return y_new
    unit = 1 << h
    prev = quantize(y_prev_good)
    prev = prev - (1 << 32) if prev & 0x80000000 else prev
    base = (prev & ~(unit - 1)) | (quantize(y_new) & (unit - 1))
    best = min((base - unit, base, base + unit), key=lambda c: abs(c - prev))
    return best * QUANTUM


def low_digit_variance(qber: float, bits: int) -> float:
    """Variance of independent flips with probability ``qber`` on digits below ``bits``."""
    return qber * QUANTUM**2 * (4.0**bits - 1.0) / 3.0


@dataclass(frozen=True)
class TraceRow:
    t: float
    r: float
    y_true: float
    y_received: float
    u_sent: float
    u_applied: float
    frame_valid: bool
    verdict: str
    tau_roundtrip: float


TRACE_COLUMNS = tuple(TraceRow.__dataclass_fields__)


@dataclass(frozen=True)
class DetectionRecord:
    period: int
    path: str
    frame_valid: bool
    seq_observed: int | None
    ciphertext_digest: str
    verdict: str


def performance_score(trace, Ts: float | None = None) -> float:
    """Accumulated squared tracking error, sum of (r - y_true)^2 * Ts."""
    if len(trace) == 0:
        raise ValueError("performance of an empty trace is undefined")
    if Ts is None:
        Ts = trace[1].t - trace[0].t if len(trace) > 1 else 0.0
    return float(sum((row.r - row.y_true) ** 2 for row in trace) * Ts)


@dataclass
class RunReport:
    trace: list[TraceRow]
    P_score: float
    S_score: float
    keys_consumed: int
    keys_reused_r: float
    cipher: str = ""
    key_grade: str = "final"
    mean_tau: float = 0.0
    model_tau: float = 0.0
    detections: list[DetectionRecord] = field(default_factory=list)
    exit_code: int = EXIT_OK
    diagnostic: str = ""
    key_bits_generated: int = 0

    @property
    def verdict_counts(self) -> dict[str, int]:
        counts = {v.value: 0 for v in Verdict}
        for rec in self.detections:
            counts[rec.verdict] += 1
        return counts

    def summary(self) -> dict[str, object]:
        out = {
            "cipher": self.cipher,
            "key_grade": self.key_grade,
            "periods": len(self.trace),
            "P": self.P_score,
            "S": self.S_score,
            "mean_tau": self.mean_tau,
            "model_tau": self.model_tau,
            "keys_consumed": self.keys_consumed,
            "keys_reused_r": self.keys_reused_r,
            "key_bits_generated": self.key_bits_generated,
            "exit_code": self.exit_code,
        }
        out.update(self.verdict_counts)
        out["diagnostic"] = self.diagnostic
        return out


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return f"{value:.6g}"
    if value is None:
        return ""
    return str(value)


def rows_to_csv(header, rows, delimiter: str = ",") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def trace_csv(report: RunReport, delimiter: str = ",") -> str:
    rows = ([getattr(r, c) for c in TRACE_COLUMNS] for r in report.trace)
    return rows_to_csv(TRACE_COLUMNS, rows, delimiter)


def report_csv(report: RunReport, delimiter: str = ",") -> str:
    s = report.summary()
    return rows_to_csv(list(s), [list(s.values())], delimiter)


def detection_csv(report: RunReport, delimiter: str = ",") -> str:
    cols = tuple(DetectionRecord.__dataclass_fields__)
    rows = ([getattr(r, c) for c in cols] for r in report.detections)
    return rows_to_csv(cols, rows, delimiter)


# -- keying ------------------------------------------------------------------------


def _bits_to_int_lsb(bits: np.ndarray) -> int:
    """Bit array indexed by position (LSB first) to integer."""
    return int.from_bytes(np.packbits(bits[::-1]).tobytes(), "big")


_FRAME_POSITIONS = np.arange(FRAME_BITS)


@dataclass
class _SlotKeys:
    alice: int
    bob: int
    tolerant_bits: int


class _Keyring:
    """Allocates per-slot frame keys from the pools and remembers them.

    Final grade draws whole OTP keys.  Raw grade keys the raw region of the
    frame (the low payload digits) from the raw pool and everything else
    from the final pool, so framing and checksum stay intact.
    """

    def __init__(self, cfg: LoopConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.spec = cfg.cipher
        self.slots: dict[tuple[str, int], _SlotKeys] = {}
        self.pools: list[KeyPool] = []
        kc = cfg.keys
        if self.spec.family == "none":
            self.final = self.raw = None
            return
        seeds = rng.spawn(2)
        self.final = KeyPool(
            key_len=self.spec.key_len_N,
            generation_rate=kc.generation_rate_bps,
            grade="final",
            qber=kc.qber,
            check_fraction=kc.check_fraction,
            ratio_m_over_n=kc.ratio_m_over_n,
            pa_security_s=kc.pa_security_s,
            policy=kc.policy,
            batch_bits=kc.batch_bits,
            rng=seeds[0],
        )
        self.pools.append(self.final)
        self.raw = None
        if cfg.key_grade == "raw":
            self.raw = replace(self.final, grade="raw", rng=seeds[1], keys=[], stats=type(self.final.stats)())
            self.pools.append(self.raw)
        for pool in self.pools:
            pool.credit(kc.prefill_s)

    def credit(self, elapsed: float) -> None:
        for pool in self.pools:
            pool.credit(elapsed)

    def raw_bits(self, path: str, seq: int) -> int:
        if self.raw is None or seq < self.cfg.rawkey.warmup_final_periods:
            return 0
        return self.cfg.rawkey.y_raw_bits if path == "y" else self.cfg.rawkey.raw_bits

    def allocate(self, path: str, seq: int, clock: float) -> _SlotKeys:
        spec = self.spec
        if spec.family == "none":
            keys = _SlotKeys(0, 0, 0)
        elif spec.family != "xor":
            (k,) = self.final.take(1, clock)
            keys = _SlotKeys(_bits_to_int_msb(k.alice), _bits_to_int_msb(k.bob), 0)
        else:
            n_raw = self.raw_bits(path, seq)
            raw_pos = _FRAME_POSITIONS[PAYLOAD_SHIFT : PAYLOAD_SHIFT + n_raw]
            fin_pos = np.setdiff1d(_FRAME_POSITIONS, raw_pos, assume_unique=True)
            a = np.zeros(FRAME_BITS, dtype=np.uint8)
            b = np.zeros(FRAME_BITS, dtype=np.uint8)
            for pool, pos in ((self.final, fin_pos), (self.raw, raw_pos)):
                if len(pos) == 0:
                    continue
                picked = pool.take(-(-len(pos) // pool.key_len), clock)
                a[pos] = np.concatenate([k.alice for k in picked])[: len(pos)]
                b[pos] = np.concatenate([k.bob for k in picked])[: len(pos)]
            keys = _SlotKeys(_bits_to_int_lsb(a), _bits_to_int_lsb(b), n_raw)
        self.slots[(path, seq)] = keys
        return keys

    def key_bits(self) -> int:
        return sum(p.stats.output_bits for p in self.pools)

    def consumed(self) -> int:
        return sum(p.stats.keys_consumed for p in self.pools)

    def reuse_factor(self) -> float:
        return max((p.reuse_factor() for p in self.pools), default=1.0)


def _bits_to_int_msb(bits: np.ndarray) -> int:
    return int.from_bytes(np.packbits(bits).tobytes(), "big") >> (-len(bits) % 8)


# -- the loop ----------------------------------------------------------------------


@dataclass
class _Channel:
    """One direction: sender history, in-flight queue and receiver."""

    path: str
    receiver: Receiver
    history: list[int] = field(default_factory=list)
    inflight: list[tuple[int, int, int]] = field(default_factory=list)
    last_delivery: int = 0
    sent: int = 0

    def tap(self, attack: AttackScenario, period: int, ct: int, rng: np.random.Generator) -> int | None:
        """Eve's pass over the wire; she records what actually went through."""
        out = apply_attack(attack, period, ct, self.history, rng)
        self.history.append(ct if out is None else out)
        return out

    def send(self, ct: int | None, deliver_at: int) -> None:
        # FIFO: never overtake an earlier message on this channel
        deliver_at = max(deliver_at, self.last_delivery)
        self.last_delivery = deliver_at
        if ct is not None:
            heapq.heappush(self.inflight, (deliver_at, self.sent, ct))
        self.sent += 1

    def arrivals(self, period: int) -> list[int]:
        out = []
        while self.inflight and self.inflight[0][0] <= period:
            out.append(heapq.heappop(self.inflight)[2])
        return out


def _clip(value: float) -> float:
    lim = VALUE_LIMIT - QUANTUM
    return min(lim, max(-lim, value))


def run(cfg: LoopConfig) -> RunReport:
    """Simulate ``cfg.horizon_periods`` control periods."""
    spec = cfg.cipher
    Ts = cfg.Ts
    model = cfg.plant
    seeds = np.random.default_rng(cfg.rng_seed).spawn(3)
    delay_rng, attack_rng, key_rng = seeds
    keyring = _Keyring(cfg, key_rng)
    raw_mode = cfg.key_grade == "raw"

    delay_params = replace(
        cfg.delay.model,
        qber_e=cfg.keys.qber,
        ratio_m_over_n=cfg.keys.ratio_m_over_n,
        include_ec=not raw_mode,
    )
    model_tau = metrics.deterministic_delay(delay_params, spec.key_len_N)
    split = cfg.delay.split
    # nominal command latency, for the filter's input model
    mean_tau = model_tau + (cfg.delay.model.delta_tau_dist[0] if cfg.delay.noise else 0.0)
    nominal_u_lag = apply_delay(0, mean_tau * (1 - split), Ts)

    def opener(path: str, own: str):
        def open_frame(ct: int, slot: int):
            keys = keyring.slots.get((path, slot))
            if keys is None:
                return INVALID
            key = keys.alice if own == "alice" else keys.bob
            plain = decrypt_frame(spec, ct, key, FRAME_BITS)
            return decode_frame(plain, keys.tolerant_bits)

        return open_frame

    dc = cfg.detect
    run_length = cfg.rawkey.run_length if raw_mode else 1
    y_chan = _Channel("y", Receiver(opener("y", "alice"), dc.lookahead, dc.history_depth, run_length, dc.timeout))
    u_chan = _Channel("u", Receiver(opener("u", "bob"), dc.lookahead, dc.history_depth, run_length, dc.timeout))

    x = np.zeros(model.n_states)
    ctrl = cfg.controller.reset()
    u_applied = 0.0
    y_alice = 0.0  # Alice's latest accepted measurement
    u_history: list[float] = []  # commands Alice sent, by period

    kalman = None
    kalman_seq = -1
    if cfg.kalman_enabled:
        # raw-key flips act as measurement noise on y and process noise on u;
        # smoothing leaves y errors only below the split digit
        rk = cfg.rawkey
        var_y = low_digit_variance(cfg.keys.qber, min(rk.y_raw_bits, rk.high_digit_split_h)) if raw_mode else 0.0
        var_u = low_digit_variance(cfg.keys.qber, rk.raw_bits) if raw_mode else 0.0
        floor = QUANTUM**2 / 12.0
        Q = model.B @ model.B.T * (var_u + floor) + np.eye(model.n_states) * 1e-12
        R = [[var_y + floor]]
        if cfg.kalman_Q is not None:
            Q = cfg.kalman_Q
        if cfg.kalman_R is not None:
            R = cfg.kalman_R
        kalman = KalmanState.initial(model, Q, R, P0=np.eye(model.n_states) * 1e-9)
        kalman_seq = 0

    def commanded(period: int) -> float:
        j = period - nominal_u_lag
        return u_history[j] if 0 <= j < len(u_history) else 0.0

    trace: list[TraceRow] = []
    detections: list[DetectionRecord] = []
    taus: list[float] = []
    exit_code, diagnostic = EXIT_OK, ""
    attack = cfg.attack
    tail_start = cfg.horizon_periods - dc.tail_periods
    tail_alarm = False

    def note(period: int, path: str, ct: int, rec) -> Verdict:
        detections.append(
            DetectionRecord(period, path, rec.frame.in_E, rec.frame.seq, digest(ct).hex(), rec.verdict.value)
        )
        return rec.verdict

    for i in range(cfg.horizon_periods):
        t = i * Ts
        r = cfg.reference.at(t)
        y_true = float((model.C @ x)[0])
        keyring.credit(Ts)
        tau = metrics.round_trip_delay(delay_params, spec.key_len_N, cfg.delay.noise, delay_rng)
        taus.append(tau)
        worst = Verdict.CLEAN
        valid = True

        try:
            # Bob -> Alice
            seq = i % (1 << 16)
            keys = keyring.allocate("y", i, t)
            ct = encrypt_frame(spec, encode_frame(_clip(y_true), seq, keys.tolerant_bits), keys.bob, FRAME_BITS)
            if attack.targets("y"):
                ct = y_chan.tap(attack, i, ct, attack_rng)
            y_chan.send(ct, apply_delay(i, tau * split, Ts))

            y_recv = math.nan
            arrived = y_chan.arrivals(i)
            for ct_in in arrived:
                rec = y_chan.receiver.receive(ct_in, y_chan.sent)
                worst = max(worst, note(i, "y", ct_in, rec), key=SEVERITY.get)
                valid &= rec.frame.in_E
                if not rec.frame.in_E:
                    continue
                y_new = rec.frame.value
                if raw_mode and rec.slot >= cfg.rawkey.warmup_final_periods:
                    y_new = smooth_high_digits(
                        y_new, y_alice, cfg.rawkey.threshold_delta, cfg.rawkey.high_digit_split_h
                    )
                y_alice = y_recv = y_new
                if kalman is not None and rec.slot > kalman_seq:
                    while kalman_seq < rec.slot:
                        kalman = kalman_predict(kalman, model, [commanded(kalman_seq)])
                        kalman_seq += 1
                    kalman = kalman_update(kalman, model, [y_new])
            if not arrived:
                worst = max(worst, y_chan.receiver.idle(), key=SEVERITY.get)

            # Alice computes and sends the command
            y_ctrl = y_alice
            if kalman is not None:
                y_ctrl = float((model.C @ kalman.x_hat)[0])
            u_cmd, ctrl = pi_control(ctrl, r, y_ctrl)
            u_history.append(u_cmd)
            keys = keyring.allocate("u", i, t)
            ct = encrypt_frame(spec, encode_frame(u_cmd, seq, keys.tolerant_bits), keys.alice, FRAME_BITS)
            if attack.targets("u"):
                ct = u_chan.tap(attack, i, ct, attack_rng)
            u_chan.send(ct, apply_delay(i, tau * (1 - split), Ts))
        except KeyUnderrunError as exc:
            exit_code, diagnostic = EXIT_UNDERRUN, str(exc)
            log.error("run aborted: %s", exc)
            break

        # Bob actuates the newest valid command
        arrived = u_chan.arrivals(i)
        for ct_in in arrived:
            rec = u_chan.receiver.receive(ct_in, u_chan.sent)
            worst = max(worst, note(i, "u", ct_in, rec), key=SEVERITY.get)
            valid &= rec.frame.in_E
            if rec.frame.in_E:
                u_applied = rec.frame.value
        if not arrived:
            worst = max(worst, u_chan.receiver.idle(), key=SEVERITY.get)
        if worst is not Verdict.CLEAN and i >= tail_start:
            tail_alarm = True

        trace.append(TraceRow(t, r, y_true, y_recv, u_cmd, u_applied, valid, worst.value, tau))
        x, _ = plant_step(model, x, u_applied)

    P = performance_score(trace, Ts) if trace else 0.0
    reuse = keyring.reuse_factor()
    S = metrics.security_overall(spec.security_params(cfg.epsilon, reuse)) if spec.family != "none" else 0.0
    if exit_code == EXIT_OK and tail_alarm and attack.kind is not AttackKind.NONE:
        exit_code, diagnostic = EXIT_ATTACK, "attack still detected at the end of the run"
    return RunReport(
        trace=trace,
        P_score=P,
        S_score=S,
        keys_consumed=keyring.consumed(),
        keys_reused_r=reuse,
        cipher=spec.name,
        key_grade=cfg.key_grade,
        mean_tau=float(np.mean(taus)) if taus else 0.0,
        model_tau=model_tau,
        detections=detections,
        exit_code=exit_code,
        diagnostic=diagnostic,
        key_bits_generated=keyring.key_bits(),
    )


def transparent_baseline(cfg: LoopConfig) -> RunReport:
    """The same loop with framing but no encryption or keys."""
    return run(replace(cfg, cipher=PLAIN, key_grade="final"))
