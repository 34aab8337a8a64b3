import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qkdncs import metrics
from qkdncs.adversary import AttackScenario
from qkdncs.cipherset import AES128, AES256, DES, XOR, decrypt_frame, encrypt_frame, feistel, parse_cipher
from qkdncs.cipherset.frame import QUANTUM, decode_frame, encode_frame, quantized
from qkdncs.errors import ConfigError
from qkdncs.loopsim import (
    EXIT_ATTACK,
    EXIT_OK,
    EXIT_UNDERRUN,
    DelayConfig,
    KeyConfig,
    LoopConfig,
    RawKeyConfig,
    TraceRow,
    _Keyring,
    apply_delay,
    low_digit_variance,
    performance_score,
    run,
    smooth_high_digits,
    trace_csv,
    report_csv,
    detection_csv,
    transparent_baseline,
)

ZERO_DELAY = DelayConfig(metrics.DelayParams(T0=0.0, bandwidth_C=math.inf), noise=False)


# -- delay quantization ---------------------------------------------------------


def test_zero_delay_same_period():
    assert apply_delay(7, 0.0, 0.01) == 7


def test_delay_rounds_up_to_period_boundary():
    assert apply_delay(0, 0.025, 0.01) == 3


def test_exact_multiple_not_pushed_over():
    assert apply_delay(0, 0.03, 0.01) == 3


def test_negative_delay_rejected():
    with pytest.raises(ValueError):
        apply_delay(0, -1e-3, 0.01)


def test_aes256_one_way_lag():
    cfg = LoopConfig(cipher=AES256, horizon_periods=40, delay=DelayConfig(noise=False))
    tau = metrics.round_trip_delay(metrics.DelayParams(delta_tau_dist=(0, 0)), 256)
    lag = math.ceil(tau / (2 * 0.01) - 1e-9)
    rep = run(cfg)
    received = [i for i, row in enumerate(rep.trace) if not math.isnan(row.y_received)]
    assert received[0] == lag
    assert rep.model_tau == pytest.approx(tau)


# -- high-digit smoothing ------------------------------------------------------------


def test_smoothing_restores_flipped_high_bit():
    prev = 100.0
    corrupted = prev + 2.0**7  # payload bit 23 flipped
    out = smooth_high_digits(corrupted, prev, 1.0, 23)
    assert out == 100.0


@given(st.floats(-1000, 1000), st.floats(-0.05, 0.05))
def test_small_steps_untouched(prev, step):
    y = quantized(prev + step)
    assert smooth_high_digits(y, quantized(prev), 0.1, 14) == y


@given(st.floats(-1000, 1000))
def test_identity_untouched(y):
    assert smooth_high_digits(y, y, 0.1, 14) == y


@given(st.floats(-100, 100), st.integers(0, 2**31 - 1), st.integers(4, 20))
def test_smoothed_value_stays_near_previous(prev, noise, h):
    prev = quantized(prev)
    noisy = quantized(prev) + ((noise % (1 << 32)) - (1 << 31)) * QUANTUM / 4
    noisy = max(-30000.0, min(30000.0, noisy))
    out = smooth_high_digits(quantized(noisy), prev, 0.1, h)
    assert abs(out - prev) <= 0.1 + 2.0**h * QUANTUM


# -- performance ---------------------------------------------------------------------


def rows(errors, Ts=0.01):
    return [TraceRow(i * Ts, 1.0, 1.0 - e, 0, 0, 0, True, "clean", 0) for i, e in enumerate(errors)]


def test_perfect_tracking_scores_zero():
    assert performance_score(rows([0.0] * 5), 0.01) == 0.0


def test_constant_error_score():
    assert performance_score(rows([1.0] * 10), 0.01) == pytest.approx(0.1)


def test_empty_trace_rejected():
    with pytest.raises(ValueError):
        performance_score([], 0.01)


def test_empty_run():
    rep = run(LoopConfig(horizon_periods=0))
    assert rep.trace == [] and rep.P_score == 0.0


def test_xor_beats_aes256_default_servo():
    p_xor = run(LoopConfig(cipher=XOR, rng_seed=3)).P_score
    p_aes = run(LoopConfig(cipher=AES256, rng_seed=3)).P_score
    assert p_xor < p_aes


def test_report_score_matches_trace():
    rep = run(LoopConfig(horizon_periods=120, rng_seed=4))
    assert rep.P_score == pytest.approx(sum((r.r - r.y_true) ** 2 for r in rep.trace) * 0.01)


# -- transparency and determinism ---------------------------------------------------------


@pytest.mark.parametrize("cipher", ["xor", "des", "feistel:3", "aes128", "aes192", "aes256"])
def test_zero_delay_loop_matches_plain_loop(cipher):
    cfg = LoopConfig(cipher=parse_cipher(cipher), delay=ZERO_DELAY, horizon_periods=150, rng_seed=1)
    enc, plain = run(cfg), transparent_baseline(cfg)
    assert enc.trace == plain.trace
    assert enc.P_score == plain.P_score


def test_error_free_keys_deliver_exact_values():
    rep = run(LoopConfig(cipher=DES, horizon_periods=150, rng_seed=2))
    seen = [row for row in rep.trace if not math.isnan(row.y_received)]
    assert seen
    for row in rep.trace:
        assert row.frame_valid and row.verdict == "clean"
    # zero delay: what arrives is this period's sample
    z = run(LoopConfig(cipher=DES, delay=ZERO_DELAY, horizon_periods=50))
    for row in z.trace:
        assert row.y_received == quantized(row.y_true)
        assert row.u_applied == quantized(row.u_sent)


def test_same_seed_same_report_and_csv():
    cfg = LoopConfig(cipher=feistel(4), horizon_periods=100, rng_seed=42, attack=AttackScenario("replay", start=50))
    a, b = run(cfg), run(cfg)
    assert a.trace == b.trace and a.P_score == b.P_score
    assert trace_csv(a) == trace_csv(b)
    assert report_csv(a) == report_csv(b)
    assert detection_csv(a) == detection_csv(b)


def test_different_seed_different_jitter():
    a = run(LoopConfig(horizon_periods=50, rng_seed=1))
    b = run(LoopConfig(horizon_periods=50, rng_seed=2))
    assert [r.tau_roundtrip for r in a.trace] != [r.tau_roundtrip for r in b.trace]


def test_csv_formatting():
    rep = run(LoopConfig(horizon_periods=3, delay=ZERO_DELAY))
    lines = trace_csv(rep).splitlines()
    assert lines[0] == "t,r,y_true,y_received,u_sent,u_applied,frame_valid,verdict,tau_roundtrip"
    assert lines[1].split(",")[6] == "1"
    assert "\t" in trace_csv(rep, "\t")


# -- key accounting -----------------------------------------------------------------------


def test_sufficient_rate_never_reuses():
    rep = run(LoopConfig(cipher=AES256, horizon_periods=200))
    assert rep.exit_code == EXIT_OK
    assert rep.keys_reused_r == 1.0
    assert rep.keys_consumed == 2 * 200


def test_starved_pool_aborts():
    keys = KeyConfig(generation_rate_bps=2000, prefill_s=0.0, batch_bits=0)
    rep = run(LoopConfig(cipher=AES256, keys=keys, horizon_periods=100))
    assert rep.exit_code == EXIT_UNDERRUN
    assert "underrun" in rep.diagnostic
    assert len(rep.trace) < 100


def test_reuse_policy_reports_r():
    keys = KeyConfig(generation_rate_bps=20000, prefill_s=0.2, batch_bits=0, policy="reuse")
    rep = run(LoopConfig(cipher=AES128, keys=keys, horizon_periods=100))
    assert rep.exit_code == EXIT_OK
    assert rep.keys_reused_r > 1.0
    assert rep.S_score < metrics.security_overall(AES128.security_params(0.1, 1.0))


def test_raw_grade_needs_xor():
    with pytest.raises(ConfigError):
        LoopConfig(cipher=DES, key_grade="raw")


# -- attacks in the loop --------------------------------------------------------------------


def test_no_attack_all_clean():
    rep = run(LoopConfig(cipher=AES128, horizon_periods=200, rng_seed=9))
    assert rep.verdict_counts["clean"] == len(rep.detections) > 0
    assert rep.exit_code == EXIT_OK


@pytest.mark.parametrize(
    "kind,verdict", [("replay", "replay_suspected"), ("deception", "deception_suspected")]
)
def test_window_attack_classified(kind, verdict):
    attack = AttackScenario(kind, start=100, end=120)
    rep = run(LoopConfig(horizon_periods=250, attack=attack, rng_seed=5))
    flagged = [d for d in rep.detections if d.verdict != "clean"]
    assert flagged and all(d.verdict == verdict for d in flagged)
    assert all(d.path == "u" for d in flagged)
    assert rep.exit_code == EXIT_OK


def test_dos_gap_detected_and_resynced():
    attack = AttackScenario("dos", start=100, end=120, path="y")
    rep = run(LoopConfig(horizon_periods=250, attack=attack, rng_seed=6))
    flagged = [d for d in rep.detections if d.verdict != "clean"]
    assert [d.verdict for d in flagged] == ["dos_suspected"]
    assert flagged[0].frame_valid and flagged[0].seq_observed == 120
    assert rep.trace[-1].verdict == "clean"


def test_persistent_attack_exit_code():
    rep = run(LoopConfig(horizon_periods=150, attack=AttackScenario("deception", start=100), rng_seed=7))
    assert rep.exit_code == EXIT_ATTACK


# -- raw keys ---------------------------------------------------------------------------


def raw_cfg(**kw):
    base = dict(
        cipher=XOR,
        key_grade="raw",
        horizon_periods=200,
        keys=KeyConfig(generation_rate_bps=1_000_000),
    )
    base.update(kw)
    return LoopConfig(**base)


def test_raw_mode_no_false_alarm_under_run_length_rule():
    rep = run(raw_cfg(rng_seed=3))
    assert rep.exit_code == EXIT_OK
    assert rep.verdict_counts["clean"] == len(rep.detections)


def test_raw_mode_smoothing_bounds_each_step():
    rk = RawKeyConfig()
    rep = run(raw_cfg(rng_seed=8))
    bound = rk.threshold_delta + 2.0**rk.high_digit_split_h * QUANTUM
    received = [row.y_received for row in rep.trace[rk.warmup_final_periods :] if not math.isnan(row.y_received)]
    steps = np.abs(np.diff(received))
    assert steps.max() <= bound + 1e-12


def test_raw_key_noise_matches_analytic_variance():
    bits, e = 12, 0.1
    cfg = raw_cfg(
        rawkey=RawKeyConfig(y_raw_bits=bits, warmup_final_periods=0),
        keys=KeyConfig(generation_rate_bps=1_000_000, qber=e, prefill_s=10.0),
    )
    ring = _Keyring(cfg, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    nu = []
    for seq in range(8000):
        keys = ring.allocate("y", seq, 0.0)
        value = quantized(rng.uniform(-50, 50))
        ct = encrypt_frame(XOR, encode_frame(value, seq % 65536, keys.tolerant_bits), keys.bob, 64)
        frame = decode_frame(decrypt_frame(XOR, ct, keys.alice, 64), keys.tolerant_bits)
        assert frame.in_E and frame.seq == seq % 65536
        nu.append(frame.value - value)
    nu = np.array(nu)
    n = len(nu)
    expected = low_digit_variance(e, bits)
    assert abs(nu.mean()) <= 4 * nu.std() / math.sqrt(n)
    sq = (nu - nu.mean()) ** 2
    assert abs(sq.mean() - expected) <= 4 * sq.std() / math.sqrt(n)
    # errors never reach the digits above the raw region
    assert np.abs(nu).max() < 2.0**bits * QUANTUM


def test_low_digit_variance_closed_form():
    direct = sum(0.1 * (2.0**k * QUANTUM) ** 2 for k in range(12))
    assert low_digit_variance(0.1, 12) == pytest.approx(direct)


def test_kalman_reduces_raw_key_error():
    wins = 0
    for seed in range(5):
        cfg = raw_cfg(rng_seed=seed)
        if run(replace(cfg, kalman_enabled=True)).P_score < run(cfg).P_score:
            wins += 1
    assert wins >= 4
