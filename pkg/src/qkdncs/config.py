"""Scenario files: flat dotted keys in TOML syntax.

A run file looks like::

    cipher = "aes256"
    horizon = 300
    attack.kind = "replay"
    attack.start = 100

A sweep file holds base keys at the top and one ``[scenario.<name>]`` table
per scenario whose keys override the base.
"""

from __future__ import annotations

import math
import re
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import metrics
from .adversary import AttackScenario
from .cipherset import parse_cipher
from .controlplant import PIController, PlantModel
from .errors import ConfigError
from .loopsim import (
    DelayConfig,
    DetectConfig,
    KeyConfig,
    LoopConfig,
    RawKeyConfig,
    Reference,
)

_LOC_RE = re.compile(r"\(at line (\d+), column (\d+)\)")

# dotted key -> expected python type(s)
KEYS: dict[str, tuple[type, ...]] = {
    "cipher": (str,),
    "key_grade": (str,),
    "horizon": (int,),
    "rng_seed": (int,),
    "epsilon": (int, float),
    "qber": (int, float),
    "generation_rate_bps": (int, float),
    "check_fraction": (int, float),
    "pa_security_s": (int,),
    "keys.ratio_m_over_n": (int, float),
    "keys.policy": (str,),
    "keys.prefill_s": (int, float),
    "keys.batch_bits": (int,),
    "reference.amplitude": (int, float),
    "reference.step_time": (int, float),
    "delay.T0": (int, float),
    "delay.C": (int, float, str),
    "delay.noise": (bool,),
    "delay.split": (int, float),
    "delay.dtau_mean": (int, float),
    "delay.dtau_std": (int, float),
    "attack.kind": (str,),
    "attack.start": (int,),
    "attack.end": (int,),
    "attack.drop_p": (int, float),
    "attack.replay_offset": (int,),
    "attack.flip_bits": (int,),
    "attack.path": (str,),
    "rawkey.delta": (int, float),
    "rawkey.h": (int,),
    "rawkey.raw_bits": (int,),
    "rawkey.y_raw_bits": (int,),
    "rawkey.warmup": (int,),
    "rawkey.run_length": (int,),
    "kalman.enabled": (bool,),
    "kalman.Q": (list, int, float),
    "kalman.R": (list, int, float),
    "plant.A": (list,),
    "plant.B": (list,),
    "plant.C": (list,),
    "plant.Ts": (int, float),
    "controller.kp": (int, float),
    "controller.ki": (int, float),
    "controller.clamp": (list,),
    "detect.lookahead": (int,),
    "detect.history_depth": (int,),
    "detect.timeout": (int,),
    "detect.tail_periods": (int,),
}


def _flatten(tree: dict, prefix: str = "") -> dict[str, Any]:
    out = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _locate(text: str, key: str) -> tuple[int, int]:
    """Best-effort line/column of a dotted key in the source text."""
    last = key.split(".")[-1]
    pat = re.compile(rf"^\s*([\w.\"]*\b{re.escape(last)}\b)\s*=")
    for n, line in enumerate(text.splitlines(), 1):
        m = pat.match(line)
        if m and m.group(1).replace('"', "").endswith(key.split(".", 1)[-1]):
            return n, m.start(1) + 1
    return 0, 0


def parse_text(text: str, source: str = "<config>") -> dict[str, Any]:
    try:
        tree = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = _LOC_RE.search(str(exc))
        line, col = (int(m.group(1)), int(m.group(2))) if m else (0, 0)
        raise ConfigError(_LOC_RE.sub("", str(exc)).strip(), line, col, source) from None
    return tree


def check_keys(flat: dict[str, Any], text: str, source: str) -> None:
    for key, value in flat.items():
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}", *_locate(text, key), source)
        types = KEYS[key]
        ok = isinstance(value, types) and not (isinstance(value, bool) and bool not in types)
        if not ok:
            names = "/".join(t.__name__ for t in types)
            raise ConfigError(f"{key} expects {names}, got {value!r}", *_locate(text, key), source)


def _matrix(values, rows: int | None, cols: int | None) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 2:
        return arr
    n = arr.size
    if rows is None and cols is None:
        side = math.isqrt(n)
        if side * side != n:
            raise ValueError(f"{n} entries do not form a square matrix")
        rows = side
    if rows is None:
        rows = n // cols
    return arr.reshape(rows, -1)


def build_config(flat: dict[str, Any], seed_override: int | None = None) -> LoopConfig:
    """Turn validated dotted keys into a :class:`LoopConfig`."""
    g = flat.get
    base = LoopConfig()

    keys = KeyConfig(
        generation_rate_bps=float(g("generation_rate_bps", base.keys.generation_rate_bps)),
        qber=float(g("qber", base.keys.qber)),
        check_fraction=float(g("check_fraction", base.keys.check_fraction)),
        pa_security_s=int(g("pa_security_s", base.keys.pa_security_s)),
        ratio_m_over_n=float(g("keys.ratio_m_over_n", base.keys.ratio_m_over_n)),
        policy=g("keys.policy", base.keys.policy),
        prefill_s=float(g("keys.prefill_s", base.keys.prefill_s)),
        batch_bits=int(g("keys.batch_bits", base.keys.batch_bits)),
    )

    dm = base.delay.model
    bandwidth = g("delay.C", dm.bandwidth_C)
    if isinstance(bandwidth, str):
        if bandwidth.lower() not in ("inf", "infinity"):
            raise ValueError(f"delay.C must be a number or \"inf\", not {bandwidth!r}")
        bandwidth = math.inf
    delay = DelayConfig(
        model=metrics.DelayParams(
            T0=float(g("delay.T0", dm.T0)),
            bandwidth_C=float(bandwidth),
            qber_e=keys.qber,
            ratio_m_over_n=keys.ratio_m_over_n,
            delta_tau_dist=(
                float(g("delay.dtau_mean", dm.delta_tau_dist[0])),
                float(g("delay.dtau_std", dm.delta_tau_dist[1])),
            ),
        ),
        noise=g("delay.noise", base.delay.noise),
        split=float(g("delay.split", base.delay.split)),
    )

    attack = AttackScenario(
        kind=g("attack.kind", "none"),
        start=g("attack.start", 0),
        end=g("attack.end"),
        drop_p=float(g("attack.drop_p", 1.0)),
        replay_offset=g("attack.replay_offset", 1),
        flip_bits=g("attack.flip_bits", 1),
        path=g("attack.path", "u"),
    )

    rb = base.rawkey
    rawkey = RawKeyConfig(
        threshold_delta=float(g("rawkey.delta", rb.threshold_delta)),
        high_digit_split_h=g("rawkey.h", rb.high_digit_split_h),
        raw_bits=g("rawkey.raw_bits", rb.raw_bits),
        y_raw_bits=g("rawkey.y_raw_bits", rb.y_raw_bits),
        warmup_final_periods=g("rawkey.warmup", rb.warmup_final_periods),
        run_length=g("rawkey.run_length", rb.run_length),
    )

    plant = base.plant
    if any(k.startswith("plant.") for k in flat):
        A = _matrix(g("plant.A", plant.A), None, None)
        n = A.shape[0]
        plant = PlantModel(
            A,
            _matrix(g("plant.B", plant.B), n, None),
            _matrix(g("plant.C", plant.C), None, n),
            float(g("plant.Ts", plant.Ts)),
        )

    ctrl = base.controller
    clamp = g("controller.clamp", list(ctrl.clamp))
    if len(clamp) != 2 or clamp[0] >= clamp[1]:
        raise ValueError("controller.clamp must be [low, high] with low < high")
    controller = PIController(
        kp=float(g("controller.kp", ctrl.kp)),
        ki=float(g("controller.ki", ctrl.ki)),
        Ts=plant.Ts,
        clamp=(float(clamp[0]), float(clamp[1])),
    )

    dc = base.detect
    detect = DetectConfig(
        lookahead=g("detect.lookahead", dc.lookahead),
        history_depth=g("detect.history_depth", dc.history_depth),
        timeout=g("detect.timeout", dc.timeout),
        tail_periods=g("detect.tail_periods", dc.tail_periods),
    )

    cfg = LoopConfig(
        cipher=parse_cipher(g("cipher", base.cipher.name)),
        key_grade=g("key_grade", base.key_grade),
        horizon_periods=g("horizon", base.horizon_periods),
        reference=Reference(
            float(g("reference.amplitude", 1.0)), float(g("reference.step_time", 0.0))
        ),
        delay=delay,
        attack=attack,
        rawkey=rawkey,
        kalman_enabled=g("kalman.enabled", base.kalman_enabled),
        kalman_Q=None if "kalman.Q" not in flat else np.atleast_2d(np.asarray(flat["kalman.Q"], float)),
        kalman_R=None if "kalman.R" not in flat else np.atleast_2d(np.asarray(flat["kalman.R"], float)),
        plant=plant,
        controller=controller,
        keys=keys,
        detect=detect,
        epsilon=float(g("epsilon", base.epsilon)),
        rng_seed=g("rng_seed", base.rng_seed),
    )
    if seed_override is not None:
        cfg = replace(cfg, rng_seed=seed_override)
    return cfg


def load_flat(path: str | Path) -> dict[str, Any]:
    text = Path(path).read_text()
    flat = _flatten(parse_text(text, str(path)))
    check_keys(flat, text, str(path))
    return flat


def _wrap(exc: Exception, source: str) -> ConfigError:
    return ConfigError(str(exc), 0, 0, source)


def load_config(path: str | Path, seed_override: int | None = None) -> LoopConfig:
    flat = load_flat(path)
    try:
        return build_config(flat, seed_override)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise _wrap(exc, str(path)) from None


def load_sweep(path: str | Path, seed_override: int | None = None) -> dict[str, LoopConfig]:
    """Scenario name -> config, base keys overridden per ``[scenario.<name>]``."""
    text = Path(path).read_text()
    tree = parse_text(text, str(path))
    scenarios = tree.pop("scenario", None)
    if not isinstance(scenarios, dict) or not scenarios:
        raise ConfigError("sweep file has no [scenario.<name>] tables", 0, 0, str(path))
    base = _flatten(tree)
    check_keys(base, text, str(path))
    out = {}
    for name, body in scenarios.items():
        if not isinstance(body, dict):
            raise ConfigError(f"scenario {name!r} must be a table", *_locate(text, name), str(path))
        flat = dict(base)
        over = _flatten(body)
        check_keys(over, text, str(path))
        flat.update(over)
        try:
            out[name] = build_config(flat, seed_override)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"scenario {name!r}: {exc}", 0, 0, str(path)) from None
    return out
