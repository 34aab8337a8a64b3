"""Networked servo loop with QKD-keyed encryption: keys, ciphers, metrics, attacks."""

from .adversary import AttackKind, AttackScenario, Verdict
from .cipherset import CipherSpec, parse_cipher
from .controlplant import KalmanState, PIController, PlantModel
from .errors import QkdNcsError
from .keysource import KeyPool
from .loopsim import LoopConfig, RunReport, run

__version__ = "0.1.0"

__all__ = [
    "AttackKind",
    "AttackScenario",
    "CipherSpec",
    "KalmanState",
    "KeyPool",
    "LoopConfig",
    "PIController",
    "PlantModel",
    "QkdNcsError",
    "RunReport",
    "Verdict",
    "parse_cipher",
    "run",
]
