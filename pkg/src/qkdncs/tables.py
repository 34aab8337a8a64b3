"""Security and delay comparison tables, and checks against reference values."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

from . import metrics
from .cipherset import AES128, AES192, AES256, DES, TABLE3_CIPHERS, XOR, CipherSpec

FEISTEL_ROUNDS = range(1, 17)

TABLE1_COLUMNS = ("algorithm", "eta", "R", "log2N", "S_A")
TABLE2_COLUMNS = ("quantity", "xor", "feistel", "spn")
TABLE3_COLUMNS = ("algorithm", "S_A", "S", "delay_s")


def feistel_round_coefficient() -> float:
    """S_A contributed by one Feistel round, at the table's 4-decimal precision."""
    spec = DES.security_params()
    per_round = metrics.security_algorithm(spec) / spec.rounds_R
    return round(per_round, 4)


def _row_name(spec: CipherSpec) -> str:
    if spec.name.startswith("feistel:"):
        return f"{spec.rounds_R}-Feistel"
    return {"xor": "XOR", "des": "DES", "aes128": "AES(128)", "aes192": "AES(192)", "aes256": "AES(256)"}[spec.name]


def table1() -> list[tuple]:
    """Algorithm strength: eta, R, log2 N and S_A per cipher."""
    rows = [(_row_name(XOR), XOR.eta, XOR.rounds_R, metrics.log2_key_len(XOR.key_len_N), XOR.security_algorithm)]
    coef = feistel_round_coefficient()
    for n in FEISTEL_ROUNDS:
        # the table lists n-round Feistel as a multiple of the rounded one-round value
        rows.append((f"{n}-Feistel", DES.eta, n, metrics.log2_key_len(DES.key_len_N), n * coef))
    for spec in (DES, AES128, AES192, AES256):
        rows.append((_row_name(spec), spec.eta, spec.rounds_R, metrics.log2_key_len(spec.key_len_N), spec.security_algorithm))
    return rows


def table2() -> list[tuple]:
    """Operation counts per round function and the resulting eta split."""
    parts = {fam: metrics.eta_breakdown(metrics.OP_COUNTS[fam]) for fam in ("xor", "feistel", "spn")}
    rows = []
    for i, op in enumerate(metrics.OPERATIONS):
        rows.append((op, *(parts[f].op_counts[i] for f in parts)))
    for label in ("s_bytesub", "s_shiftrow", "s_mixcolumn", "s_roundkeyadd"):
        rows.append((label, *(getattr(parts[f], label) for f in parts)))
    rows.append(("eta", *(parts[f].eta for f in parts)))
    return rows


def table3(epsilon: float = 0.1, reuse_r: float = 1.0, delay: metrics.DelayParams | None = None) -> list[tuple]:
    """Overall security and model round-trip delay (no jitter) per cipher."""
    delay = delay or metrics.DelayParams()
    rows = []
    for spec in TABLE3_CIPHERS:
        params = spec.security_params(epsilon, reuse_r)
        rows.append(
            (
                _row_name(spec),
                metrics.security_algorithm(params),
                metrics.security_overall(params),
                metrics.deterministic_delay(delay, spec.key_len_N),
            )
        )
    return rows


def to_csv(columns, rows, delimiter: str = ",") -> str:
    from .loopsim import rows_to_csv

    return rows_to_csv(columns, rows, delimiter)


# -- verification -------------------------------------------------------------------


@dataclass(frozen=True)
class Check:
    table: str
    row: str
    column: str
    expected: float
    actual: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return abs(self.actual - self.expected) <= self.tolerance

    def line(self) -> str:
        flag = "ok  " if self.ok else "FAIL"
        return (
            f"{flag} {self.table} {self.row:<12} {self.column:<8} "
            f"expected {self.expected:.6g} got {self.actual:.6g} (tol {self.tolerance:g})"
        )


def read_fixture(path: Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def verify(fixture_dir: Path) -> list[Check]:
    """Compare computed tables with the reference CSVs in ``fixture_dir``.

    Each fixture row carries its own tolerance column.
    """
    checks = []
    computed = {
        "table1": {r[0]: dict(zip(TABLE1_COLUMNS, r)) for r in table1()},
        "table3": {r[0]: dict(zip(TABLE3_COLUMNS, r)) for r in table3()},
    }
    for name, rows in computed.items():
        for ref in read_fixture(fixture_dir / f"{name}.csv"):
            got = rows.get(ref["algorithm"])
            if got is None:
                raise KeyError(f"{name}: no computed row for {ref['algorithm']!r}")
            for col in ref["columns"].split(";"):
                checks.append(
                    Check(name, ref["algorithm"], col, float(ref[col]), float(got[col]), float(ref[f"tol_{col}"]))
                )
    return checks


def read_kat(path: Path) -> list[tuple[bytes, bytes, bytes]]:
    """Known-answer vectors: hex ``key plaintext ciphertext`` per line."""
    out = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            key, pt, ct = line.split()
            out.append((bytes.fromhex(key), bytes.fromhex(pt), bytes.fromhex(ct)))
    return out


def write_all(out_dir: Path, delimiter: str = ",") -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, cols, rows in (
        ("table1", TABLE1_COLUMNS, table1()),
        ("table2", TABLE2_COLUMNS, table2()),
        ("table3", TABLE3_COLUMNS, table3()),
    ):
        p = out_dir / f"{name}.csv"
        p.write_text(to_csv(cols, rows, delimiter))
        paths.append(p)
    return paths


def render(delimiter: str = ",") -> str:
    buf = io.StringIO()
    for name, cols, rows in (
        ("table1", TABLE1_COLUMNS, table1()),
        ("table2", TABLE2_COLUMNS, table2()),
        ("table3", TABLE3_COLUMNS, table3()),
    ):
        buf.write(f"# {name}\n")
        buf.write(to_csv(cols, rows, delimiter))
    return buf.getvalue()
