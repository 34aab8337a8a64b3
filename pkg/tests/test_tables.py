import shutil

import pytest

from qkdncs import tables
from qkdncs.cli import fixture_dir

TABLE1_S_A = [0.0017] + [round(0.0112 * n, 4) for n in range(1, 17)] + [0.1785, 0.6250, 0.8121, 1.0]
TABLE3_S = [0.9002, 0.9011, 0.9089, 0.9179, 0.9625, 0.9812, 1.0]


def test_feistel_round_coefficient():
    assert tables.feistel_round_coefficient() == 0.0112


def test_table1_algorithm_security():
    got = [row[-1] for row in tables.table1()]
    assert got == pytest.approx(TABLE1_S_A, abs=1e-4)


def test_table1_row_names():
    names = [row[0] for row in tables.table1()]
    assert names[0] == "XOR" and names[-1] == "AES(256)"
    assert "16-Feistel" in names and "DES" in names


def test_table2_eta_row():
    eta = dict((r[0], r[1:]) for r in tables.table2())["eta"]
    assert eta == pytest.approx((0.0625, 0.2083, 1.0), abs=1e-4)


def test_table3_security():
    assert [row[2] for row in tables.table3()] == pytest.approx(TABLE3_S, abs=1e-4)


def test_table3_delays_increase_with_key_length():
    delays = [row[3] for row in tables.table3()]
    assert delays[0] < delays[1] == delays[2] == delays[3] < delays[4] < delays[5] < delays[6]


def test_shipped_fixtures_verify():
    checks = tables.verify(fixture_dir())
    assert len(checks) > 40
    bad = [c.line() for c in checks if not c.ok]
    assert not bad


def test_tampered_fixture_is_caught(tmp_path):
    for f in fixture_dir().iterdir():
        shutil.copy(f, tmp_path / f.name)
    t1 = tmp_path / "table1.csv"
    t1.write_text(t1.read_text().replace("XOR,eta;S_A,0.0625,1e-4,0.0017", "XOR,eta;S_A,0.0625,1e-4,0.0030"))
    checks = tables.verify(tmp_path)
    failed = [c for c in checks if not c.ok]
    assert [(c.row, c.column) for c in failed] == [("XOR", "S_A")]
    assert failed[0].line().startswith("FAIL")


def test_render_and_write(tmp_path):
    text = tables.render()
    assert "# table1" in text and "# table3" in text
    paths = tables.write_all(tmp_path, "\t")
    assert [p.name for p in paths] == ["table1.csv", "table2.csv", "table3.csv"]
    assert paths[0].read_text().splitlines()[0] == "algorithm\teta\tR\tlog2N\tS_A"
