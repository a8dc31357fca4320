import numpy as np
import pytest

from fluidroute import optpath
from fluidroute.tables import COLUMNS, FORMAT_VERSION, TableIntegrityError, config_hash, load_table, save_table, table_text


@pytest.fixture(scope="module")
def small():
    return optpath.solve("exp", 0.7, n_grid=201, n_controls=101)


def test_round_trip_bit_identical(small, tmp_path):
    p = save_table(small, tmp_path / "t.csv")
    t = load_table(p)
    for name in ("yhat", "tau", "control", "move"):
        assert np.array_equal(getattr(t, name), getattr(small, name)), name
    assert (t.rho, t.dist_tag, t.n_controls, t.sweeps) == (small.rho, small.dist_tag, small.n_controls, small.sweeps)
    assert t.residual == small.residual and t.mean_size == small.mean_size
    # a reload rewrites to the same bytes
    p2 = save_table(t, tmp_path / "t2.csv")
    assert p.read_bytes() == p2.read_bytes()


def test_header_contents(small):
    text = table_text(small, {"dist": "exp", "rho": 0.7})
    head = [l for l in text.splitlines() if l.startswith("#")]
    assert head[0].endswith(f"format {FORMAT_VERSION}")
    assert f"# config_hash: {config_hash({'dist': 'exp', 'rho': 0.7})}" in head
    for key in ("dist", "rho", "grid", "residual", "sha256"):
        assert any(l.startswith(f"# {key}: ") for l in head)
    body = [l for l in text.splitlines() if not l.startswith("#")]
    assert body[0] == ",".join(COLUMNS)
    assert len(body) == 1 + len(small.yhat)


def test_config_hash_order_free():
    assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def test_derived_columns_consistent(small, tmp_path):
    p = save_table(small, tmp_path / "t.csv")
    rows = [l for l in p.read_text().splitlines() if not l.startswith("#")][1:]
    arr = np.array([[float(v) for v in r.split(",")] for r in rows])
    np.testing.assert_array_equal(arr[:, 3], small.w)
    np.testing.assert_array_equal(arr[:, 4], small.theta)


def _corrupt(path, old, new):
    text = path.read_text()
    assert old in text
    path.write_text(text.replace(old, new, 1))


def test_detects_edited_value(small, tmp_path):
    p = save_table(small, tmp_path / "t.csv")
    lines = p.read_text().splitlines()
    last = lines[-2]
    _corrupt(p, last, last.replace("0.", "1.", 1))
    with pytest.raises(TableIntegrityError, match="checksum"):
        load_table(p)


def test_detects_missing_rows(small, tmp_path):
    p = save_table(small, tmp_path / "t.csv")
    text = p.read_text().splitlines(keepends=True)
    p.write_text("".join(text[:-5]))
    with pytest.raises(TableIntegrityError):
        load_table(p)


def test_detects_missing_header_key(small, tmp_path):
    p = save_table(small, tmp_path / "t.csv")
    text = "".join(l for l in p.read_text().splitlines(keepends=True) if not l.startswith("# rho:"))
    p.write_text(text)
    with pytest.raises(TableIntegrityError, match="rho"):
        load_table(p)


def test_rejects_non_tables(tmp_path):
    p = tmp_path / "junk.bin"
    p.write_bytes(bytes(range(256)))
    with pytest.raises(TableIntegrityError):
        load_table(p)
    q = tmp_path / "only_header.csv"
    q.write_text("# dist: exp\n")
    with pytest.raises(TableIntegrityError):
        load_table(q)


def test_loaded_table_is_usable(small, tmp_path):
    t = load_table(save_table(small, tmp_path / "t.csv"))
    assert optpath.value_lookup(t, (1.0, 0.3)) == optpath.value_lookup(small, (1.0, 0.3))
    assert optpath.trace(t, (1.0, 1.0)).total_cost == optpath.trace(small, (1.0, 1.0)).total_cost


def test_config_hash_ignores_output_location():
    assert config_hash({"rho": 0.7, "out": "a.csv", "threads": 2}) == config_hash({"rho": 0.7, "out": "b.csv"})
