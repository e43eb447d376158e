import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cubepersist.grid import (DiagramPoint, GridSpec, PersistenceDiagram, ScalarField, SeedStream,
                              index_to_point, load_scalar_field, read_field, save_scalar_field,
                              write_field)


@pytest.mark.parametrize("d,N,k,x", [
    (2, 4, (1, 1), (0.25, 0.25)),
    (2, 4, (4, 2), (1.0, 0.5)),
    (1, 10, (10,), (1.0,)),
    (3, 5, (1, 3, 5), (0.2, 0.6, 1.0)),
])
def test_index_to_point(d, N, k, x):
    np.testing.assert_allclose(index_to_point(GridSpec(d, N), k), x)


@pytest.mark.parametrize("k", [(0, 1), (5, 1), (1, 2, 3)])
def test_index_out_of_range(k):
    with pytest.raises(ValueError):
        GridSpec(2, 4).index_to_point(k)


@pytest.mark.parametrize("d,N", [(0, 4), (2, 1), (1.5, 4)])
def test_bad_grid(d, N):
    with pytest.raises(ValueError):
        GridSpec(d, N)


def test_points_row_major():
    pts = GridSpec(2, 3).points()
    assert pts.shape == (9, 2)
    np.testing.assert_allclose(pts[1], [1 / 3, 2 / 3])
    np.testing.assert_allclose(pts[3], [2 / 3, 1 / 3])


def test_nearest_index_roundtrip():
    g = GridSpec(2, 7)
    for k in [(1, 1), (3, 7), (7, 4)]:
        assert g.point_to_nearest_index(g.index_to_point(k)) == k


def test_scalar_field_checks():
    g = GridSpec(2, 3)
    f = ScalarField(g, np.arange(9.0))
    assert f.array.shape == (3, 3)
    with pytest.raises(ValueError):
        f.values[0] = 1.0
    with pytest.raises(ValueError):
        ScalarField(g, np.arange(8.0))
    with pytest.raises(ValueError):
        ScalarField(g, [np.nan] + [0.0] * 8)
    assert ScalarField.from_array(f.array) == f


def test_diagram_point():
    p = DiagramPoint(0.0, math.inf, 0)
    assert p.essential and p.persistence == math.inf
    with pytest.raises(ValueError):
        DiagramPoint(1.0, 1.0, 0)


def test_diagram_rejects_bad_points():
    with pytest.raises(ValueError):
        PersistenceDiagram([0], [2.0], [1.0])
    with pytest.raises(ValueError):
        PersistenceDiagram([0], [-math.inf], [1.0])


def test_diagram_views():
    D = PersistenceDiagram.from_points([(1, 0.5, 2.0), (0, -1.0, math.inf), (0, 0.0, 1.0)])
    assert len(D) == 3 and D.max_degree == 1
    np.testing.assert_array_equal(D.finite(0), [[0.0, 1.0]])
    np.testing.assert_array_equal(D.essential(0), [-1.0])
    assert D.betti_at(0.7) == {0: 2, 1: 1}
    assert D.betti_at(1.0) == {0: 1, 1: 1}


point = st.tuples(st.integers(0, 2),
                  st.floats(-1e6, 1e6, allow_nan=False),
                  st.one_of(st.floats(0.001, 1e6), st.just(math.inf)))


@given(st.lists(point, max_size=12))
@settings(max_examples=60, deadline=None)
def test_csv_roundtrip(pts):
    D = PersistenceDiagram.from_points([(s, b, b + p) for s, b, p in pts if b + p > b])
    assert PersistenceDiagram.from_csv(D.to_csv()) == D


def test_csv_writes_inf(tmp_path):
    D = PersistenceDiagram.from_points([(0, 0.0, math.inf)])
    D.to_csv(tmp_path / "d.csv")
    assert (tmp_path / "d.csv").read_text() == "degree,birth,death\n0,0.0,inf\n"
    assert PersistenceDiagram.from_csv(tmp_path / "d.csv") == D


def test_csv_bad_header():
    with pytest.raises(ValueError):
        PersistenceDiagram.from_csv("a,b,c\n0,1,2\n")


def test_seed_stream_reproducible_and_independent():
    s = SeedStream(42)
    a = s.rng(1, 2).standard_normal(5)
    np.testing.assert_array_equal(a, SeedStream(42).child(1).rng(2).standard_normal(5))
    assert not np.allclose(a, s.rng(1, 3).standard_normal(5))
    assert not np.allclose(a, SeedStream(43).rng(1, 2).standard_normal(5))
    assert s.derived_seed(1, 2) == SeedStream(42).derived_seed(1, 2)
    assert 0 <= s.derived_seed(7) < 2**64


def test_field_file_roundtrip(tmp_path):
    vals = np.random.default_rng(0).normal(size=(4, 4))
    write_field(tmp_path / "f.cpf", vals, 2, 4, note="x")
    got, meta = read_field(tmp_path / "f.cpf")
    np.testing.assert_array_equal(got, vals)
    assert meta["note"] == "x" and meta["N"] == 4
    side = json.loads((tmp_path / "f.cpf.json").read_text())
    assert side["magic"] == "CPF1"
    raw = (tmp_path / "f.cpf").read_bytes()
    assert raw[:4] == b"CPF1" and len(raw) == 16 + 8 * 16


def test_field_file_errors(tmp_path):
    p = tmp_path / "bad.cpf"
    p.write_bytes(b"XXXX" + bytes(12))
    with pytest.raises(ValueError, match="magic"):
        read_field(p)
    write_field(p, np.zeros(9), 2, 3)
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(ValueError):
        read_field(p)
    with pytest.raises(ValueError):
        write_field(p, np.zeros(8), 2, 3)


def test_scalar_field_file(tmp_path):
    f = ScalarField(GridSpec(1, 5), [1.0, 2, 3, 4, 5])
    save_scalar_field(tmp_path / "s.cpf", f)
    assert load_scalar_field(tmp_path / "s.cpf") == f
