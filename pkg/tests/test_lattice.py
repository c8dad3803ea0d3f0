import numpy as np
import pytest

from brwlab.lattice import (Field, make_grid, bump_field, square_measure,
                            point_measure, write_field, read_field)


def test_make_grid_examples():
    g = make_grid(1, 4)
    assert g.n_sites == 16
    assert g.spacing == 1.0
    c = g.axis_coords()
    assert c.min() == -2.0 and c.max() == 1.0  # [-2, 2) at integer coordinates

    g2 = make_grid(2, 2)
    assert g2.n_sites == 16
    assert g2.spacing == 0.5


def test_make_grid_rejects_bad_inputs():
    with pytest.raises(ValueError):
        make_grid(0, 4)
    with pytest.raises(ValueError):
        make_grid(-2, 4)
    with pytest.raises(ValueError):
        make_grid(1, 3)  # odd L*n
    with pytest.raises(ValueError):
        make_grid(1, 2)  # L*n = 2 < 4
    with pytest.raises(ValueError):
        make_grid(3, 1.1)  # non-integer L*n


def test_index_coord_roundtrip_exhaustive():
    g = make_grid(16, 4)
    assert g.n_sites == 4096
    for ix in range(g.M):
        for iy in range(g.M):
            x, y = g.index_to_coord(ix, iy)
            assert -g.L / 2 <= x < g.L / 2
            assert g.coord_to_index(x, y) == (ix, iy)


def test_field_validation():
    g = make_grid(2, 2)
    with pytest.raises(ValueError):
        Field(g, np.zeros((3, 3)))
    bad = np.zeros((g.M, g.M))
    bad[0, 0] = np.inf
    with pytest.raises(ValueError):
        Field(g, bad)


def test_square_measure_center_unit():
    g = make_grid(8, 4)
    m = square_measure(g, side=1.0, mass=1.0)
    assert np.isclose(m.sum(), 1.0)
    assert (m > 0).sum() == 64  # 8x8 sites cover the unit square
    assert np.allclose(m[m > 0], 1.0 / 64)


def test_point_measure_and_bump():
    g = make_grid(8, 4)
    m = point_measure(g, (0.0, 0.0), 2.0)
    assert m.sum() == 2.0 and (m > 0).sum() == 1
    phi = bump_field(g, height=1.0, width=1.0)
    assert np.isclose(phi.values.max(), 1.0)
    x, y = g.coords()
    assert np.all(phi.values[np.hypot(x, y) >= 1.0] == 0.0)


def test_fld_roundtrip(tmp_path):
    g = make_grid(4, 4)
    f = Field(g, np.random.default_rng(0).standard_normal((g.M, g.M)))
    path = tmp_path / "field.fld"
    write_field(path, f, kind="xi", seed=3, dist="rademacher")
    f2, header = read_field(path)
    assert header == {"n": 4, "L": 4.0, "kind": "xi", "seed": 3, "dist": "rademacher"}
    np.testing.assert_array_equal(f.values, f2.values)
    assert f2.grid == g
