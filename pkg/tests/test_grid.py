import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from darcyop.errors import InvalidArgument
from darcyop.grid import CovarianceSpec, Grid, build_grid, default_covariance, sample_log_perm_field


def brute_force_faces(nx, ny, nz):
    count = 0
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                count += (x + 1 < nx) + (y + 1 < ny) + (z + 1 < nz)
    return count


def test_smallest_grid():
    g = build_grid(1, 1, 1, 1, 1, 1)
    assert g.ncell == 1
    assert g.num_interior_faces == 0
    assert g.neighbors(0) == []


def test_two_cell_grid_face_area():
    g = build_grid(2, 1, 1, 1, 1, 1)
    assert g.ncell == 2 and g.num_interior_faces == 1
    (nb, area, dist, direction), = g.neighbors(0)
    assert (nb, area, dist, direction) == (1, 1.0, 1.0, "+x")


def test_face_count_3x2():
    g = build_grid(3, 2, 1, 1.0, 2.0, 3.0)
    assert g.ncell == 6
    assert g.num_interior_faces == 7 == brute_force_faces(3, 2, 1)


@pytest.mark.parametrize("bad", [(0, 1, 1, 1, 1, 1), (1, 1, 1, 0, 1, 1), (2, 2, 1, 1, -1, 1),
                                 (1, -3, 1, 1, 1, 1)])
def test_invalid_dimensions(bad):
    with pytest.raises(InvalidArgument):
        build_grid(*bad)


def test_out_of_range_neighbors():
    g = build_grid(2, 2)
    with pytest.raises(InvalidArgument):
        g.neighbors(4)
    with pytest.raises(InvalidArgument):
        g.neighbors(-1)


@pytest.mark.parametrize("dims,cell,expected", [((2, 2, 1), (0, 0, 0), 2), ((3, 3, 1), (1, 1, 0), 4),
                                                ((3, 3, 3), (1, 1, 1), 6)])
def test_connectivity(dims, cell, expected):
    g = build_grid(*dims, 1.0, 1.0, 1.0)
    assert len(g.neighbors(g.cell_id(*cell))) == expected


def test_face_geometry_per_axis():
    g = build_grid(3, 3, 3, 2.0, 3.0, 5.0)
    for nb, area, dist, d in g.neighbors(g.cell_id(1, 1, 1)):
        axis = "xyz".index(d[1])
        assert area == (15.0, 10.0, 6.0)[axis]
        assert dist == (2.0, 3.0, 5.0)[axis]


dims = st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(1, 4))


@given(dims)
@settings(max_examples=40, deadline=None)
def test_enumeration_bijection_and_symmetry(d):
    g = build_grid(*d, 1.0, 2.0, 3.0)
    seen = set()
    for c in range(g.ncell):
        xyz = g.coords(c)
        assert g.cell_id(*xyz) == c
        seen.add(xyz)
        for nb, area, dist, _ in g.neighbors(c):
            back = {(n, a, r) for n, a, r, _ in g.neighbors(nb)}
            assert (c, area, dist) in back
    assert len(seen) == g.ncell
    assert g.num_interior_faces == brute_force_faces(*d)


def test_cell_id_formula():
    g = build_grid(4, 3, 2)
    assert g.cell_id(1, 2, 1) == 1 + 4 * (2 + 3 * 1)


def test_zero_variance_is_constant():
    g = build_grid(4, 4)
    cov = CovarianceSpec(std_log_k=0.0, mean_log_k=np.log(2e-13))
    k = sample_log_perm_field(g, cov, seed=3)
    assert np.all(k == k[0])
    np.testing.assert_allclose(k, 2e-13, rtol=1e-14)


@pytest.mark.parametrize("model", ["exponential", "gaussian"])
def test_positive_and_reproducible(model):
    g = build_grid(8, 8, 1, 10.0, 10.0, 1.0)
    cov = default_covariance(g, model=model)
    a = sample_log_perm_field(g, cov, 11)
    b = sample_log_perm_field(g, cov, 11)
    c = sample_log_perm_field(g, cov, 12)
    assert np.all(a > 0)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_long_correlation_suppresses_spatial_variance():
    g = build_grid(8, 8, 1, 1.0, 1.0, 1.0)
    sigma = 1.0
    cov = CovarianceSpec(lx=1e3, ly=1e3, lz=1e3, mean_log_k=0.0, std_log_k=sigma)
    stds = [np.log(sample_log_perm_field(g, cov, s)).std() for s in range(100)]
    assert max(stds) < 0.2 * sigma


def test_empirical_covariance_matches_kernel():
    # 2x2 grid with unit spacing: adjacent centres are 1 apart, diagonal sqrt(2)
    g = build_grid(2, 2, 1, 1.0, 1.0, 1.0)
    ell = 1.5
    cov = CovarianceSpec(lx=ell, ly=ell, lz=ell, mean_log_k=0.0, std_log_k=1.0)
    z = np.array([np.log(sample_log_perm_field(g, cov, s)) for s in range(2000)])
    emp = np.cov(z, rowvar=False)
    a, b = np.exp(-1 / ell), np.exp(-np.sqrt(2) / ell)
    expected = np.array([[1, a, a, b], [a, 1, b, a], [a, b, 1, a], [b, a, a, 1]])
    assert np.abs(emp - expected).max() < 0.1


def test_grid_is_frozen():
    g = Grid(2, 2)
    with pytest.raises(Exception):
        g.nx = 3
