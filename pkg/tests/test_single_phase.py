import numpy as np
import pytest
import scipy.sparse as sp

from darcyop.errors import InvalidArgument, NumericalError
from darcyop.grid import Grid, build_grid, default_covariance, sample_log_perm_field
from darcyop.single_phase import (
    SinglePhaseConfig, Transmissibility, Well, assemble_transmissibility,
    cell_half_transmissibility, corner_producers, face_transmissibility, simulate_single_phase,
    solve_spd, step_single_phase, well_rate,
)


def random_perm(grid, seed):
    return sample_log_perm_field(grid, default_covariance(grid), seed)


@pytest.mark.parametrize("args,expected", [((1, 1, 1, 1), 1.0), ((2e-13, 100, 10, 1e-3), 2e-9),
                                           ((0, 3.0, 2.0, 1.0), 0.0)])
def test_half_transmissibility(args, expected):
    assert cell_half_transmissibility(*args) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("ti,tj,expected", [(2, 2, 1), (3, 6, 2), (0, 5, 0), (5, 0, 0)])
def test_face_transmissibility(ti, tj, expected):
    assert face_transmissibility(ti, tj) == pytest.approx(expected, rel=1e-14)


def test_uniform_perm_gives_equal_faces():
    g = build_grid(5, 4, 3, 2.0, 2.0, 2.0)
    t = assemble_transmissibility(g, np.full(g.ncell, 3e-13), 1e-3).face_values()
    np.testing.assert_allclose(t, t[0], rtol=1e-14)


def test_two_cell_harmonic():
    g = build_grid(2, 1, 1, 1, 1, 1)
    k0 = 1e-13
    t = assemble_transmissibility(g, np.array([3 * k0, 6 * k0]), 1.0)
    # half-transmissibilities 6k0 and 12k0 with d = 0.5
    assert t.values[0, 0] == pytest.approx(4 * k0, rel=1e-14)
    assert t.values[1, 1] == pytest.approx(4 * k0, rel=1e-14)
    assert t.values[0, 1] == 0 and t.values[1, 0] == 0


def test_mirror_consistency_exhaustive():
    g = build_grid(3, 3, 1, 1.0, 1.0, 1.0)
    k = np.random.default_rng(0).uniform(1e-14, 1e-12, g.ncell)
    t = assemble_transmissibility(g, k, 1e-3).values
    for c in range(g.ncell):
        x, y, z = g.coords(c)
        for slot, (dx, dy) in enumerate([(1, 0), (-1, 0), (0, 1), (0, -1)]):
            if 0 <= x + dx < 3 and 0 <= y + dy < 3:
                nb = g.cell_id(x + dx, y + dy)
                assert t[c, slot] == t[nb, slot ^ 1] > 0
            else:
                assert t[c, slot] == 0


def test_assemble_rejects_negative_perm():
    g = build_grid(2, 2)
    with pytest.raises(InvalidArgument):
        assemble_transmissibility(g, np.array([1.0, -1.0, 1.0, 1.0]))


def test_well_rate():
    w = Well(0, bhp=100.0, pi=2.0)
    assert well_rate(100.0, w) == 0
    assert well_rate(110.0, w) == 20
    assert well_rate(5.0, Well(0, bhp=100.0, pi=0.0)) == 0


def test_well_rejects_negative_pi():
    with pytest.raises(InvalidArgument):
        Well(0, pi=-1.0)


def test_solve_identity_and_diagonal():
    b = np.array([1.0, -2.0, 3.0])
    np.testing.assert_allclose(solve_spd(sp.identity(3), b), b, rtol=1e-12)
    np.testing.assert_allclose(solve_spd(sp.diags([2.0, 4.0]), np.array([2.0, 8.0])), [1, 2],
                               rtol=1e-12)


def test_solve_random_spd_vs_dense():
    rng = np.random.default_rng(5)
    for _ in range(5):
        m = rng.standard_normal((10, 10))
        a = m.T @ m + np.eye(10)
        b = rng.standard_normal(10)
        x = solve_spd(sp.csr_matrix(a), b)
        np.testing.assert_allclose(x, np.linalg.solve(a, b), rtol=0, atol=1e-8)
        assert np.linalg.norm(a @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_solve_nonconvergence_reports_residual():
    rng = np.random.default_rng(1)
    m = rng.standard_normal((30, 30))
    a = sp.csr_matrix(m.T @ m + 1e-3 * np.eye(30))
    with pytest.raises(NumericalError) as info:
        solve_spd(a, rng.standard_normal(30), max_iters=2)
    assert info.value.residual > 0


CFG = SinglePhaseConfig(dt=1000.0, num_steps=20)


def desk_grid(n=16):
    return Grid(n, n, 1, 10.0, 10.0, 1.0)


def test_equilibrium_fixed_point():
    g = desk_grid(6)
    t = assemble_transmissibility(g, random_perm(g, 1), CFG.viscosity)
    p = np.full(g.ncell, 2.5e7)
    assert np.array_equal(step_single_phase(p, t, CFG, []), p)


def test_zero_wells_trajectory_constant():
    g = desk_grid(5)
    traj = simulate_single_phase(g, random_perm(g, 2), CFG, [])
    assert np.all(traj.pressure == CFG.initial_pressure)
    assert traj.rates.shape == (CFG.num_steps, 0)


def test_two_cell_hand_assembly():
    g = Grid(2, 1, 1, 10.0, 10.0, 2.0)
    k = np.array([1e-13, 4e-13])
    cfg = SinglePhaseConfig(porosity=0.25, compressibility=2e-9, viscosity=2e-3, dt=500.0)
    w = Well(1, bhp=1e7, pi=3e-11)
    p0 = np.array([3e7, 2.9e7])
    # half transmissibilities K A / (mu dx/2), A = dy dz = 20
    t0 = 1e-13 * 20 / (2e-3 * 5)
    t1 = 4e-13 * 20 / (2e-3 * 5)
    t = 1 / (1 / t0 + 1 / t1)
    acc = 10 * 10 * 2 * 0.25 * 2e-9 / 500.0
    a = np.array([[acc + t, -t], [-t, acc + t + 3e-11]])
    b = np.array([acc * p0[0], acc * p0[1] + 3e-11 * 1e7])
    expected = np.linalg.solve(a, b)
    got = step_single_phase(p0, assemble_transmissibility(g, k, cfg.viscosity), cfg, [w])
    np.testing.assert_allclose(got, expected, rtol=1e-12)


def test_discrete_maximum_principle():
    for n, seed in [(4, 0), (6, 1), (8, 2)]:
        g = desk_grid(n)
        cfg = SinglePhaseConfig(dt=5000.0, num_steps=10)
        wells = [Well(g.cell_id(0, 0), bhp=2e7, pi=1e-10)]
        traj = simulate_single_phase(g, random_perm(g, seed), cfg, wells)
        assert traj.pressure.min() >= 2e7
        assert traj.pressure.max() <= cfg.initial_pressure


def test_mirror_symmetry():
    g = desk_grid(10)
    k = random_perm(g, 4).reshape(10, 10)
    k = k * k[:, ::-1]  # symmetric under x -> nx-1-x
    cfg = SinglePhaseConfig(dt=2000.0, num_steps=15)
    traj = simulate_single_phase(g, k.ravel(), cfg, corner_producers(g, 2e7, 1e-10))
    for p in traj.pressure:
        f = p.reshape(10, 10)
        assert np.abs(f - f[:, ::-1]).max() <= 1e-9 * np.abs(f).max()


def test_mass_balance():
    g = desk_grid(8)
    cfg = SinglePhaseConfig(dt=3000.0, num_steps=30)
    wells = corner_producers(g, 2e7, 1e-10)
    traj = simulate_single_phase(g, random_perm(g, 9), cfg, wells)
    vpc = g.cell_volume * cfg.porosity * cfg.compressibility
    accumulation = vpc * np.sum(traj.pressure[-1] - cfg.initial_pressure)
    produced = cfg.dt * traj.rates.sum()
    assert accumulation == pytest.approx(-produced, rel=1e-8)


def test_pi_monotone_at_well_block():
    g = desk_grid(6)
    k = random_perm(g, 3)
    t = assemble_transmissibility(g, k, CFG.viscosity)
    cell = g.cell_id(2, 3)
    p0 = np.full(g.ncell, CFG.initial_pressure)
    prev = np.inf
    for pi in [0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8]:
        p1 = step_single_phase(p0, t, CFG, [Well(cell, 2e7, pi)])[cell]
        assert p1 <= prev
        prev = p1


def test_small_dt_limit_is_linear():
    g = desk_grid(5)
    t = assemble_transmissibility(g, random_perm(g, 6), CFG.viscosity)
    p0 = np.linspace(2.5e7, 3e7, g.ncell)
    wells = [Well(0, 2e7, 1e-10)]
    d1 = np.abs(step_single_phase(p0, t, CFG, wells, dt=1e-3) - p0).max()
    d2 = np.abs(step_single_phase(p0, t, CFG, wells, dt=1e-4) - p0).max()
    assert d1 < 1e-2 * np.abs(p0).max() * 1e-3
    assert d1 / d2 == pytest.approx(10.0, rel=1e-3)


def explicit_euler(grid, perm, cfg, wells, t_end, substeps):
    """Forward Euler on the same semi-discrete system, built from grid.neighbors."""
    n = grid.ncell
    lap = np.zeros((n, n))
    for i in range(n):
        for j, area, dist, _ in grid.neighbors(i):
            ti = perm[i] * area / (cfg.viscosity * dist / 2)
            tj = perm[j] * area / (cfg.viscosity * dist / 2)
            t = ti * tj / (ti + tj)
            lap[i, j] += t
            lap[i, i] -= t
    well_pi = np.zeros(n)
    well_bhp = np.zeros(n)
    for w in wells:
        well_pi[w.cell_id] += w.pi
        well_bhp[w.cell_id] = w.bhp
    vpc = grid.cell_volume * cfg.porosity * cfg.compressibility
    p = np.full(n, cfg.initial_pressure)
    h = t_end / substeps
    for _ in range(substeps):
        p = p + h / vpc * (lap @ p - well_pi * (p - well_bhp))
    return p


def test_agrees_with_fine_explicit_oracle():
    g = Grid(4, 4, 1, 10.0, 10.0, 1.0)
    perm = random_perm(g, 7)
    cfg = SinglePhaseConfig(dt=10.0, num_steps=100)
    wells = corner_producers(g, 2e7, 1e-10)
    implicit = simulate_single_phase(g, perm, cfg, wells).pressure[-1]
    explicit = explicit_euler(g, perm, cfg, wells, cfg.dt * cfg.num_steps, 1000 * cfg.num_steps)
    err = np.abs(implicit - explicit).max() / cfg.initial_pressure
    assert err <= 2e-3


def test_transmissibility_input_equivalent_to_perm():
    g = desk_grid(5)
    k = random_perm(g, 8)
    wells = corner_producers(g, 2e7, 1e-10)
    a = simulate_single_phase(g, k, CFG, wells)
    b = simulate_single_phase(g, assemble_transmissibility(g, k, CFG.viscosity), CFG, wells)
    assert np.array_equal(a.pressure, b.pressure)


def test_inconsistent_transmissibility_rejected():
    g = desk_grid(4)
    bad = Transmissibility(g, np.zeros((g.ncell, 6)))
    with pytest.raises(InvalidArgument):
        simulate_single_phase(g, bad, CFG, [])
