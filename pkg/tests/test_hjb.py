import numpy as np
import pytest

from meanfield.geometry import Grid2D, parse_geometry
from meanfield.hamiltonian import ConstantCost, LocalHamiltonian, QuadraticCost, pedestrian_hamiltonian
from meanfield.hjb import (
    HjbStepInput,
    IndependentTerminal,
    LocalTerminal,
    Mode,
    hjb_backward_step,
    terminal_condition,
)

PED = pedestrian_hamiltonian()


def step(u_next, m, grid, mode=Mode.MFG, spec=PED, nu=0.05, dt=0.01, **kw):
    return hjb_backward_step(HjbStepInput(u_next=u_next, m_now=m, nu=nu, dt=dt, mode=mode, spec=spec,
                                          grid=grid, **kw))


@pytest.mark.parametrize("mode", [Mode.MFG, Mode.MFTC])
def test_constant_value_gains_running_cost(mode):
    grid = Grid2D.torus(8)
    rng = np.random.default_rng(0)
    m = rng.uniform(0, 3, (8, 8))
    u = step(np.full((8, 8), 2.5), m, grid, mode=mode)
    np.testing.assert_allclose(u, 2.5 + 0.01 / 3200.0, rtol=1e-14)


def test_constant_preserved_without_running_cost():
    grid = Grid2D.torus(6)
    spec = LocalHamiltonian(F=ConstantCost(0.0))
    u = step(np.full((6, 6), -1.25), np.ones((6, 6)), grid, spec=spec)
    np.testing.assert_array_equal(u, -1.25)


def test_modes_agree_without_density_dependence():
    grid = Grid2D.torus(10)
    spec = LocalHamiltonian(cH=2.0, alpha=0.0, F=ConstantCost(0.3))
    rng = np.random.default_rng(1)
    u_next = rng.normal(size=(10, 10))
    m = rng.uniform(0, 2, (10, 10))
    np.testing.assert_allclose(step(u_next, m, grid, Mode.MFG, spec),
                               step(u_next, m, grid, Mode.MFTC, spec), rtol=0, atol=1e-15)


def test_mftc_adds_m_times_dHdm():
    grid = Grid2D.torus(8)
    spec = LocalHamiltonian(cH=1.0, alpha=1.0, F=QuadraticCost(0.5, 0.0))
    rng = np.random.default_rng(2)
    u_next = rng.normal(size=(8, 8))
    m = rng.uniform(0.1, 2, (8, 8))
    nu0 = dict(nu=0.0, dt=0.001)
    diff = step(u_next, m, grid, Mode.MFTC, spec, **nu0) - step(u_next, m, grid, Mode.MFG, spec, **nu0)
    # rebuild the upwind |grad u|^2 by hand
    h = grid.h
    dpx = (np.roll(u_next, -1, 1) - u_next) / h
    dmx = (u_next - np.roll(u_next, 1, 1)) / h
    dpy = (np.roll(u_next, -1, 0) - u_next) / h
    dmy = (u_next - np.roll(u_next, 1, 0)) / h
    P = (np.minimum(dpx, 0) ** 2 + np.maximum(dmx, 0) ** 2 + np.minimum(dpy, 0) ** 2
         + np.maximum(dmy, 0) ** 2)
    expected = 0.001 * m * (P / (1 + m) ** 2 + m)
    np.testing.assert_allclose(diff, expected, rtol=1e-9, atol=1e-15)


def test_comparison_principle():
    grid = parse_geometry("......\n..##..\n.....E\n......", side_length=1.0)
    rng = np.random.default_rng(3)
    m = rng.uniform(0, 4, (4, 6))
    for _ in range(20):
        u2 = rng.normal(scale=0.05, size=(4, 6))
        u1 = u2 + rng.uniform(0, 0.05, (4, 6))
        a = step(u1, m, grid, dt=1e-4)
        b = step(u2, m, grid, dt=1e-4)
        assert np.all(grid.restrict(a) >= grid.restrict(b) - 1e-15)


def test_exit_cells_hold_exit_cost():
    grid = parse_geometry("...\n..E\n...", side_length=1.0)
    u = step(np.zeros((3, 3)), np.zeros((3, 3)), grid, exit_cost=0.7)
    assert u[1, 2] == 0.7


def test_nonzero_exit_cost_is_a_fixed_point_without_running_cost():
    # u == exit cost everywhere is stationary when F = 0
    grid = parse_geometry("....\n...E\n....", side_length=1.0)
    spec = LocalHamiltonian(F=ConstantCost(0.0))
    u = step(np.full((3, 4), 0.7), np.ones((3, 4)), grid, spec=spec, exit_cost=0.7)
    np.testing.assert_allclose(grid.restrict(u), 0.7, rtol=1e-13)


def test_invalid_inputs():
    grid = Grid2D.torus(4)
    with pytest.raises(ValueError):
        step(np.zeros((4, 4)), -np.ones((4, 4)), grid)
    with pytest.raises(ValueError):
        step(np.zeros((4, 4)), np.ones((4, 4)), grid, dt=0.0)
    with pytest.raises(ValueError):
        step(np.zeros((4, 4)), np.ones((4, 4)), grid, nu=-1.0)
    with pytest.raises(ValueError):
        step(np.zeros((3, 4)), np.ones((4, 4)), grid)


class TestTerminal:
    grid = Grid2D.torus(5)

    def test_independent_zero(self):
        out = terminal_condition(IndependentTerminal(0.0), np.ones((5, 5)), Mode.MFTC, self.grid)
        np.testing.assert_array_equal(out, 0.0)

    def test_linear_cost_doubles_in_control_mode(self):
        spec = LocalTerminal(h=lambda x, y, m: m, dh_dm=lambda x, y, m: np.ones_like(m))
        m = np.random.default_rng(0).uniform(0, 3, (5, 5))
        np.testing.assert_allclose(terminal_condition(spec, m, Mode.MFTC, self.grid), 2 * m)
        np.testing.assert_allclose(terminal_condition(spec, m, Mode.MFG, self.grid), m)

    def test_density_free_cost(self):
        spec = LocalTerminal(h=lambda x, y, m: np.sin(x) + y, dh_dm=lambda x, y, m: 0.0 * m)
        x, y = self.grid.cell_centers()
        m = np.full((5, 5), 2.0)
        for mode in Mode:
            np.testing.assert_allclose(terminal_condition(spec, m, mode, self.grid), np.sin(x) + y)

    def test_negative_density_rejected(self):
        with pytest.raises(ValueError):
            terminal_condition(IndependentTerminal(), -np.ones((5, 5)), Mode.MFG, self.grid)
