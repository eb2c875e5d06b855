"""Grid geometry, ghost extension, and the dx-weighted error norm."""

import numpy as np
import pytest

from wenorl.grid import FieldState, Grid, ghost_extend, ghost_map, l2_error


def test_periodic_ghosts_wrap():
    got = ghost_extend(np.array([1.0, 2.0, 3.0, 4.0]), "periodic", 2)
    assert np.array_equal(got, [3, 4, 1, 2, 3, 4, 1, 2])


def test_outflow_ghosts_repeat_edge_cells():
    got = ghost_extend(np.array([1.0, 2.0, 3.0, 4.0]), "outflow", 2)
    assert np.array_equal(got, [1, 1, 1, 2, 3, 4, 4, 4])


def test_zero_width_is_identity():
    u = np.arange(5.0)
    assert np.array_equal(ghost_extend(u, "periodic", 0), u)


def test_width_beyond_grid_raises():
    with pytest.raises(ValueError):
        ghost_map(4, "periodic", 5)
    with pytest.raises(ValueError):
        ghost_map(4, "outflow", 5)


def test_constant_fields_stay_constant_under_extension():
    for boundary in ("periodic", "outflow"):
        ext = ghost_extend(np.full(16, 2.5), boundary, 3)
        assert np.all(ext == 2.5) and ext.size == 22


def test_extension_works_per_component():
    u = np.array([[1.0, 2.0], [10.0, 20.0]])
    ext = ghost_extend(u, "periodic", 1)
    assert np.array_equal(ext, [[2, 1, 2, 1], [20, 10, 20, 10]])


def test_grid_geometry():
    g = Grid(4, 0.0, 1.0, "periodic")
    assert g.dx == 0.25
    assert np.allclose(g.centers(), [0.125, 0.375, 0.625, 0.875])
    assert np.allclose(g.interfaces(), [0.0, 0.25, 0.5, 0.75, 1.0])
    assert g.interfaces().size == g.n_cells + 1


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid(0)
    with pytest.raises(ValueError):
        Grid(4, 1.0, 0.0)
    with pytest.raises(ValueError):
        Grid(4, boundary="reflecting")


def test_field_state_promotes_to_two_dims():
    s = FieldState(np.arange(4.0))
    assert s.u.shape == (1, 4)
    assert s.n_components == 1 and s.n_cells == 4
    c = s.copy()
    c.u[0, 0] = 99.0
    assert s.u[0, 0] == 0.0


def test_l2_error_zero_for_identical_fields():
    u = np.random.default_rng(0).normal(size=(3, 32))
    assert l2_error(u, u, 1 / 32) == 0.0


def test_l2_error_of_constant_offset():
    # constant difference delta over [0, L]: sqrt(dx * N * delta^2) = |delta| sqrt(L)
    n, L, delta = 64, 2.0, -0.3
    a = np.zeros(n)
    b = np.full(n, delta)
    assert l2_error(a, b, L / n) == pytest.approx(abs(delta) * np.sqrt(L),
                                                  rel=1e-14)


def test_l2_error_sums_components():
    a = np.zeros((2, 4))
    b = np.array([[1.0, 1, 1, 1], [3.0, 3, 3, 3]])
    # component errors: 1*sqrt(4dx) and 3*sqrt(4dx) -> sum 4*sqrt(4dx)
    assert l2_error(a, b, 0.25) == pytest.approx(4.0, rel=1e-14)


def test_l2_error_symmetry_and_triangle():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a, b, c = rng.normal(size=(3, 2, 16))
        dx = 1 / 16
        assert l2_error(a, b, dx) == l2_error(b, a, dx)
        assert l2_error(a, c, dx) <= l2_error(a, b, dx) + l2_error(b, c, dx) + 1e-12


def test_l2_error_shape_mismatch_raises():
    with pytest.raises(ValueError):
        l2_error(np.zeros(4), np.zeros(5), 0.1)
