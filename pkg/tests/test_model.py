import numpy as np
import pytest
from hypothesis import given, strategies as st

from pushid.model import (CellGrid, ObjectParams, PushAction, State, Trajectory, Velocity,
                          generalized_force, pose_error, rotation, wrap_angle)

from conftest import CELL, push


def test_rectangle_grid_geometry():
    g = CellGrid.rectangle(3, 2, CELL)
    assert g.k == 6
    assert len(g.adjacency) == 7
    assert np.allclose(g.centroid, 0.0)
    assert set(g.boundary_cells()) == set(range(6))


def test_interior_cell_is_not_boundary():
    g = CellGrid.rectangle(3, 3, CELL)
    assert 4 not in g.boundary_cells()


def test_disconnected_grid_rejected():
    mask = np.array([[1, 0, 1]], dtype=bool)
    with pytest.raises(ValueError, match="connected"):
        CellGrid.from_mask(mask, CELL)


def test_adjacency_must_match_cell_size():
    with pytest.raises(ValueError, match="apart"):
        CellGrid(CELL, [[0, 0], [0.05, 0]], ((0, 1),))


def test_params_validation():
    with pytest.raises(ValueError):
        ObjectParams([1.0, -1.0], [1.0, 1.0], [0.1, 0.1])
    with pytest.raises(ValueError):
        ObjectParams([1.0], [1.0], [-0.1])
    with pytest.raises(ValueError):
        ObjectParams([1.0, 1.0], [1.0], [0.1, 0.1])


def test_from_masses_ties_inertia_to_square_cells():
    p = ObjectParams.from_masses([0.6], [1.0], 0.1)
    assert p.inertias[0] == pytest.approx(0.6 * 0.01 / 6)


def test_mass_diagonal_order():
    p = ObjectParams([2.0], [0.5], [1.0])
    assert list(p.mass_diagonal()) == [0.5, 2.0, 2.0]


def test_push_action_validation():
    with pytest.raises(ValueError, match="unit"):
        PushAction(0, [0, 0], [1, 1], 1.0, 3)
    with pytest.raises(ValueError):
        PushAction(0, [0, 0], [1, 0], -1.0, 3)
    with pytest.raises(ValueError):
        push(duration=-1)
    with pytest.raises(ValueError, match="out of range"):
        push(cell=5).check_grid(4)


def test_generalized_force_torque_about_cell_center():
    a = PushAction(1, [0.0, 0.01], [1.0, 0.0], 2.0, 1)
    f = generalized_force(a, 2)
    assert np.allclose(f, [0, 0, 0, -0.02, 2.0, 0.0])


def test_trajectory_shape_checks():
    with pytest.raises(ValueError, match="one more state"):
        Trajectory(np.zeros((3, 1, 3)), [push()], 0.01)
    t = Trajectory(np.zeros((2, 4, 3)), [push()], 0.01)
    assert (t.T, t.k) == (1, 4)


def test_pose_error_is_mean_cell_distance():
    a = State(np.zeros((2, 3)))
    b = State(np.array([[0.03, 0.04, 0.0], [0.0, 0.0, 1.0]]))
    assert pose_error(a, b) == pytest.approx(0.025)


@given(st.floats(-50, 50, allow_nan=False))
def test_wrap_angle_range_and_equivalence(phi):
    w = wrap_angle(phi)
    assert -np.pi <= w < np.pi
    assert np.allclose(rotation(w), rotation(phi), atol=1e-9)


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-3, 3))
def test_body_pose_round_trip(x, y, phi):
    g = CellGrid.rectangle(3, 2, CELL)
    s = State.from_body_pose(g, x, y, phi)
    assert np.allclose(s.body_pose(), [x, y, wrap_angle(phi)], atol=1e-12)
    assert s.rigidity_error(g) < 1e-12


@given(st.floats(-5, 5), st.floats(-1, 1), st.floats(-1, 1))
def test_rigid_velocity_preserves_distances(omega, vx, vy):
    g = CellGrid.rectangle(2, 3, CELL)
    v = Velocity.from_body_twist(g, (omega, vx, vy)).twists
    r = g.offsets
    for i, j in g.adjacency:
        rel = v[j, 1:] - v[i, 1:]
        assert abs(rel @ (r[j] - r[i])) < 1e-12
