import numpy as np
import pytest
from hypothesis import given, strategies as st

from pushid import dynamics, lcp
from pushid.model import CellGrid, ObjectParams, PushAction, State, Velocity, rotation

from conftest import CELL, push, uniform


def _start(grid):
    return State.from_body_pose(grid, 0.0, 0.0, 0.0)


def _travel(traj):
    return float(np.linalg.norm(traj.final.body_pose()[:2] - traj.state(0).body_pose()[:2]))


def sliding_block_trace(v0, accel, dt, steps):
    """Scalar sliding block under constant deceleration, sampled per step."""
    t = dt * np.arange(1, steps + 1)
    return np.maximum(v0 - accel * t, 0.0)


def test_single_cell_deceleration_matches_closed_form():
    g = CellGrid.rectangle(1, 1, CELL)
    m, mu, dt, v0 = 0.3, 0.9, 0.01, 0.25
    params = ObjectParams.uniform(1, m, mu, CELL)
    state, vel = _start(g), Velocity.from_body_twist(g, (0.0, v0, 0.0))
    speeds = []
    for _ in range(100):
        state, vel, _ = dynamics.step(g, params, state, vel, None, dt)
        speeds.append(vel.twists[0, 1])
    expected = sliding_block_trace(v0, mu / m, dt, 100)
    assert np.abs(np.array(speeds) - expected).max() <= 1e-6
    # stick transition: first step at rest (to rounding)
    stop = int(np.argmax(np.abs(speeds) <= 1e-12))
    assert stop == int(np.argmax(expected == 0.0)) == int(np.ceil(v0 / (mu / m * dt))) - 1


def test_zero_duration_action_gives_initial_state_only(square):
    traj = dynamics.rollout(square, uniform(square), _start(square), [push(duration=0)])
    assert traj.T == 0 and len(traj.states) == 1


def test_rollout_is_deterministic(square):
    args = (square, uniform(square), _start(square), [push(point=(-0.01, 0.004), duration=40)])
    a, b = dynamics.rollout(*args), dynamics.rollout(*args)
    assert a.states.tobytes() == b.states.tobytes()


def test_centroid_push_on_symmetric_square_does_not_rotate():
    g = CellGrid.rectangle(2, 2, CELL)
    # cell 2 is bottom-left; its top-left corner region sits on the centroid line
    action = PushAction(2, [-0.01, 0.01], [1.0, 0.0], 3.0, 50)
    traj = dynamics.rollout(g, uniform(g), _start(g), [action])
    assert _travel(traj) > 0.01
    assert abs(traj.final.body_pose()[2]) <= 1e-3


def test_strong_friction_holds_the_object(square):
    params = uniform(square, mass=0.1, friction=5.0)
    traj = dynamics.rollout(square, params, _start(square), [push(force=4.0)])
    assert np.allclose(traj.final.poses, traj.state(0).poses, rtol=0, atol=1e-12)


@given(st.integers(0, 10_000))
def test_doubling_friction_never_travels_farther(seed):
    rng = np.random.default_rng(seed)
    g = CellGrid.rectangle(2, 2, CELL)
    masses = rng.uniform(0.05, 0.3, 4)
    fr = rng.uniform(0.05, 0.5, 4) * masses * 9.81
    d = np.array([1.0, rng.uniform(-0.5, 0.5)])
    action = PushAction(int(rng.integers(4)), rng.uniform(-0.01, 0.01, 2), d / np.linalg.norm(d),
                        rng.uniform(1, 5), 30)
    base = dynamics.rollout(g, ObjectParams.from_masses(masses, fr, CELL), _start(g), [action])
    more = dynamics.rollout(g, ObjectParams.from_masses(masses, 2 * fr, CELL), _start(g), [action])
    assert _travel(more) <= _travel(base) + 1e-12


@given(st.floats(-np.pi, np.pi), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_step_is_invariant_under_world_rotation(angle, x, y):
    g = CellGrid.from_mask(np.array([[1, 1, 1], [1, 0, 0]], dtype=bool), CELL)
    params = ObjectParams.from_masses([0.1, 0.2, 0.15, 0.3], [0.5, 0.9, 0.2, 1.1], CELL)
    vel = Velocity.from_body_twist(g, (1.5, 0.2, -0.1))
    action = push(cell=3, point=(0.0, -0.01), direction=(0.3, 1.0), force=3.0)
    s0 = State.from_body_pose(g, 0.0, 0.0, 0.2)
    s1 = State.from_body_pose(g, x, y, 0.2 + angle)
    a0, v0, _ = dynamics.step(g, params, s0, vel, action)
    a1, v1, _ = dynamics.step(g, params, s1, vel, action)
    p0, p1 = a0.body_pose(), a1.body_pose()
    moved0 = rotation(-0.2) @ p0[:2]
    moved1 = rotation(-0.2 - angle) @ (p1[:2] - [x, y])
    assert np.allclose(moved0, moved1, atol=1e-12)
    assert np.allclose(v0.twists, v1.twists, atol=1e-10)


def test_rigidity_over_long_rollout():
    g = CellGrid.from_mask(np.array([[1, 1, 1, 1], [1, 0, 0, 1]], dtype=bool), CELL)
    traj = dynamics.rollout(g, uniform(g), _start(g),
                            [push(cell=4, point=(0.0, -0.01), direction=(0.2, 1.0), force=4.0,
                                  duration=100)])
    worst = max(State(s).rigidity_error(g) for s in traj.states)
    assert worst <= 1e-6 * CELL


def test_step_agrees_with_reduced_rollout():
    g = CellGrid.rectangle(3, 1, CELL)
    params = ObjectParams.from_masses([0.1, 0.2, 0.3], [0.3, 0.5, 0.2], CELL)
    action = push(cell=0, point=(-0.01, 0.005), force=3.0, duration=25)
    traj = dynamics.rollout(g, params, _start(g), [action])
    state, vel, sol = _start(g), Velocity.zeros(g.k), None
    for _ in range(25):
        state, vel, sol = dynamics.step(g, params, state, vel, action, warm_start=sol)
    assert np.allclose(state.poses, traj.final.poses, atol=1e-10)


def test_observed_motion_inverts_the_integrator(square):
    traj = dynamics.rollout(square, uniform(square), _start(square),
                            [push(point=(-0.01, 0.008), force=3.5, duration=30)])
    poses, twists = dynamics.observed_motion(traj)
    for t in range(traj.T):
        pose, _ = dynamics.advance(square, poses[t], _carried(twists, t + 1, traj.dt), traj.dt)
        assert np.allclose(pose, poses[t + 1], atol=1e-12)


def _carried(twists, t, dt):
    # twist t is expressed at heading t; undo the re-expression of advance
    omega = twists[t, 0]
    return np.concatenate([[omega], rotation(omega * dt) @ twists[t, 1:]])


def test_failing_step_reports_its_index(monkeypatch, square):
    calls = {"n": 0}
    real = dynamics.solve_reduced

    def flaky(*args):
        calls["n"] += 1
        if calls["n"] == 4:
            raise lcp.LcpConvergenceError("stuck", (1.0, 1.0, 0.0))
        return real(*args)

    monkeypatch.setattr(dynamics, "solve_reduced", flaky)
    with pytest.raises(dynamics.SimulationError) as info:
        dynamics.rollout(square, uniform(square), _start(square), [push(duration=10)])
    assert info.value.step_index == 3
