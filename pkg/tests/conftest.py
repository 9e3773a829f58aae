import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pushid.model import CellGrid, ObjectParams, PushAction

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

CELL = 0.02


@pytest.fixture
def square():
    return CellGrid.rectangle(2, 2, CELL)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def push(cell=0, point=(-0.01, 0.0), direction=(1.0, 0.0), force=2.0, duration=30):
    return PushAction(cell, np.array(point), np.array(direction) / np.linalg.norm(direction),
                      force, duration)


def uniform(grid, mass=0.1, friction=0.3):
    return ObjectParams.uniform(grid.k, mass, friction, grid.cell_size)


SHAPES = {
    1: [np.ones((1, 1))],
    2: [np.ones((1, 2)), np.ones((2, 1))],
    3: [np.ones((1, 3)), np.array([[1, 0], [1, 1]])],
    4: [np.ones((2, 2)), np.ones((1, 4)), np.array([[1, 0, 0], [1, 1, 1]]),
        np.array([[0, 1, 0], [1, 1, 1]])],
}


def random_problem(rng, k=None, with_push=None, dt=0.01):
    """A random single-step problem on a small object (``k <= 4``)."""
    from pushid import lcp
    from pushid.model import State, Velocity, generalized_force

    k = int(rng.integers(1, 5)) if k is None else k
    shapes = SHAPES[k]
    grid = CellGrid.from_mask(shapes[rng.integers(len(shapes))].astype(bool), CELL)
    masses = rng.uniform(0.02, 0.5, k)
    frictions = rng.uniform(0.0, 1.0, k) * masses * 9.81
    params = ObjectParams.from_masses(masses, frictions, CELL)
    state = State.from_body_pose(grid, *rng.uniform(-1, 1, 2), rng.uniform(-np.pi, np.pi))
    speed = rng.choice([0.0, 1e-3, 0.1, 1.0])
    velocity = Velocity.from_body_twist(grid, rng.normal(size=3) * speed * [20, 1, 1])
    if with_push is None:
        with_push = rng.random() < 0.6
    action = None
    if with_push:
        d = rng.normal(size=2)
        action = PushAction(int(rng.integers(k)), rng.uniform(-0.01, 0.01, 2),
                            d / np.linalg.norm(d), rng.uniform(0.0, 8.0), 1)
    force = np.zeros(3 * k) if action is None else generalized_force(action, k)
    return lcp.assemble(grid, params, state, velocity, force, dt, action=action)
