"""Constraint Jacobians, one-step dynamics and open-loop rollouts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels, lcp
from .model import (
    CellGrid,
    ObjectParams,
    PushAction,
    State,
    Trajectory,
    Velocity,
    generalized_force,
    rotation,
    wrap_angle,
)

#: zero-rotation tangential basis: rays +x, -x, +y, -y acting on (omega, vx, vy)
FRICTION_RAYS = np.array(
    [
        [0.0, 1.0, 0.0],
        [0.0, -1.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0],
    ]
)
ZETA = np.ones(4)

DEFAULT_DT = 0.01


class SimulationError(RuntimeError):
    """A rollout step failed; ``step_index`` locates it in the action sequence."""

    def __init__(self, message: str, step_index: int):
        super().__init__(f"step {step_index}: {message}")
        self.step_index = step_index


@dataclass(frozen=True, eq=False)
class FrictionBlocks:
    D: np.ndarray
    Jf: np.ndarray
    E: np.ndarray
    mu_f: np.ndarray


def joint_jacobian(grid: CellGrid, state: State | None = None) -> np.ndarray:
    """Weld constraints, three rows per adjacent pair.

    Each pair locks the relative angular velocity and the relative velocity of
    the shared edge midpoint.  Rows are in body axes so ``state`` is unused;
    it is accepted to keep the signature uniform with the contact Jacobian.
    """
    k = grid.k
    Je = np.zeros((3 * len(grid.adjacency), 3 * k))
    centers = grid.cell_centers
    for row, (i, j) in enumerate(grid.adjacency):
        mid = 0.5 * (centers[i] + centers[j])
        r0 = 3 * row
        for cell, sign in ((i, 1.0), (j, -1.0)):
            rx, ry = mid - centers[cell]
            c = 3 * cell
            Je[r0, c] = sign
            Je[r0 + 1, c:c + 3] = sign * np.array([-ry, 1.0, 0.0])
            Je[r0 + 2, c:c + 3] = sign * np.array([rx, 0.0, 1.0])
    return Je


def rigid_basis(grid: CellGrid) -> np.ndarray:
    """``3k x 3`` map from a body twist about the centroid to cell twists."""
    r = grid.offsets
    B = np.zeros((3 * grid.k, 3))
    B[0::3, 0] = 1.0
    B[1::3, 0] = -r[:, 1]
    B[1::3, 1] = 1.0
    B[2::3, 0] = r[:, 0]
    B[2::3, 2] = 1.0
    return B


def friction_jacobian(grid: CellGrid, params: ObjectParams) -> FrictionBlocks:
    params.check_grid(grid)
    k = grid.k
    Jf = np.kron(np.eye(k), FRICTION_RAYS)
    E = np.kron(np.eye(k), ZETA[:, None])
    return FrictionBlocks(FRICTION_RAYS.copy(), Jf, E, np.diag(params.frictions))


def contact_jacobian(grid: CellGrid, state: State | None, action: PushAction | None) -> np.ndarray:
    """Unilateral rows: the pusher contact first, then listed cell pairs.

    The pusher row maps cell twists to the velocity of the contact point
    along the push direction; a non-negative value means the object is not
    moving into the pusher.  A zero-force action has no pusher row.
    """
    k = grid.k
    rows = []
    if action is not None and action.force_magnitude > 0:
        action.check_grid(k)
        n = action.direction
        r = action.contact_point
        row = np.zeros(3 * k)
        c = 3 * action.contact_cell
        row[c:c + 3] = [r[0] * n[1] - r[1] * n[0], n[0], n[1]]
        rows.append(row)
    centers = grid.cell_centers
    for i, j in grid.contact_pairs:
        n = centers[j] - centers[i]
        n = n / np.linalg.norm(n)
        mid = 0.5 * (centers[i] + centers[j])
        row = np.zeros(3 * k)
        for cell, sign in ((j, 1.0), (i, -1.0)):
            rx, ry = mid - centers[cell]
            c = 3 * cell
            row[c:c + 3] = sign * np.array([rx * n[1] - ry * n[0], n[0], n[1]])
        rows.append(row)
    return np.array(rows).reshape(len(rows), 3 * k)


def cell_linear_maps(grid: CellGrid) -> np.ndarray:
    """``(k, 2, 3)`` maps from the body twist to each cell's linear velocity."""
    r = grid.offsets
    G = np.zeros((grid.k, 2, 3))
    G[:, 0, 0] = -r[:, 1]
    G[:, 0, 1] = 1.0
    G[:, 1, 0] = r[:, 0]
    G[:, 1, 2] = 1.0
    return G


def body_mass_matrix(grid: CellGrid, masses, inertias) -> np.ndarray:
    """Reduced mass matrix ``B^T M B`` about the centroid."""
    r = grid.offsets
    m_tot = float(np.sum(masses))
    mx = float(masses @ r[:, 0])
    my = float(masses @ r[:, 1])
    inertia = float(np.sum(inertias) + masses @ (r**2).sum(axis=1))
    return np.array(
        [
            [inertia, -my, mx],
            [-my, m_tot, 0.0],
            [mx, 0.0, m_tot],
        ]
    )


class ReducedStep:
    """The contact problem of one action, in body-twist coordinates.

    Matrices do not depend on the pose because every Jacobian is expressed in
    body axes, so one instance serves every step of an action.
    """

    def __init__(self, grid: CellGrid, params: ObjectParams, action: PushAction | None, dt: float,
                 tol: float = 1e-8, max_iter: int = 2000):
        params.check_grid(grid)
        self.grid = grid
        self.dt = dt
        self.tol = tol
        self.max_iter = max_iter
        self.G = cell_linear_maps(grid)
        self.Mr = body_mass_matrix(grid, params.masses, params.inertias)
        self.Minv = np.linalg.inv(self.Mr)
        self.h = dt * params.frictions
        Jc = contact_jacobian(grid, None, action)
        B = rigid_basis(grid)
        self.C = np.ascontiguousarray(Jc @ B)
        self.c0 = np.zeros(len(self.C))
        if action is None:
            self.wrench = np.zeros(3)
        else:
            self.wrench = B.T @ generalized_force(action, grid.k)
        self.f = np.zeros((grid.k, 2))
        self.lam = np.zeros(len(self.C))

    def solve(self, twist: np.ndarray) -> np.ndarray:
        """Next body twist from the current one; warm-starts from the last call."""
        p = self.Mr @ twist + self.dt * self.wrench
        V = solve_reduced(self.Minv, self.Mr, self.G, self.h, self.C, self.c0, p,
                          self.f, self.lam, self.tol, self.max_iter)
        return V


def solve_reduced(Minv, Mr, G, h, C, c0, p, f, lam, tol, max_iter):
    """PGS followed by an exact finish (see `exact_point`); ``f`` and ``lam`` are updated in place.

    Returns the next body twist.  Raises `lcp.LcpConvergenceError` when no
    complementary point is reached within ``max_iter`` sweeps.
    """
    V, sweeps, total, worst, infeas = _kernels.pgs(Minv, G, h, C, c0, p, f, lam,
                                                    max(tol, 1e-6), max_iter)
    found = exact_point(Minv, Mr, G, h, C, c0, p, f, lam, V, tol)
    if found is not None:
        f[:] = found[1]
        lam[:] = found[2]
        return found[0]
    V, more, total, worst, infeas = _kernels.pgs(Minv, G, h, C, c0, p, f, lam, tol,
                                                 max(max_iter - sweeps, 0))
    if max(total, worst, infeas) > tol:
        raise lcp.LcpConvergenceError(
            f"no complementary point within {max_iter} sweeps", (total, worst, infeas))
    return V


def exact_point(Minv, Mr, G, h, C, c0, p, f, lam, V, tol):
    """Complementary ``(V, f, lam)`` near a PGS iterate, or ``None``.

    First polishes the active set read off the iterate.  When the iterate
    is too rough for that (degenerate slips near a diamond diagonal converge
    slowly under PGS), the problem is solved from scratch as a minimum-norm
    point in impulse space and the result polished again.  Nonzero pusher
    offsets are not covered by the second route.
    """
    ok, V2, f2, lam2 = _kernels.polish(Mr, G, h, C, c0, p, f, lam, V)
    if ok and max(_kernels.complementarity(V2, G, h, C, c0, f2, lam2)) <= tol:
        return V2, f2, lam2
    if np.any(c0 != 0):
        return None
    cap = 1e2 * (np.abs(p).max() + h.sum() + 1e-300)
    _, V1, f1, lam1, _ = _kernels.min_norm_point(Minv, G, h, C, p, cap, 1e-13, 200)
    ok, V2, f2, lam2 = _kernels.polish(Mr, G, h, C, c0, p, f1, lam1, V1)
    if ok and max(_kernels.complementarity(V2, G, h, C, c0, f2, lam2)) <= tol:
        return V2, f2, lam2
    if np.all(lam1 < cap * (1 - 1e-9)) and max(
            _kernels.complementarity(V1, G, h, C, c0, f1, lam1)) <= tol:
        return V1, f1, lam1
    return None


def advance(grid: CellGrid, pose: np.ndarray, twist: np.ndarray, dt: float):
    """Symplectic-Euler pose update of the body.

    ``twist`` is the new velocity in body axes at the current heading.  The
    returned twist is re-expressed in the body axes at the new heading.
    """
    x, y, phi = pose
    omega = twist[0]
    disp = rotation(phi) @ twist[1:] * dt
    new_phi = float(wrap_angle(phi + omega * dt))
    new_pose = np.array([x + disp[0], y + disp[1], new_phi])
    new_twist = np.concatenate([[omega], rotation(-omega * dt) @ twist[1:]])
    return new_pose, new_twist


def body_twist(grid: CellGrid, velocity: Velocity) -> np.ndarray:
    """Least-squares rigid twist about the centroid (exact for rigid motions)."""
    B = rigid_basis(grid)
    return np.linalg.lstsq(B, velocity.vector(), rcond=None)[0]


def step(grid: CellGrid, params: ObjectParams, state: State, velocity: Velocity,
         action: PushAction | None, dt: float = DEFAULT_DT, *, tol: float = 1e-8,
         max_iter: int = 2000, warm_start: lcp.LcpSolution | None = None):
    """Advance one timestep through the full assembled problem.

    Returns ``(State, Velocity, LcpSolution)``.
    """
    params.check_grid(grid)
    if state.k != grid.k or velocity.twists.shape[0] != grid.k:
        raise ValueError("state/velocity size does not match the grid")
    force = np.zeros(3 * grid.k) if action is None else generalized_force(action, grid.k)
    problem = lcp.assemble(grid, params, state, velocity, force, dt, action=action)
    solution = lcp.solve(problem, tol=tol, max_iter=max_iter, warm_start=warm_start)
    twist = np.linalg.lstsq(problem.basis, solution.v_next, rcond=None)[0]
    pose, new_twist = advance(grid, state.body_pose(), twist, dt)
    new_state = State.from_body_pose(grid, *pose)
    return new_state, Velocity.from_body_twist(grid, new_twist), solution


def expand_actions(actions) -> list[PushAction]:
    return [a for a in actions for _ in range(a.duration)]


def rollout(grid: CellGrid, params: ObjectParams, initial_state: State, actions,
            dt: float = DEFAULT_DT, *, tol: float = 1e-8, max_iter: int = 2000) -> Trajectory:
    """Open-loop simulation from rest; each action is held for its duration."""
    actions = list(actions)
    if not actions:
        raise ValueError("rollout needs at least one action")
    params.check_grid(grid)
    for a in actions:
        a.check_grid(grid.k)
    pose = initial_state.body_pose()
    # start from the exactly rigid placement of the initial pose
    states = [State.from_body_pose(grid, *pose).poses]
    twist = np.zeros(3)
    index = 0
    for action in actions:
        if action.duration == 0:
            continue
        reduced = ReducedStep(grid, params, action, dt, tol, max_iter)
        for _ in range(action.duration):
            try:
                new_twist = reduced.solve(twist)
            except lcp.LcpConvergenceError as exc:
                raise SimulationError(str(exc), index) from exc
            pose, twist = advance(grid, pose, new_twist, dt)
            states.append(State.from_body_pose(grid, *pose).poses)
            index += 1
    return Trajectory(np.array(states), tuple(expand_actions(actions)), dt)


def observed_motion(traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    """Body poses ``(T+1, 3)`` and finite-difference body twists ``(T+1, 3)``.

    Twist ``t`` is the velocity that carried the body from ``t - 1`` to ``t``,
    in body axes at heading ``t``; twist 0 is zero.  This inverts `advance`.
    """
    states = traj.states
    poses = np.empty((len(states), 3))
    poses[:, :2] = states[:, :, :2].mean(axis=1)
    poses[:, 2] = np.arctan2(np.sin(states[:, :, 2]).mean(axis=1),
                             np.cos(states[:, :, 2]).mean(axis=1))
    twists = np.zeros_like(poses)
    dt = traj.dt
    for t in range(1, len(poses)):
        disp = poses[t, :2] - poses[t - 1, :2]
        twists[t, 0] = wrap_angle(poses[t, 2] - poses[t - 1, 2]) / dt
        twists[t, 1:] = rotation(poses[t, 2]).T @ disp / dt
    return poses, twists
