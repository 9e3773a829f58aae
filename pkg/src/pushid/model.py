"""Domain types: cell grids, object parameters, planar states and push actions.

Conventions used throughout the package:

* A cell twist is ``(omega, vx, vy)``, matching the mass-matrix diagonal
  ``[I_i, M_i, M_i]``.  Linear components are expressed in the object's body
  axes, so friction rays and push directions rotate with the object.
* Cell poses ``(x, y, phi)`` are in the world frame, ``phi`` wrapped to
  ``(-pi, pi]``.
* The body reference point is the centroid of the cell centers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components


def wrap_angle(phi):
    """Wrap angles to ``(-pi, pi]``."""
    phi = np.asarray(phi, dtype=float)
    return np.pi - np.mod(np.pi - phi, 2.0 * np.pi)


def rotation(phi: float) -> np.ndarray:
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, -s], [s, c]])


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


def _fields_equal(a, b) -> bool:
    if type(a) is not type(b):
        return False
    for name in a.__dataclass_fields__:
        x, y = getattr(a, name), getattr(b, name)
        if isinstance(x, np.ndarray) or isinstance(y, np.ndarray):
            if x is None or y is None or not np.array_equal(x, y):
                return False
        elif x != y:
            return False
    return True


@dataclass(frozen=True, eq=False)
class CellGrid:
    """An object made of ``k`` square cells welded along shared edges."""

    cell_size: float
    cell_centers: np.ndarray
    adjacency: tuple[tuple[int, int], ...]
    contact_pairs: tuple[tuple[int, int], ...] = ()
    #: integer ``(col, row)`` grid index per cell, when built from a mask
    indices: np.ndarray | None = None

    __eq__ = _fields_equal
    __hash__ = None

    def __post_init__(self):
        centers = _frozen_array(self.cell_centers)
        if centers.ndim != 2 or centers.shape[1] != 2 or len(centers) < 1:
            raise ValueError("cell_centers must have shape (k, 2) with k >= 1")
        object.__setattr__(self, "cell_centers", centers)
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        adjacency = tuple((int(i), int(j)) for i, j in self.adjacency)
        contacts = tuple((int(i), int(j)) for i, j in self.contact_pairs)
        object.__setattr__(self, "adjacency", adjacency)
        object.__setattr__(self, "contact_pairs", contacts)
        if self.indices is not None:
            object.__setattr__(self, "indices", _frozen_array(self.indices, dtype=int))
        k = len(centers)
        for i, j in adjacency + contacts:
            if not (0 <= i < k and 0 <= j < k) or i == j:
                raise ValueError(f"invalid cell pair ({i}, {j})")
        for i, j in adjacency:
            gap = np.linalg.norm(centers[i] - centers[j])
            if abs(gap - self.cell_size) > 1e-9 * self.cell_size:
                raise ValueError(f"adjacent cells ({i}, {j}) are {gap} apart, not cell_size")
        if k > 1:
            rows = [i for i, _ in adjacency]
            cols = [j for _, j in adjacency]
            graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(k, k))
            n_comp, _ = connected_components(graph, directed=False)
            if n_comp != 1:
                raise ValueError("adjacency graph must be connected (one rigid object)")

    @property
    def k(self) -> int:
        return len(self.cell_centers)

    @property
    def centroid(self) -> np.ndarray:
        return self.cell_centers.mean(axis=0)

    @property
    def offsets(self) -> np.ndarray:
        """Cell centers relative to the centroid, body frame."""
        return self.cell_centers - self.centroid

    @classmethod
    def from_mask(cls, mask, cell_size: float) -> "CellGrid":
        """Build a grid from a boolean image; row 0 is the top row.

        Cells are numbered row-major, body frame centered on the centroid
        with +x to the right and +y up.
        """
        mask = np.asarray(mask, dtype=bool)
        rows, cols = np.nonzero(mask)
        n_rows = mask.shape[0]
        centers = np.column_stack([cols, n_rows - 1 - rows]).astype(float) * cell_size
        centers -= centers.mean(axis=0)
        index = {(r, c): i for i, (r, c) in enumerate(zip(rows, cols))}
        adjacency = []
        for (r, c), i in index.items():
            for dr, dc in ((0, 1), (1, 0)):
                j = index.get((r + dr, c + dc))
                if j is not None:
                    adjacency.append((i, j))
        adjacency.sort()
        indices = np.column_stack([cols, n_rows - 1 - rows])
        return cls(cell_size, centers, tuple(adjacency), indices=indices)

    @classmethod
    def rectangle(cls, n_cols: int, n_rows: int, cell_size: float) -> "CellGrid":
        return cls.from_mask(np.ones((n_rows, n_cols), dtype=bool), cell_size)

    def boundary_cells(self) -> np.ndarray:
        """Indices of cells with fewer than four welded neighbours."""
        degree = np.zeros(self.k, dtype=int)
        for i, j in self.adjacency:
            degree[i] += 1
            degree[j] += 1
        return np.flatnonzero(degree < 4)


@dataclass(frozen=True, eq=False)
class ObjectParams:
    """Per-cell masses (kg), inertias (kg m^2) and friction magnitudes (N)."""

    masses: np.ndarray
    inertias: np.ndarray
    frictions: np.ndarray

    __eq__ = _fields_equal
    __hash__ = None

    def __post_init__(self):
        masses = _frozen_array(self.masses)
        inertias = _frozen_array(self.inertias)
        frictions = _frozen_array(self.frictions)
        if not (masses.shape == inertias.shape == frictions.shape) or masses.ndim != 1:
            raise ValueError("masses, inertias and frictions must be 1-D of equal length")
        if np.any(~np.isfinite(masses)) or np.any(masses <= 0):
            raise ValueError("masses must be strictly positive")
        if np.any(~np.isfinite(inertias)) or np.any(inertias <= 0):
            raise ValueError("inertias must be strictly positive")
        if np.any(~np.isfinite(frictions)) or np.any(frictions < 0):
            raise ValueError("frictions must be non-negative")
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "inertias", inertias)
        object.__setattr__(self, "frictions", frictions)

    @property
    def k(self) -> int:
        return len(self.masses)

    @classmethod
    def from_masses(cls, masses, frictions, cell_size: float) -> "ObjectParams":
        """Inertias of uniform square cells, ``I = m * a**2 / 6``."""
        masses = np.asarray(masses, dtype=float)
        return cls(masses, masses * cell_size**2 / 6.0, frictions)

    @classmethod
    def uniform(cls, k: int, mass: float, friction: float, cell_size: float) -> "ObjectParams":
        return cls.from_masses(np.full(k, mass), np.full(k, friction), cell_size)

    def mass_diagonal(self) -> np.ndarray:
        """The diagonal ``[I_1, M_1, M_1, ..., I_k, M_k, M_k]``."""
        return np.column_stack([self.inertias, self.masses, self.masses]).ravel()

    def mass_matrix(self) -> np.ndarray:
        return np.diag(self.mass_diagonal())

    def mass_friction(self) -> np.ndarray:
        return self.masses * self.frictions

    def check_grid(self, grid: CellGrid) -> None:
        if self.k != grid.k:
            raise ValueError(f"params have {self.k} cells, grid has {grid.k}")


@dataclass(frozen=True, eq=False)
class State:
    """World poses ``(x, y, phi)`` of every cell."""

    poses: np.ndarray

    __eq__ = _fields_equal
    __hash__ = None

    def __post_init__(self):
        poses = np.array(self.poses, dtype=float)
        if poses.ndim != 2 or poses.shape[1] != 3:
            raise ValueError("poses must have shape (k, 3)")
        poses[:, 2] = wrap_angle(poses[:, 2])
        poses.setflags(write=False)
        object.__setattr__(self, "poses", poses)

    @property
    def k(self) -> int:
        return len(self.poses)

    @property
    def positions(self) -> np.ndarray:
        return self.poses[:, :2]

    @classmethod
    def from_body_pose(cls, grid: CellGrid, x: float, y: float, phi: float) -> "State":
        """Place the grid with its centroid at ``(x, y)`` and heading ``phi``."""
        pos = np.array([x, y]) + grid.offsets @ rotation(phi).T
        return cls(np.column_stack([pos, np.full(grid.k, phi)]))

    def body_pose(self) -> np.ndarray:
        """Centroid position and circular-mean heading."""
        phi = np.arctan2(np.sin(self.poses[:, 2]).mean(), np.cos(self.poses[:, 2]).mean())
        cx, cy = self.positions.mean(axis=0)
        return np.array([cx, cy, phi])

    def rigidity_error(self, grid: CellGrid) -> float:
        """Largest deviation of pairwise cell distances from the body frame."""
        pos = self.positions
        world = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
        body = np.linalg.norm(grid.cell_centers[:, None] - grid.cell_centers[None], axis=-1)
        return float(np.abs(world - body).max())


@dataclass(frozen=True, eq=False)
class Velocity:
    """Per-cell twists ``(omega, vx, vy)``, linear part in body axes."""

    twists: np.ndarray

    __eq__ = _fields_equal
    __hash__ = None

    def __post_init__(self):
        twists = _frozen_array(self.twists)
        if twists.ndim != 2 or twists.shape[1] != 3:
            raise ValueError("twists must have shape (k, 3)")
        object.__setattr__(self, "twists", twists)

    @classmethod
    def zeros(cls, k: int) -> "Velocity":
        return cls(np.zeros((k, 3)))

    @classmethod
    def from_body_twist(cls, grid: CellGrid, twist) -> "Velocity":
        """Cell twists of a rigid motion; ``twist`` is taken about the centroid."""
        omega, vx, vy = twist
        r = grid.offsets
        lin = np.column_stack([vx - omega * r[:, 1], vy + omega * r[:, 0]])
        return cls(np.column_stack([np.full(grid.k, omega), lin]))

    def vector(self) -> np.ndarray:
        return self.twists.ravel()

    def kinetic_energy(self, params: ObjectParams) -> float:
        v = self.vector()
        return 0.5 * float(v @ (params.mass_diagonal() * v))


@dataclass(frozen=True)
class PushAction:
    """A constant push held for ``duration`` steps.

    ``contact_point`` is the offset of the contact from the center of
    ``contact_cell`` and ``direction`` the unit push direction, both in body
    axes.  A zero ``force_magnitude`` is allowed and models coasting.
    """

    contact_cell: int
    contact_point: np.ndarray
    direction: np.ndarray
    force_magnitude: float
    duration: int

    def __post_init__(self):
        object.__setattr__(self, "contact_cell", int(self.contact_cell))
        object.__setattr__(self, "contact_point", _frozen_array(self.contact_point))
        object.__setattr__(self, "direction", _frozen_array(self.direction))
        object.__setattr__(self, "force_magnitude", float(self.force_magnitude))
        object.__setattr__(self, "duration", int(self.duration))
        if self.contact_point.shape != (2,) or self.direction.shape != (2,):
            raise ValueError("contact_point and direction must be planar vectors")
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-9:
            raise ValueError("direction must have unit norm")
        if not np.isfinite(self.force_magnitude) or self.force_magnitude < 0:
            raise ValueError("force_magnitude must be non-negative")
        if self.duration < 0:
            raise ValueError("duration must be non-negative")
        if self.contact_cell < 0:
            raise ValueError("contact_cell must be non-negative")

    def check_grid(self, k: int) -> None:
        if self.contact_cell >= k:
            raise ValueError(f"contact_cell {self.contact_cell} out of range for {k} cells")

    def __eq__(self, other):
        if not isinstance(other, PushAction):
            return NotImplemented
        return (
            self.contact_cell == other.contact_cell
            and np.array_equal(self.contact_point, other.contact_point)
            and np.array_equal(self.direction, other.direction)
            and self.force_magnitude == other.force_magnitude
            and self.duration == other.duration
        )

    def __hash__(self):
        return hash((self.contact_cell, self.contact_point.tobytes(), self.direction.tobytes(),
                     self.force_magnitude, self.duration))


@dataclass(frozen=True)
class Trajectory:
    """``T + 1`` observed states and the ``T`` per-step actions between them."""

    states: np.ndarray
    actions: tuple[PushAction, ...]
    dt: float
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        states = np.array(self.states, dtype=float)
        if states.ndim != 3 or states.shape[2] != 3:
            raise ValueError("states must have shape (T + 1, k, 3)")
        states.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "actions", tuple(self.actions))
        if len(states) != len(self.actions) + 1:
            raise ValueError("need exactly one more state than actions")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def T(self) -> int:
        return len(self.actions)

    @property
    def k(self) -> int:
        return self.states.shape[1]

    def state(self, t: int) -> State:
        return State(self.states[t])

    @property
    def final(self) -> State:
        return State(self.states[-1])

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (self.dt == other.dt and self.actions == other.actions
                and np.array_equal(self.states, other.states))

    __hash__ = None


def generalized_force(action: PushAction, k: int) -> np.ndarray:
    """Stacked ``(torque, fx, fy)`` per cell; only the pushed cell is loaded."""
    action.check_grid(k)
    force = action.force_magnitude * action.direction
    r = action.contact_point
    out = np.zeros(3 * k)
    i = 3 * action.contact_cell
    out[i] = r[0] * force[1] - r[1] * force[0]
    out[i + 1: i + 3] = force
    return out


def pose_error(predicted: State, observed: State) -> float:
    """Mean Euclidean distance between corresponding cell centers."""
    if predicted.k != observed.k:
        raise ValueError(f"state sizes differ: {predicted.k} vs {observed.k}")
    return float(np.linalg.norm(predicted.positions - observed.positions, axis=1).mean())
