"""Synthetic objects, random pushes, datasets and their JSON files."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, dynamics
from .model import CellGrid, ObjectParams, PushAction, State, Trajectory

SCHEMA = "pushid.dataset"
SCHEMA_VERSION = 1
GRAVITY = 9.81
DEFAULT_CELL_SIZE = 0.02
DEFAULT_K = 80
ARCHETYPES = ("hammer", "ranch", "crimp", "book", "toolbox", "uniform")


class DatasetError(ValueError):
    """Malformed, inconsistent or incompatible dataset file."""


@dataclass(frozen=True, eq=False)
class Scenario:
    grid: CellGrid
    true_params: ObjectParams | None
    archetype: str
    train_actions: tuple[PushAction, ...]
    test_actions: tuple[PushAction, ...]
    dt: float
    seed: int
    #: per-cell region tag, e.g. "head"/"handle", "left"/"right", "contact"/"floating"
    labels: tuple[str, ...] = ()
    #: the object's weighed mass; the one physical quantity assumed known
    total_mass: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "train_actions", tuple(self.train_actions))
        object.__setattr__(self, "test_actions", tuple(self.test_actions))
        object.__setattr__(self, "labels", tuple(self.labels))
        for a in self.train_actions + self.test_actions:
            a.check_grid(self.grid.k)
        if set(self.train_actions) & set(self.test_actions):
            raise ValueError("train and test actions must be disjoint")
        if self.true_params is not None:
            self.true_params.check_grid(self.grid)
        if self.labels and len(self.labels) != self.grid.k:
            raise ValueError("need one label per cell")

    def region(self, label: str) -> np.ndarray:
        return np.array([lab == label for lab in self.labels])


@dataclass(frozen=True, eq=False)
class Dataset:
    scenario: Scenario
    train: tuple[Trajectory, ...]
    test: tuple[Trajectory, ...]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "train", tuple(self.train))
        object.__setattr__(self, "test", tuple(self.test))
        k = self.scenario.grid.k
        for name in ("train", "test"):
            for i, traj in enumerate(getattr(self, name)):
                if traj.k != k:
                    raise DatasetError(f"trajectories.{name}[{i}].states has {traj.k} cells, grid has {k}")

    @property
    def grid(self) -> CellGrid:
        return self.scenario.grid

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return _to_doc(self) == _to_doc(other)

    __hash__ = None


# -- geometry ---------------------------------------------------------------

def _rect_dims(k: int, aspect: float) -> tuple[int, int]:
    pairs = [(k // r, r) for r in range(2, int(math.isqrt(k)) + 1) if k % r == 0]
    if pairs:
        return min(pairs, key=lambda cr: abs(math.log(cr[0] / cr[1] / aspect)))
    rows = max(1, round(math.sqrt(k / aspect)))
    return math.ceil(k / rows), rows


def _rect_mask(k: int, aspect: float) -> np.ndarray:
    cols, rows = _rect_dims(k, aspect)
    flat = np.zeros(cols * rows, dtype=bool)
    flat[:k] = True
    return flat.reshape(rows, cols)


def _head_handle_mask(k: int, handle_width: int) -> tuple[np.ndarray, np.ndarray]:
    """A block head on top of a centered handle; returns (mask, is_head)."""
    h = max(1, round(math.sqrt(k) / 3))
    w = 2 * h + 1
    hw = min(handle_width, w)
    n_handle = k - w * h
    if n_handle < 1:
        raise ValueError(f"k={k} too small for a head-and-handle shape")
    length = math.ceil(n_handle / hw)
    mask = np.zeros((h + length, w), dtype=bool)
    head = np.zeros_like(mask)
    mask[:h] = True
    head[:h] = True
    left = (w - hw) // 2
    remaining = n_handle
    for r in range(h, h + length):
        n = min(hw, remaining)
        mask[r, left:left + n] = True
        remaining -= n
    return mask, head


def _wrench_mask(k: int) -> tuple[np.ndarray, np.ndarray]:
    """Two wide ends joined by a one-cell bar; returns (mask, is_end)."""
    he = max(1, round(math.sqrt(k) / 3))
    # below 7 cells the ends shrink to single cells and the wrench becomes a bar
    we = 1 if k < 7 else 3 if k < 60 else 5
    n_bar = k - 2 * we * he
    if n_bar < 1:
        raise ValueError(f"k={k} too small for a wrench shape")
    mask = np.zeros((2 * he + n_bar, we), dtype=bool)
    mask[:he] = True
    mask[-he:] = True
    mask[he:he + n_bar, we // 2] = True
    ends = np.zeros_like(mask)
    ends[:he] = True
    ends[-he:] = True
    return mask, ends


def _masked(mask: np.ndarray, image: np.ndarray) -> np.ndarray:
    # row-major order matches CellGrid.from_mask numbering
    return image[mask]


def make_archetype(name: str, k_target: int = DEFAULT_K, seed: int = 0,
                   cell_size: float = DEFAULT_CELL_SIZE, n_train: int = 4, n_test: int = 12,
                   dt: float = dynamics.DEFAULT_DT) -> Scenario:
    """A synthetic object whose mass and friction follow the archetype's layout.

    Friction magnitudes are ``coefficient * mass * g`` per cell, so heavy
    regions also carry large mass x friction products.
    """
    if name not in ARCHETYPES:
        raise ValueError(f"unknown archetype {name!r}; valid: {', '.join(ARCHETYPES)}")
    if not 4 <= k_target <= 200:
        raise ValueError(f"k_target must be within [4, 200], got {k_target}")
    rng = np.random.default_rng(seed)

    if name in ("hammer", "crimp"):
        mask, head = _head_handle_mask(k_target, 1 if name == "hammer" else 2)
        is_head = _masked(mask, head)
        labels = np.where(is_head, "head", "handle")
        if name == "hammer":
            density = np.where(is_head, rng.uniform(5.0, 8.0), 1.0)
            coef = np.where(is_head, rng.uniform(0.15, 0.25), rng.uniform(0.08, 0.15))
        else:
            density = np.where(is_head, rng.uniform(3.0, 5.0), 1.0)
            coef = np.where(is_head, rng.uniform(0.25, 0.35), rng.uniform(0.15, 0.25))
        total = rng.uniform(0.6, 1.0)
    elif name == "ranch":
        mask, ends = _wrench_mask(k_target)
        is_end = _masked(mask, ends)
        labels = np.where(is_end, "contact", "floating")
        density = np.ones(is_end.shape)
        coef = np.where(is_end, rng.uniform(0.15, 0.25), 0.0)
        total = rng.uniform(0.5, 0.8)
    else:
        mask = _rect_mask(k_target, 1.5 if name != "toolbox" else 2.0)
        grid0 = CellGrid.from_mask(mask, cell_size)
        x = grid0.offsets[:, 0]
        labels = np.where(x < -1e-12, "left", np.where(x > 1e-12, "right", "middle"))
        left = labels == "left"
        if name == "book":
            density = np.where(left, rng.uniform(1.8, 3.0), 1.0)
            coef = np.full(len(x), rng.uniform(0.12, 0.2))
            total = rng.uniform(0.6, 1.0)
        elif name == "toolbox":
            density = np.where(left, rng.uniform(2.5, 4.0), 1.0) * rng.uniform(0.8, 1.2, len(x))
            coef = np.full(len(x), rng.uniform(0.15, 0.25))
            total = rng.uniform(1.0, 1.5)
        else:
            density = np.ones(len(x))
            coef = np.full(len(x), rng.uniform(0.1, 0.2))
            total = rng.uniform(0.6, 1.0)

    grid = CellGrid.from_mask(mask, cell_size)
    masses = total * density / density.sum()
    params = ObjectParams.from_masses(masses, coef * masses * GRAVITY, cell_size)
    actions = [random_push(grid, rng) for _ in range(n_train + n_test)]
    return Scenario(grid, params, name, actions[:n_train], actions[n_train:], dt, seed,
                    tuple(str(lab) for lab in labels), float(masses.sum()))


def random_push(grid: CellGrid, rng: np.random.Generator, force_range=(1.0, 5.0),
                duration_range=(20, 50), max_angle=math.radians(30.0)) -> PushAction:
    """Push an exposed edge of a random boundary cell, roughly inward."""
    centers = grid.cell_centers
    cs = grid.cell_size
    occupied = {tuple(np.round(c / cs).astype(int)) for c in centers}
    cell = int(rng.choice(grid.boundary_cells()))
    key = np.round(centers[cell] / cs).astype(int)
    sides = [np.array(d) for d in ((1, 0), (-1, 0), (0, 1), (0, -1))
             if (key[0] + d[0], key[1] + d[1]) not in occupied]
    outward = sides[int(rng.integers(len(sides)))].astype(float)
    tangent = np.array([-outward[1], outward[0]])
    point = 0.5 * cs * outward + rng.uniform(-0.4, 0.4) * cs * tangent
    angle = rng.uniform(-max_angle, max_angle)
    c, s = math.cos(angle), math.sin(angle)
    inward = -outward
    direction = np.array([c * inward[0] - s * inward[1], s * inward[0] + c * inward[1]])
    direction /= np.linalg.norm(direction)
    return PushAction(cell, point, direction, rng.uniform(*force_range),
                      int(rng.integers(duration_range[0], duration_range[1] + 1)))


def generate_data(scenario: Scenario, initial_pose=(0.0, 0.0, 0.0)) -> Dataset:
    """Roll out the true parameters on every action; one trajectory per push."""
    if scenario.true_params is None:
        raise ValueError("scenario has no ground-truth parameters")
    grid = scenario.grid
    start = State.from_body_pose(grid, *initial_pose)

    def run(actions, kind):
        out = []
        for i, action in enumerate(actions):
            try:
                out.append(dynamics.rollout(grid, scenario.true_params, start, [action], scenario.dt))
            except dynamics.SimulationError as exc:
                raise dynamics.SimulationError(f"{kind} action {i}: {exc}", exc.step_index) from exc
        return out

    provenance = {"generator": f"pushid {__version__}", "seed": scenario.seed}
    return Dataset(scenario, run(scenario.train_actions, "train"),
                   run(scenario.test_actions, "test"), provenance)


# -- serialization ----------------------------------------------------------

def _action_doc(a: PushAction) -> dict:
    return {
        "contact_cell": a.contact_cell,
        "contact_point": a.contact_point.tolist(),
        "direction": a.direction.tolist(),
        "force_magnitude": a.force_magnitude,
        "duration": a.duration,
    }


def _action_from(doc: dict) -> PushAction:
    return PushAction(doc["contact_cell"], doc["contact_point"], doc["direction"],
                      doc["force_magnitude"], doc["duration"])


def _runs(actions) -> list[dict]:
    runs = []
    for a in actions:
        if runs and runs[-1][0] == a:
            runs[-1][1] += 1
        else:
            runs.append([a, 1])
    return [{"action": _action_doc(a), "steps": n} for a, n in runs]


def _params_doc(p: ObjectParams | None):
    if p is None:
        return None
    return {"masses": p.masses.tolist(), "inertias": p.inertias.tolist(),
            "frictions": p.frictions.tolist()}


def params_from_doc(doc: dict) -> ObjectParams:
    return ObjectParams(doc["masses"], doc["inertias"], doc["frictions"])


def _to_doc(ds: Dataset) -> dict:
    sc = ds.scenario
    g = sc.grid
    return {
        "schema": SCHEMA,
        "schema_version": SCHEMA_VERSION,
        "provenance": ds.provenance,
        "scenario": {
            "archetype": sc.archetype,
            "seed": sc.seed,
            "dt": sc.dt,
            "total_mass": sc.total_mass,
            "grid": {
                "cell_size": g.cell_size,
                "cell_centers": g.cell_centers.tolist(),
                "adjacency": [list(p) for p in g.adjacency],
                "contact_pairs": [list(p) for p in g.contact_pairs],
                "indices": None if g.indices is None else g.indices.tolist(),
            },
            "true_params": _params_doc(sc.true_params),
            "labels": list(sc.labels),
            "train_actions": [_action_doc(a) for a in sc.train_actions],
            "test_actions": [_action_doc(a) for a in sc.test_actions],
        },
        "trajectories": {
            name: [{"dt": t.dt, "actions": _runs(t.actions), "states": t.states.tolist()}
                   for t in getattr(ds, name)]
            for name in ("train", "test")
        },
    }


def dumps_dataset(ds: Dataset) -> str:
    # repr-based float formatting round-trips exactly
    return json.dumps(_to_doc(ds), indent=1, sort_keys=True) + "\n"


def save_dataset(ds: Dataset, path) -> None:
    Path(path).write_text(dumps_dataset(ds))


def _require(doc, key, where):
    if not isinstance(doc, dict) or key not in doc:
        raise DatasetError(f"missing field {where}{key}")
    return doc[key]


def loads_dataset(text: str) -> Dataset:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"malformed dataset file: {exc}") from exc
    if _require(doc, "schema", "") != SCHEMA:
        raise DatasetError(f"not a {SCHEMA} document")
    version = _require(doc, "schema_version", "")
    if version != SCHEMA_VERSION:
        raise DatasetError(f"schema_version {version} not supported (expected {SCHEMA_VERSION})")
    try:
        sc = _require(doc, "scenario", "")
        gd = _require(sc, "grid", "scenario.")
        grid = CellGrid(gd["cell_size"], gd["cell_centers"], gd["adjacency"], gd["contact_pairs"],
                        indices=gd.get("indices"))
        params = sc.get("true_params")
        true_params = None if params is None else params_from_doc(params)
        if true_params is not None and true_params.k != grid.k:
            raise DatasetError(f"scenario.true_params has {true_params.k} cells, grid has {grid.k}")
        scenario = Scenario(
            grid, true_params, sc["archetype"],
            [_action_from(a) for a in sc["train_actions"]],
            [_action_from(a) for a in sc["test_actions"]],
            sc["dt"], sc["seed"], tuple(sc.get("labels", ())), sc.get("total_mass"))
        trajs = {}
        for name in ("train", "test"):
            out = []
            for i, td in enumerate(_require(doc, "trajectories", "")[name]):
                states = np.array(td["states"], dtype=float)
                where = f"trajectories.{name}[{i}].states"
                if states.ndim != 3 or states.shape[2] != 3:
                    raise DatasetError(f"{where} must be a (T+1, k, 3) array")
                if states.shape[1] != grid.k:
                    raise DatasetError(f"{where} has {states.shape[1]} cells, grid has {grid.k}")
                actions = [_action_from(r["action"]) for r in td["actions"] for _ in range(r["steps"])]
                out.append(Trajectory(states, actions, td["dt"]))
            trajs[name] = out
    except DatasetError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"invalid dataset: {exc!r}") from exc
    return Dataset(scenario, trajs["train"], trajs["test"], doc.get("provenance", {}))


def load_dataset(path) -> Dataset:
    return loads_dataset(Path(path).read_text())


def split_actions(traj: Trajectory) -> list[PushAction]:
    """Collapse per-step actions back into held pushes with durations."""
    runs = []
    for a in traj.actions:
        if runs and runs[-1][0] == a:
            runs[-1][1] += 1
        else:
            runs.append([a, 1])
    return [PushAction(a.contact_cell, a.contact_point, a.direction, a.force_magnitude, n)
            for a, n in runs]
