"""Mass and friction identification from observed pushes.

The loss compares observed cell positions with one-step predictions made
from the observed previous state (teacher forcing).  Gradients come from
differentiating one step of the contact dynamics on its active set: sliding
cells carry friction at their limit, sticking cells and active pusher rows
constrain the response, so a parameter change moves the next twist only
within the directions those constraints leave free.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import dynamics
from .model import CellGrid, ObjectParams, State, Trajectory, pose_error, rotation

FRICTION_BOUNDS = (1e-6, 10.0)
MASS_BOUNDS = (0.001, 10.0)
GRAVITY = 9.81
#: residual norm (m) treated as an exact match
_NEGLIGIBLE = 1e-12
MODES = ("rigid", "impulse", "cellwise")


class IdentificationDiverged(RuntimeError):
    """The loss grew past the divergence guard; ``report`` holds the partial run."""

    def __init__(self, message: str, report: "IdentReport"):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class IdentConfig:
    learning_rate: float = 0.5
    loss_threshold: float = 1e-6
    max_epochs: int = 500
    param_floor: float = 1e-6
    seed: int = 0
    identify_mass: bool = False
    #: rate constant of the mass channel relative to the friction channel
    mass_rate_scale: float = 1.0
    #: sensitivity used by the descent loop, see `grad_analytic`
    mode: str = "rigid"
    friction_bounds: tuple[float, float] = FRICTION_BOUNDS
    mass_bounds: tuple[float, float] = MASS_BOUNDS
    #: weighed object mass, shared evenly by the cells at initialization
    total_mass: float = 1.0
    #: initial friction is coef * cell mass * g with coef drawn per cell
    init_friction_coef: tuple[float, float] = (0.05, 0.5)
    #: loss growth factor that aborts the run
    divergence_factor: float = 10.0
    #: held-out error is evaluated every this many simulations (0: only at the end)
    eval_every: int = 10
    solver_tol: float = 1e-8
    solver_max_iter: int = 2000

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not self.loss_threshold >= 0:
            raise ValueError("loss_threshold must be non-negative")
        if not self.param_floor > 0:
            raise ValueError("param_floor must be positive")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be at least 1")
        if not self.total_mass > 0:
            raise ValueError("total_mass must be positive")
        for name in ("friction_bounds", "mass_bounds", "init_friction_coef"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi:
                raise ValueError(f"{name} must satisfy 0 <= low <= high")

    def friction_box(self) -> tuple[float, float]:
        lo, hi = self.friction_bounds
        return max(lo, self.param_floor), hi

    def mass_box(self) -> tuple[float, float]:
        lo, hi = self.mass_bounds
        return max(lo, self.param_floor), hi


@dataclass(frozen=True, eq=False)
class Checkpoint:
    epoch: int
    sim_count: int
    wall_time: float
    loss: float
    test_error: float | None


@dataclass(eq=False)
class IdentReport:
    method: str
    final_params: ObjectParams
    loss_history: list[float]
    sim_count: int
    wall_time: float
    test_error: float | None = None
    #: simulations spent after each recorded epoch/sample
    sim_history: list[int] = field(default_factory=list)
    checkpoints: list[Checkpoint] = field(default_factory=list)
    diverged: bool = False

    @property
    def epochs(self) -> int:
        return len(self.loss_history)

    def __eq__(self, other):
        # wall-clock fields are excluded: runs are compared on what they computed
        if not isinstance(other, IdentReport):
            return NotImplemented
        return (self.method == other.method and self.final_params == other.final_params
                and self.loss_history == other.loss_history and self.sim_count == other.sim_count
                and self.test_error == other.test_error and self.sim_history == other.sim_history
                and [(c.epoch, c.sim_count, c.loss, c.test_error) for c in self.checkpoints]
                == [(c.epoch, c.sim_count, c.loss, c.test_error) for c in other.checkpoints]
                and self.diverged == other.diverged)

    __hash__ = None


# -- one-step prediction -----------------------------------------------------

class _Observed:
    """Poses, twists and positions of a trajectory plus per-action contact data."""

    def __init__(self, grid: CellGrid, traj: Trajectory):
        if traj.k != grid.k:
            raise ValueError(f"trajectory has {traj.k} cells, grid has {grid.k}")
        self.dt = traj.dt
        self.poses, self.twists = dynamics.observed_motion(traj)
        self.positions = traj.states[:, :, :2]
        B = dynamics.rigid_basis(grid)
        cache = {}
        self.step_data = []
        for a in traj.actions:
            if a not in cache:
                a.check_grid(grid.k)
                active = a if a.force_magnitude > 0 else None
                C = np.ascontiguousarray(dynamics.contact_jacobian(grid, None, active) @ B)
                wrench = B.T @ dynamics.generalized_force(a, grid.k)
                cache[a] = (C, np.zeros(len(C)), wrench)
            self.step_data.append(cache[a])
        self.T = traj.T


def _observe(grid, training) -> list[_Observed]:
    training = list(training)
    if not training:
        raise ValueError("training set is empty")
    return [_Observed(grid, t) for t in training]


class _Predictor:
    """Reduced dynamics for a fixed grid with parameters that may change per step."""

    def __init__(self, grid: CellGrid, tol: float, max_iter: int):
        self.grid = grid
        self.G = dynamics.cell_linear_maps(grid)
        self.offsets = grid.offsets
        self.rot_inertia = grid.cell_size**2 / 6.0
        self.tol = tol
        self.max_iter = max_iter

    def set_params(self, masses, frictions, dt):
        self.masses = masses
        self.Mr = dynamics.body_mass_matrix(self.grid, masses, masses * self.rot_inertia)
        self.Minv = np.linalg.inv(self.Mr)
        self.h = dt * frictions
        self.dt = dt

    def predict(self, obs: _Observed, t: int, f, lam):
        """Next twist and predicted cell positions at ``t + 1``."""
        C, c0, wrench = obs.step_data[t]
        V_t = obs.twists[t]
        p = self.Mr @ V_t + self.dt * wrench
        V = dynamics.solve_reduced(self.Minv, self.Mr, self.G, self.h, C, c0, p, f, lam,
                                   self.tol, self.max_iter)
        x, y, phi = obs.poses[t]
        dt = self.dt
        new_phi = phi + V[0] * dt
        center = np.array([x, y]) + rotation(phi) @ V[1:] * dt
        P = center + self.offsets @ rotation(new_phi).T
        return V, P

    def constrained_inverse(self, obs, t, V, f, lam):
        """``Minv`` restricted to the directions free under the active constraints."""
        C = obs.step_data[t][0]
        u = np.einsum("kij,j->ki", self.G, V)
        speed = np.abs(u).sum(axis=1)
        scale = max(1e-12, float(np.abs(V[1:]).max() + np.abs(V[0]) * np.abs(self.offsets).max()))
        stick = speed <= max(1e-10, 1e-9 * scale)
        rows = []
        for j in np.flatnonzero(stick):
            rows.extend(self.G[j])
        for j in np.flatnonzero(~stick):
            fx, fy = f[j]
            if self.h[j] > 0 and min(abs(fx), abs(fy)) > 1e-9 * self.h[j]:
                rows.append(-np.sign(fx) * self.G[j, 0] + np.sign(fy) * self.G[j, 1])
        rows.extend(C[lam > 0])
        Minv = self.Minv
        if not rows:
            return Minv, stick
        A = np.array(rows)
        AM = A @ Minv
        return Minv - AM.T @ np.linalg.pinv(AM @ A.T, rcond=1e-10) @ AM, stick

    def sensitivities(self, obs, t, V, P, weight, f, lam, mode="rigid", reading="friction",
                      with_norms=False):
        """Per-cell derivatives of ``weight . P(t+1)`` w.r.t. friction and mass.

        ``weight`` is the ``(k, 2)`` residual (or normalized residual).  With
        ``with_norms`` the squared Frobenius norms of the two position
        Jacobians are returned as well.
        """
        dt = self.dt
        phi = obs.poses[t, 2]
        k = len(weight)
        with np.errstate(invalid="ignore", divide="ignore"):
            d = np.where(self.h[:, None] > 0, f / self.h[:, None], 0.0)
        if mode == "cellwise":
            # each cell's residual against its own friction acceleration
            slide = np.abs(d).sum(axis=1) >= 1 - 1e-9
            world = d @ rotation(phi).T
            gmu = np.where(slide, dt * dt * np.einsum("ki,ki->k", weight, world) / self.masses, 0.0)
            norm = float(np.sum(np.where(slide, dt * dt / self.masses, 0.0) ** 2))
            out = gmu, np.zeros(k)
            return out + (norm, 0.0) if with_norms else out
        # position Jacobian of each cell w.r.t. the new twist
        S = np.empty((k, 2, 3))
        Rn = rotation(phi + V[0] * dt)
        S[:, :, 0] = dt * self.offsets @ np.array([[0.0, 1.0], [-1.0, 0.0]]) @ Rn.T
        S[:, :, 1:] = dt * rotation(phi)
        rt = np.einsum("kic,ki->c", S, weight)
        if mode == "impulse":
            # every cell's impulse scales with its friction; no regime constraints
            P_inv, slide = self.Minv, np.ones(k, dtype=bool)
        else:
            P_inv, stick = self.constrained_inverse(obs, t, V, f, lam)
            slide = ~stick
        if reading == "contact":
            C = obs.step_data[t][0]
            Bmu = np.where(slide[:, None], C.T @ lam, 0.0)
        else:
            Bmu = np.where(slide[:, None], dt * np.einsum("kic,ki->kc", self.G, d), 0.0)
        dV = obs.twists[t] - V
        Bm = np.einsum("kic,ki->kc", self.G, np.einsum("kic,c->ki", self.G, dV))
        Bm[:, 0] += self.rot_inertia * dV[0]
        w = P_inv @ rt
        gmu = Bmu @ w
        gm = Bm @ w
        if not with_norms:
            return gmu, gm
        H = P_inv @ np.einsum("kic,kid->cd", S, S) @ P_inv
        return (gmu, gm, float(np.einsum("kc,cd,kd->", Bmu, H, Bmu)),
                float(np.einsum("kc,cd,kd->", Bm, H, Bm)))


def _as_arrays(params: ObjectParams):
    return np.array(params.masses, dtype=float), np.array(params.frictions, dtype=float)


def _check_training(grid, params, training):
    params.check_grid(grid)
    return _observe(grid, training)


def loss(params: ObjectParams, training, grid: CellGrid, *, tol: float = 1e-8,
         max_iter: int = 2000) -> float:
    """Sum over steps of the distance between observed and predicted cell positions.

    Each step predicts the next observation from the observed current pose and
    the twist that produced it.  The distance is the Euclidean norm of the
    stacked ``2k`` cell-position residual.
    """
    observed = _check_training(grid, params, training)
    return _loss_observed(grid, params, observed, tol, max_iter)


def _loss_observed(grid, params, observed, tol=1e-8, max_iter=2000) -> float:
    if not np.allclose(params.inertias, params.masses * grid.cell_size**2 / 6.0, rtol=1e-12):
        return _loss_general(grid, params, observed, tol, max_iter)
    pred = _Predictor(grid, tol, max_iter)
    masses, frictions = _as_arrays(params)
    total = 0.0
    for obs in observed:
        pred.set_params(masses, frictions, obs.dt)
        f = np.zeros((grid.k, 2))
        for t in range(obs.T):
            lam = np.zeros(len(obs.step_data[t][0]))
            _, P = pred.predict(obs, t, f, lam)
            total += float(np.linalg.norm(P - obs.positions[t + 1]))
    return total


def _loss_general(grid, params, observed, tol, max_iter) -> float:
    # arbitrary inertias: same computation with the given inertia vector
    pred = _Predictor(grid, tol, max_iter)
    total = 0.0
    for obs in observed:
        pred.set_params(params.masses, params.frictions, obs.dt)
        pred.Mr = dynamics.body_mass_matrix(grid, params.masses, params.inertias)
        pred.Minv = np.linalg.inv(pred.Mr)
        f = np.zeros((grid.k, 2))
        for t in range(obs.T):
            lam = np.zeros(len(obs.step_data[t][0]))
            _, P = pred.predict(obs, t, f, lam)
            total += float(np.linalg.norm(P - obs.positions[t + 1]))
    return total


def grad_analytic(params: ObjectParams, training, grid: CellGrid, *, form: str = "norm",
                  mode: str = "rigid", reading: str = "friction", tol: float = 1e-8,
                  max_iter: int = 2000):
    """``(grad_mu_f, grad_mass)`` of the loss at fixed parameters.

    ``form="norm"`` differentiates the loss itself; ``form="residual"``
    differentiates half the squared residuals, the signal the descent loop
    applies.  ``mode="cellwise"`` projects each cell's residual onto its own
    friction direction, ignoring the rigid coupling.  ``reading="contact"``
    swaps the friction impulse for the pusher impulse as the friction
    sensitivity, for comparison against finite differences.
    """
    if form not in ("norm", "residual"):
        raise ValueError("form must be 'norm' or 'residual'")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if reading not in ("friction", "contact"):
        raise ValueError("reading must be 'friction' or 'contact'")
    observed = _check_training(grid, params, training)
    pred = _Predictor(grid, tol, max_iter)
    masses, frictions = _as_arrays(params)
    gmu = np.zeros(grid.k)
    gm = np.zeros(grid.k)
    for obs in observed:
        pred.set_params(masses, frictions, obs.dt)
        f = np.zeros((grid.k, 2))
        for t in range(obs.T):
            lam = np.zeros(len(obs.step_data[t][0]))
            V, P = pred.predict(obs, t, f, lam)
            r = P - obs.positions[t + 1]
            if form == "norm":
                norm = np.linalg.norm(r)
                if norm <= _NEGLIGIBLE:
                    # rounding-level residual: the loss is flat here
                    continue
                r = r / norm
            a, b = pred.sensitivities(obs, t, V, P, r, f, lam, mode, reading)
            gmu += a
            gm += b
    return gmu, gm


def grad_finite_diff(params: ObjectParams, training, grid: CellGrid, h: float = 1e-4,
                     identify_mass: bool = True, tol: float = 1e-10):
    """Central-difference ``(grad_mu_f, grad_mass)``; inertias follow masses."""
    observed = _check_training(grid, params, training)
    masses, frictions = _as_arrays(params)
    cs = grid.cell_size

    def at(m, mu):
        return _loss_observed(grid, ObjectParams.from_masses(m, mu, cs), observed, tol)

    gmu = np.zeros(grid.k)
    gm = np.zeros(grid.k)
    for j in range(grid.k):
        e = np.zeros(grid.k)
        e[j] = h
        gmu[j] = (at(masses, frictions + e) - at(masses, frictions - e)) / (2 * h)
        if identify_mass:
            gm[j] = (at(masses + e, frictions) - at(masses - e, frictions)) / (2 * h)
    return gmu, gm


def regime_summary(params: ObjectParams, training, grid: CellGrid, margin: float = 1e-2,
                   tol: float = 1e-8, max_iter: int = 2000) -> dict:
    """Friction regimes met by the one-step predictions, for boundary diagnosis.

    A step is ``stalled`` when every cell sticks.  It is ``near_boundary``
    when some cell is within ``margin`` of switching: a sliding cell slower
    than ``margin`` times the body speed, or a sticking cell whose impulse
    uses more than ``1 - margin`` of its limit.
    """
    observed = _check_training(grid, params, training)
    pred = _Predictor(grid, tol, max_iter)
    masses, frictions = _as_arrays(params)
    out = {"steps": 0, "stalled": 0, "near_boundary": 0, "sliding_cells": 0, "sticking_cells": 0}
    for obs in observed:
        pred.set_params(masses, frictions, obs.dt)
        f = np.zeros((grid.k, 2))
        for t in range(obs.T):
            lam = np.zeros(len(obs.step_data[t][0]))
            V, _ = pred.predict(obs, t, f, lam)
            _, stick = pred.constrained_inverse(obs, t, V, f, lam)
            speed = np.abs(np.einsum("kij,j->ki", pred.G, V)).sum(axis=1)
            body = float(np.abs(V[1:]).max() + np.abs(V[0]) * np.abs(pred.offsets).max())
            with np.errstate(invalid="ignore", divide="ignore"):
                used = np.where(pred.h > 0, np.abs(f).sum(axis=1) / pred.h, 0.0)
            near = np.any(~stick & (speed <= margin * body)) or np.any(stick & (used >= 1 - margin))
            out["steps"] += 1
            out["stalled"] += int(stick.all())
            out["near_boundary"] += int(bool(near))
            out["sliding_cells"] += int((~stick).sum())
            out["sticking_cells"] += int(stick.sum())
    return out


# -- held-out error -----------------------------------------------------------

def rollout_error(params: ObjectParams, trajectories, grid: CellGrid, *, tol: float = 1e-8,
                  max_iter: int = 2000) -> float:
    """Mean final-state cell-position error of open-loop rollouts of the observed pushes."""
    from .scen import split_actions

    errors = []
    for traj in trajectories:
        if traj.k != grid.k:
            raise ValueError(f"trajectory has {traj.k} cells, grid has {grid.k}")
        sim = dynamics.rollout(grid, params, traj.state(0), split_actions(traj), traj.dt,
                               tol=tol, max_iter=max_iter)
        errors.append(pose_error(sim.final, traj.final))
    if not errors:
        raise ValueError("no trajectories to evaluate")
    return float(np.mean(errors))


# -- identifiers ---------------------------------------------------------------

def initial_params(grid: CellGrid, config: IdentConfig) -> ObjectParams:
    """Even mass split of the weighed mass and a random friction per cell."""
    rng = np.random.default_rng(config.seed)
    m_lo, m_hi = config.mass_box()
    masses = np.clip(np.full(grid.k, config.total_mass / grid.k), m_lo, m_hi)
    coef = rng.uniform(*config.init_friction_coef, size=grid.k)
    lo, hi = config.friction_box()
    frictions = np.clip(coef * masses * GRAVITY, lo, hi)
    return ObjectParams.from_masses(masses, frictions, grid.cell_size)


class _Recorder:
    """Loss history, simulation count and held-out checkpoints of one run."""

    def __init__(self, method, grid, config, test):
        self.method = method
        self.grid = grid
        self.config = config
        self.test = list(test) if test is not None else None
        self.start = time.perf_counter()
        self.losses: list[float] = []
        self.sims: list[int] = []
        self.checkpoints: list[Checkpoint] = []
        self.sim_count = 0
        self.last_eval = None

    def record(self, loss_value, sims, params, force_eval=False):
        self.sim_count += sims
        self.losses.append(float(loss_value))
        self.sims.append(self.sim_count)
        every = self.config.eval_every
        due = every > 0 and (self.last_eval is None or self.sim_count - self.last_eval >= every)
        if due or force_eval:
            self.evaluate(params)

    def evaluate(self, params):
        if self.last_eval == self.sim_count and self.checkpoints:
            return
        err = None
        if self.test:
            err = rollout_error(params, self.test, self.grid, tol=self.config.solver_tol,
                                max_iter=self.config.solver_max_iter)
        self.checkpoints.append(Checkpoint(len(self.losses), self.sim_count,
                                           time.perf_counter() - self.start, self.losses[-1], err))
        self.last_eval = self.sim_count

    def report(self, params, diverged=False) -> IdentReport:
        if not diverged:
            self.evaluate(params)
        test_error = self.checkpoints[-1].test_error if self.checkpoints else None
        return IdentReport(self.method, params, list(self.losses), self.sim_count,
                           time.perf_counter() - self.start, test_error, list(self.sims),
                           list(self.checkpoints), diverged)


def _project(masses, frictions, config):
    np.clip(frictions, *config.friction_box(), out=frictions)
    np.clip(masses, *config.mass_box(), out=masses)


def _check_diverged(rec, params, config):
    latest = rec.losses[-1]
    first = rec.losses[0]
    if not math.isfinite(latest) or (first > 0 and latest > config.divergence_factor * first):
        report = rec.report(params, diverged=True)
        raise IdentificationDiverged(
            f"loss grew from {first:.6g} to {latest:.6g} after {len(rec.losses)} epochs", report)


def identify_gradient(grid: CellGrid, training, config: IdentConfig = IdentConfig(), *,
                      initial: ObjectParams | None = None, test=None) -> IdentReport:
    """Per-step simulate, compare and update, repeated until the loss is small.

    Every step's residual updates the friction at ``learning_rate`` and, when
    enabled, the masses at ``sqrt(learning_rate)``.  The friction signal is
    scaled by ``(mean cell mass)^2 / dt^4``, the inverse sensitivity of a cell
    position to a cell friction under pure translation, so the rate is
    dimensionless; the mass signal carries the same scale times
    ``mass_rate_scale``.  One epoch is one pass over the training set and
    counts as one simulation.
    """
    observed = _observe(grid, training)
    params = initial if initial is not None else initial_params(grid, config)
    params.check_grid(grid)
    masses, frictions = _as_arrays(params)
    _project(masses, frictions, config)
    rec = _Recorder("gradient", grid, config, test)
    pred = _Predictor(grid, config.solver_tol, config.solver_max_iter)
    alpha = config.learning_rate
    alpha_m = math.sqrt(alpha) * config.mass_rate_scale
    current = ObjectParams.from_masses(masses, frictions, grid.cell_size)
    # running sums of squared Jacobian norms; steps with a weak Jacobian are
    # normalized by the running mean instead, so they cannot take huge steps
    seen, sum_mu, sum_m = 0, 0.0, 0.0
    for epoch in range(config.max_epochs):
        total = 0.0
        for obs in observed:
            f = np.zeros((grid.k, 2))
            for t in range(obs.T):
                pred.set_params(masses, frictions, obs.dt)
                lam = np.zeros(len(obs.step_data[t][0]))
                V, P = pred.predict(obs, t, f, lam)
                r = P - obs.positions[t + 1]
                total += float(np.linalg.norm(r))
                gmu, gm, nmu, nm = pred.sensitivities(obs, t, V, P, r, f, lam, config.mode,
                                                      with_norms=True)
                seen += 1
                sum_mu += nmu
                sum_m += nm
                nmu = max(nmu, sum_mu / seen)
                nm = max(nm, sum_m / seen)
                if nmu > 0:
                    frictions -= alpha * gmu / nmu
                if config.identify_mass and nm > 0:
                    masses -= alpha_m * gm / nm
                _project(masses, frictions, config)
        current = ObjectParams.from_masses(masses.copy(), frictions.copy(), grid.cell_size)
        rec.record(total, 1, current)
        _check_diverged(rec, current, config)
        if total <= config.loss_threshold:
            break
    return rec.report(current)


def identify_random(grid: CellGrid, training, budget: int, seed: int = 0,
                    config: IdentConfig = IdentConfig(), *, test=None) -> IdentReport:
    """Uniform samples of the parameter box; keeps the best."""
    if budget < 1:
        raise ValueError("budget must be at least one simulation")
    observed = _observe(grid, training)
    rng = np.random.default_rng(seed)
    base_masses, _ = _as_arrays(initial_params(grid, replace(config, seed=seed)))
    rec = _Recorder("random", grid, config, test)
    best, best_loss = None, math.inf
    for _ in range(budget):
        frictions = rng.uniform(*config.friction_box(), size=grid.k)
        masses = rng.uniform(*config.mass_box(), size=grid.k) if config.identify_mass else base_masses
        cand = ObjectParams.from_masses(masses, frictions, grid.cell_size)
        value = _loss_observed(grid, cand, observed, config.solver_tol, config.solver_max_iter)
        if value < best_loss:
            best, best_loss = cand, value
        rec.record(best_loss, 1, best)
    return rec.report(best)


def identify_weighted(grid: CellGrid, training, budget: int, seed: int = 0,
                      config: IdentConfig = IdentConfig(), *, sigma0: float = 0.2,
                      decay: float = 0.99, test=None) -> IdentReport:
    """Gaussian samples around the incumbent with a shrinking spread.

    ``sigma0`` is relative to the width of the parameter box; the spread at
    iteration ``n`` is ``sigma0 * decay**n``.  Iteration 0 samples uniformly.
    """
    if budget < 1:
        raise ValueError("budget must be at least one simulation")
    if sigma0 < 0 or not 0 < decay <= 1:
        raise ValueError("need sigma0 >= 0 and 0 < decay <= 1")
    observed = _observe(grid, training)
    rng = np.random.default_rng(seed)
    base_masses, _ = _as_arrays(initial_params(grid, replace(config, seed=seed)))
    f_lo, f_hi = config.friction_box()
    m_lo, m_hi = config.mass_box()
    rec = _Recorder("weighted", grid, config, test)
    best, best_loss = None, math.inf
    for n in range(budget):
        if best is None:
            frictions = rng.uniform(f_lo, f_hi, size=grid.k)
            masses = (rng.uniform(m_lo, m_hi, size=grid.k) if config.identify_mass
                      else base_masses)
        else:
            spread = sigma0 * decay**n
            frictions = np.clip(best.frictions + rng.normal(0, spread * (f_hi - f_lo), grid.k),
                                f_lo, f_hi)
            masses = best.masses
            if config.identify_mass:
                masses = np.clip(masses + rng.normal(0, spread * (m_hi - m_lo), grid.k), m_lo, m_hi)
        cand = ObjectParams.from_masses(masses, frictions, grid.cell_size)
        value = _loss_observed(grid, cand, observed, config.solver_tol, config.solver_max_iter)
        if value < best_loss:
            best, best_loss = cand, value
        rec.record(best_loss, 1, best)
    return rec.report(best)


def finite_diff_descent(loss_fn, x0, rates, h, lower, upper, max_epochs, threshold=0.0,
                        max_sims=None, on_epoch=None):
    """Projected descent on central-difference gradients of ``loss_fn``.

    ``rates`` is either a per-coordinate rate (``x -= rates * g``) or a
    callable ``rates(g, loss_estimate)`` returning the update to subtract.
    ``on_epoch(x, loss_estimate, sims)`` is called after each update; the loss
    estimate is the mean of the first central pair, which matches the loss at
    ``x`` to ``O(h^2)`` without an extra evaluation.  Returns ``(x, epochs)``.
    """
    x = np.array(x0, dtype=float)
    if callable(rates):
        step = rates
    else:
        fixed = np.broadcast_to(np.asarray(rates, dtype=float), x.shape)

        def step(g, _):
            return fixed * g
    n = len(x)
    floor = np.broadcast_to(np.asarray(lower, dtype=float), x.shape)
    epochs = 0
    sims = 0
    for _ in range(max_epochs):
        if max_sims is not None and sims + 2 * n > max_sims:
            break
        g = np.zeros(n)
        center = 0.0
        for i in range(n):
            # the stencil slides up rather than leave the box at its lower bound
            lo, hi = x.copy(), x.copy()
            lo[i] = max(x[i] - h, floor[i])
            hi[i] = lo[i] + 2 * h
            up, down = loss_fn(hi), loss_fn(lo)
            g[i] = (up - down) / (2 * h)
            if i == 0:
                center = 0.5 * (up + down)
        sims += 2 * n
        x = np.clip(x - step(g, center), lower, upper)
        epochs += 1
        if on_epoch is not None:
            on_epoch(x, center, 2 * n)
        if center <= threshold:
            break
    return x, epochs


def identify_finite_diff(grid: CellGrid, training, config: IdentConfig = IdentConfig(),
                         h: float = 1e-4, *, initial: ObjectParams | None = None, test=None,
                         budget: int | None = None) -> IdentReport:
    """Descent on central differences of the loss, two simulations per parameter.

    Each epoch takes a Polyak step toward the zero loss of noiseless data,
    ``learning_rate * loss * g / |g|^2``, in coordinates scaled by the initial
    mean friction and mass; masses move at ``sqrt(learning_rate)`` times
    ``mass_rate_scale`` as in `identify_gradient`.  ``budget`` caps the
    simulation count; epochs that would exceed it are not started.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    observed = _observe(grid, training)
    params = initial if initial is not None else initial_params(grid, config)
    params.check_grid(grid)
    k = grid.k
    cs = grid.cell_size
    masses, frictions = _as_arrays(params)
    _project(masses, frictions, config)
    alpha = config.learning_rate
    rec = _Recorder("finitediff", grid, config, test)
    if config.identify_mass:
        x0 = np.concatenate([frictions, masses])
        ref = np.concatenate([np.full(k, frictions.mean()), np.full(k, masses.mean())])
        weight = np.concatenate([np.full(k, alpha),
                                 np.full(k, math.sqrt(alpha) * config.mass_rate_scale)])
        lower = np.concatenate([np.full(k, config.friction_box()[0]), np.full(k, config.mass_box()[0])])
        upper = np.concatenate([np.full(k, config.friction_box()[1]), np.full(k, config.mass_box()[1])])
    else:
        x0 = frictions
        ref = np.full(k, frictions.mean())
        weight = np.full(k, alpha)
        lower, upper = config.friction_box()

    def polyak(g, value):
        gs = g * ref
        norm2 = gs @ gs
        if norm2 <= 0:
            return np.zeros_like(g)
        return weight * value * gs * ref / norm2

    def unpack(x):
        if config.identify_mass:
            return ObjectParams.from_masses(x[k:], x[:k], cs)
        return ObjectParams.from_masses(masses, x, cs)

    def fn(x):
        return _loss_observed(grid, unpack(x), observed, 1e-10, config.solver_max_iter)

    state = {"params": unpack(x0)}

    def on_epoch(x, center, sims):
        state["params"] = unpack(x)
        rec.record(center, sims, state["params"])
        _check_diverged(rec, state["params"], config)

    if budget is not None and budget < 2 * len(x0):
        raise ValueError(f"budget {budget} is below one epoch ({2 * len(x0)} simulations)")
    finite_diff_descent(fn, x0, polyak, h, lower, upper, config.max_epochs,
                        config.loss_threshold, budget, on_epoch)
    return rec.report(state["params"])
