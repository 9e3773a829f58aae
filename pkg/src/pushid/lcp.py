"""Assembly and solution of the mixed complementarity problem of one step.

Unknowns are the next cell twists ``v``, joint multipliers ``lambda_e`` and
the complementarity block ``gamma = (lambda_c, lambda_f, eta)``::

    M v - Je^T lambda_e - Jc^T lambda_c - Jf^T lambda_f = M v_t + dt u_t = -q
    Je v = 0
    s = G v + F gamma + m >= 0,  gamma >= 0,  s^T gamma = 0

with ``s = (a, rho, xi)``, ``G = [Jc; Jf; 0]``,
``F = [[0, 0, 0], [0, 0, E], [0, -E^T, 0]]`` and ``m = (c, 0, dt mu_f 1)``.
The last rows bound each cell's total ray impulse by the friction impulse
``dt * mu_f``; ``rho`` rows make the active rays oppose the slip direction.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import null_space

from . import _kernels, dynamics
from .model import CellGrid, ObjectParams, State, Velocity


class LcpConvergenceError(RuntimeError):
    """Raised when no complementary point was reached within ``max_iter``."""

    def __init__(self, message, residuals, solution=None):
        super().__init__(f"{message}; residuals={residuals}")
        self.residuals = residuals
        self.solution = solution


@dataclass(frozen=True, eq=False)
class LcpProblem:
    M: np.ndarray
    Je: np.ndarray
    Jc: np.ndarray
    Jf: np.ndarray
    E: np.ndarray
    mu_f: np.ndarray
    q: np.ndarray
    c: np.ndarray
    dt: float
    #: optional basis of the null space of ``Je``; computed when absent
    basis: np.ndarray | None = None

    def __post_init__(self):
        n = self.M.shape[0]
        k = self.mu_f.shape[0]
        if self.M.shape != (n, n) or n != 3 * k:
            raise ValueError("M must be 3k x 3k")
        if self.Je.shape[1:] != (n,) or self.Jc.shape[1:] != (n,):
            raise ValueError("Je and Jc must have 3k columns")
        if self.Jf.shape != (4 * k, n) or self.E.shape != (4 * k, k):
            raise ValueError("Jf must be 4k x 3k and E 4k x k")
        if self.q.shape != (n,) or self.c.shape != (len(self.Jc),):
            raise ValueError("q must have 3k entries and c one per contact row")
        if self.basis is None:
            basis = null_space(self.Je) if len(self.Je) else np.eye(n)
            object.__setattr__(self, "basis", basis)

    @property
    def k(self) -> int:
        return self.mu_f.shape[0]

    @property
    def A(self) -> np.ndarray:
        return self.Je

    @property
    def G(self) -> np.ndarray:
        return np.vstack([self.Jc, self.Jf, np.zeros((self.k, 3 * self.k))])

    @property
    def F(self) -> np.ndarray:
        nc, k = len(self.Jc), self.k
        n = nc + 5 * k
        F = np.zeros((n, n))
        F[nc:nc + 4 * k, nc + 4 * k:] = self.E
        F[nc + 4 * k:, nc:nc + 4 * k] = -self.E.T
        return F

    @property
    def m(self) -> np.ndarray:
        return np.concatenate([self.c, np.zeros(4 * self.k), self.friction_limit])

    @property
    def friction_limit(self) -> np.ndarray:
        return self.dt * np.diag(self.mu_f)

    @property
    def n_complementarity(self) -> int:
        return len(self.Jc) + 5 * self.k

    def reduced(self):
        """``(Mr, G, C, p)`` in null-space coordinates of ``Je``."""
        B = self.basis
        k = self.k
        Jf = self.Jf
        if not (np.array_equal(Jf[1::4], -Jf[0::4]) and np.array_equal(Jf[3::4], -Jf[2::4])):
            raise ValueError("Jf rows must come in opposite ray pairs per cell")
        if not np.array_equal(self.E, np.kron(np.eye(k), np.ones((4, 1)))):
            raise ValueError("E must be block-diagonal with ones blocks")
        Mr = B.T @ self.M @ B
        G = np.ascontiguousarray(np.stack([Jf[0::4] @ B, Jf[2::4] @ B], axis=1))
        C = np.ascontiguousarray(self.Jc @ B)
        p = B.T @ (-self.q)
        return Mr, G, C, p


@dataclass(frozen=True, eq=False)
class LcpSolution:
    v_next: np.ndarray
    lambda_c: np.ndarray
    lambda_f: np.ndarray
    eta: np.ndarray
    a: np.ndarray
    rho: np.ndarray
    xi: np.ndarray
    iterations: int
    residuals: dict
    problem: LcpProblem = field(repr=False)

    @property
    def s(self) -> np.ndarray:
        return np.concatenate([self.a, self.rho, self.xi])

    @property
    def gamma(self) -> np.ndarray:
        return np.concatenate([self.lambda_c, self.lambda_f, self.eta])

    @property
    def slacks(self):
        return self.a, self.rho, self.xi

    @property
    def friction_impulses(self) -> np.ndarray:
        """Net planar friction impulse per cell, ``(k, 2)``."""
        lf = self.lambda_f.reshape(-1, 4)
        return np.column_stack([lf[:, 0] - lf[:, 1], lf[:, 2] - lf[:, 3]])

    @cached_property
    def lambda_e(self) -> np.ndarray:
        """Joint multipliers (minimum norm when welds are redundant)."""
        pr = self.problem
        if not len(pr.Je):
            return np.zeros(0)
        resid = (pr.M @ self.v_next + pr.q - pr.Jc.T @ self.lambda_c
                 - pr.Jf.T @ self.lambda_f)
        return np.linalg.lstsq(pr.Je.T, resid, rcond=None)[0]


def assemble(grid: CellGrid, params: ObjectParams, state: State, velocity: Velocity,
             force: np.ndarray, dt: float, action=None) -> LcpProblem:
    """Build every block of the step problem; ``action`` supplies the pusher row."""
    params.check_grid(grid)
    if not dt > 0:
        raise ValueError("dt must be positive")
    if np.any(params.masses <= 0) or np.any(params.inertias <= 0):
        raise ValueError("mass matrix is not invertible")
    M = params.mass_matrix()
    Je = dynamics.joint_jacobian(grid, state)
    Jc = dynamics.contact_jacobian(grid, state, action)
    blocks = dynamics.friction_jacobian(grid, params)
    q = -M @ velocity.vector() - dt * np.asarray(force, dtype=float)
    basis = dynamics.rigid_basis(grid)
    return LcpProblem(M, Je, Jc, blocks.Jf, blocks.E, blocks.mu_f, q, np.zeros(len(Jc)), dt,
                      basis=basis)


def _expand(problem: LcpProblem, V, f, lam, sweeps) -> LcpSolution:
    B = problem.basis
    v = B @ V
    k = problem.k
    lambda_f = np.column_stack([np.maximum(f[:, 0], 0), np.maximum(-f[:, 0], 0),
                                np.maximum(f[:, 1], 0), np.maximum(-f[:, 1], 0)]).ravel()
    slip = problem.Jf @ v
    eta = np.maximum(-slip.reshape(k, 4).min(axis=1), 0.0)
    rho = slip + problem.E @ eta
    xi = problem.friction_limit - problem.E.T @ lambda_f
    a = problem.Jc @ v + problem.c
    s = np.concatenate([a, rho, xi])
    gamma = np.concatenate([lam, lambda_f, eta])
    residuals = {
        "complementarity": float(s @ gamma),
        "min_pair": float(np.minimum(s, gamma).max()) if len(s) else 0.0,
        "infeasibility": float(max(0.0, -s.min(), -gamma.min())) if len(s) else 0.0,
        "equality": float(np.abs(problem.Je @ v).max()) if len(problem.Je) else 0.0,
    }
    return LcpSolution(v, lam.copy(), lambda_f, eta, a, rho, xi, int(sweeps), residuals, problem)


def solve(problem: LcpProblem, tol: float = 1e-8, max_iter: int = 2000,
          warm_start: LcpSolution | None = None) -> LcpSolution:
    """Projected Gauss-Seidel on the reduced problem, then an exact finish.

    Joint rows are eliminated by working in a basis of their null space, so
    ``Je v = 0`` holds to rounding.  Raises `LcpConvergenceError` when the
    complementarity residual stays above ``tol``.
    """
    Mr, G, C, p = problem.reduced()
    Minv = np.linalg.inv(Mr)
    h = np.ascontiguousarray(problem.friction_limit)
    c0 = np.ascontiguousarray(problem.c, dtype=float)
    k = problem.k
    f = np.zeros((k, 2))
    lam = np.zeros(len(C))
    if warm_start is not None and warm_start.problem.k == k and len(warm_start.lambda_c) == len(C):
        f[:] = warm_start.friction_impulses
        lam[:] = warm_start.lambda_c
        f *= np.minimum(1.0, h / np.maximum(np.abs(f).sum(axis=1), 1e-300))[:, None]
    V, sweeps, total, worst, infeas = _kernels.pgs(Minv, G, h, C, c0, p, f, lam,
                                                    max(tol, 1e-6), max_iter)
    found = dynamics.exact_point(Minv, Mr, G, h, C, c0, p, f, lam, V, tol)
    if found is not None:
        return _expand(problem, *found, sweeps)
    V, more, total, worst, infeas = _kernels.pgs(Minv, G, h, C, c0, p, f, lam, tol,
                                                 max(max_iter - sweeps, 0))
    solution = _expand(problem, V, f, lam, sweeps + more)
    if max(total, worst, infeas) > tol:
        raise LcpConvergenceError(f"no complementary point within {max_iter} sweeps",
                                  solution.residuals, solution)
    return solution


def enumerate_active_sets(problem: LcpProblem, tol: float = 1e-9) -> list[np.ndarray]:
    """Brute-force oracle: next velocities of every feasible active pattern.

    Tries each split of the complementarity indices into ``gamma_i free,
    s_i = 0`` and ``gamma_i = 0``, solves the linear system by least squares
    and keeps the patterns whose solution is consistent and sign-feasible.
    Exponential in the number of complementarity variables.
    """
    M, Je, q = problem.M, problem.Je, problem.q
    Gm, F, m = problem.G, problem.F, problem.m
    n = M.shape[0]
    ne = len(Je)
    nz = problem.n_complementarity
    found = []
    for pattern in itertools.product((False, True), repeat=nz):
        act = np.flatnonzero(pattern)
        na = len(act)
        # unknowns: v (n), lambda_e (ne), gamma_act (na)
        K = np.zeros((n + ne + na, n + ne + na))
        rhs = np.zeros(n + ne + na)
        K[:n, :n] = M
        K[:n, n:n + ne] = -Je.T
        K[:n, n + ne:] = -Gm[act].T
        rhs[:n] = -q
        K[n:n + ne, :n] = Je
        K[n + ne:, :n] = Gm[act]
        K[n + ne:, n + ne:] = F[np.ix_(act, act)]
        rhs[n + ne:] = -m[act]
        z = np.linalg.lstsq(K, rhs, rcond=None)[0]
        scale = max(1.0, np.abs(rhs).max())
        if np.abs(K @ z - rhs).max() > 1e-9 * scale:
            continue
        v = z[:n]
        gamma = np.zeros(nz)
        gamma[act] = z[n + ne:]
        s = Gm @ v + F @ gamma + m
        if gamma.min() < -tol or s.min() < -tol:
            continue
        found.append(v)
    return found
