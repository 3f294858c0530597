"""Backward-Euler solvers for the exploratory HJB, the penalized obstacle problem
and the plain (European) Black-Scholes equation.

All solvers pin the two end columns to the put payoff and march backward from
the terminal row ``u(., T) = h``.
"""

from __future__ import annotations

import numpy as np

from .._common import E_MAX, soft_intensity
from ..errors import ConvergenceError, InvalidConfigError
from ..model_sim import MarketConfig
from .grid import PolicySurface, SpaceTimeGrid, ValueField
from .operator import TridiagonalOperator, assemble_operator, implicit_step

DEFAULT_TOL = 1e-8
DEFAULT_MAX_NEWTON = 50
DEFAULT_PENALTY = 1e6


def _relative_increment(new, old) -> float:
    return float(np.max(np.abs(new - old)) / max(1.0, np.max(np.abs(old))))


def _newton_slice(op, dt, later, h, linearize, tol, max_newton, i):
    """Generalized Newton iteration for one implicit time step.

    ``linearize(U_prev) -> (reaction, source)`` gives the frozen linear system.
    Starts from the later slice.
    """
    prev = later
    for k in range(1, max_newton + 1):
        reaction, source = linearize(prev)
        cur = implicit_step(op, dt, later, reaction, source, h)
        inc = _relative_increment(cur, prev)
        if inc < tol:
            return cur, k
        prev = cur
    raise ConvergenceError(
        f"Newton iteration did not converge at time index {i} after {max_newton} iterations "
        f"(last relative increment {inc:.3e})", worst_residual=inc, time_index=i)


def solve_exploratory_hjb(cfg: MarketConfig, grid: SpaceTimeGrid, lam: float,
                          tol: float = DEFAULT_TOL, max_newton: int = DEFAULT_MAX_NEWTON,
                          op: TridiagonalOperator | None = None, e_max: float = E_MAX):
    """Solve ``u_t + L_x u + lam exp(-(u - h)/lam) = 0``, ``u(., T) = h``.

    Each time step linearizes the exponential source around the previous
    Newton iterate: with ``e = exp(-(U_prev - h)/lam)`` it solves

        (U - U_later)/dt + A U = lam e + e (U_prev - U).

    Returns
    -------
    (ValueField, PolicySurface)
        The converged field and the intensity ``exp(-(u - h)/lam)``.
    """
    if not lam > 0:
        raise InvalidConfigError(f"temperature must be > 0, got {lam}")
    if not tol > 0:
        raise InvalidConfigError(f"tol must be > 0, got {tol}")
    op = op or assemble_operator(cfg, grid)
    h = grid.payoff()
    dt = grid.dt
    u = np.empty((grid.n_steps + 1, grid.n_nodes))
    u[-1] = h
    counts = []

    def linearize(prev):
        e = soft_intensity(prev - h, lam, e_max)
        return e, lam * e + e * prev

    for i in range(grid.n_steps - 1, -1, -1):
        u[i], k = _newton_slice(op, dt, u[i + 1], h, linearize, tol, max_newton, i)
        counts.append(k)
    field = ValueField(grid, u, lam=lam, newton_counts=tuple(reversed(counts)))
    pi = soft_intensity(field.u - h, lam, e_max)
    return field, PolicySurface(grid, pi)


def solve_classical_vi(cfg: MarketConfig, grid: SpaceTimeGrid, penalty: float = DEFAULT_PENALTY,
                       tol: float = DEFAULT_TOL, max_newton: int = DEFAULT_MAX_NEWTON,
                       op: TridiagonalOperator | None = None) -> ValueField:
    """American put via the penalized equation ``u_t + L_x u + rho (h - u)^+ = 0``."""
    if not penalty > 0:
        raise InvalidConfigError(f"penalty must be > 0, got {penalty}")
    op = op or assemble_operator(cfg, grid)
    h = grid.payoff()
    u = np.empty((grid.n_steps + 1, grid.n_nodes))
    u[-1] = h
    counts = []

    def linearize(prev):
        active = np.where(prev < h, penalty, 0.0)
        return active, active * h

    for i in range(grid.n_steps - 1, -1, -1):
        u[i], k = _newton_slice(op, grid.dt, u[i + 1], h, linearize, tol, max_newton, i)
        counts.append(k)
    return ValueField(grid, u, lam=0.0, newton_counts=tuple(reversed(counts)))


def solve_european(cfg: MarketConfig, grid: SpaceTimeGrid,
                   op: TridiagonalOperator | None = None) -> ValueField:
    """European put: the linear backward equation with no obstacle and no source."""
    op = op or assemble_operator(cfg, grid)
    h = grid.payoff()
    u = np.empty((grid.n_steps + 1, grid.n_nodes))
    u[-1] = h
    zero = np.zeros(grid.n_nodes)
    for i in range(grid.n_steps - 1, -1, -1):
        u[i] = implicit_step(op, grid.dt, u[i + 1], zero, zero, h)
    return ValueField(grid, u, lam=0.0)
