"""Grid-level policy iteration: evaluate a frozen intensity, then improve it."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .._common import E_MAX, entropy_reward, soft_intensity
from .._io import write_csv
from ..errors import InvalidConfigError
from ..model_sim import MarketConfig
from .grid import PolicySurface, SpaceTimeGrid, ValueField, sup_distance
from .operator import TridiagonalOperator, assemble_operator, implicit_step


@dataclass
class TraceRecord:
    n: int
    increment: float
    error: float = float("nan")
    newton: int | None = None


@dataclass
class IterationTrace:
    records: list = field(default_factory=list)

    def append(self, rec: TraceRecord) -> None:
        self.records.append(rec)

    @property
    def increments(self) -> np.ndarray:
        return np.array([r.increment for r in self.records])

    @property
    def errors(self) -> np.ndarray:
        return np.array([r.error for r in self.records])

    def to_csv(self, path) -> None:
        write_csv(path, ["n", "increment", "error_vs_reference"],
                  ((r.n, r.increment, r.error) for r in self.records))


def policy_eval_pde(cfg: MarketConfig, grid: SpaceTimeGrid, policy: PolicySurface, lam: float,
                    op: TridiagonalOperator | None = None) -> ValueField:
    """Value of a frozen intensity: the linear equation
    ``u_t + L_x u + (h - u) pi + lam R(pi) = 0``, one implicit solve per step."""
    if not policy.grid.same_as(grid):
        raise InvalidConfigError("policy lives on a different grid")
    op = op or assemble_operator(cfg, grid)
    h = grid.payoff()
    pi = policy.pi
    u = np.empty((grid.n_steps + 1, grid.n_nodes))
    u[-1] = h
    for i in range(grid.n_steps - 1, -1, -1):
        src = h * pi[i] + lam * entropy_reward(pi[i])
        u[i] = implicit_step(op, grid.dt, u[i + 1], pi[i], src, h)
    return ValueField(grid, u, lam=lam)


def policy_improve(u: ValueField, lam: float, e_max: float = E_MAX) -> PolicySurface:
    """``pi = exp(-(u - h)/lam)`` with the exponent clamped to ``[-e_max, e_max]``."""
    if not lam > 0:
        raise InvalidConfigError(f"temperature must be > 0, got {lam}")
    return PolicySurface(u.grid, soft_intensity(u.u - u.h, lam, e_max))


def payoff_field(grid: SpaceTimeGrid) -> ValueField:
    return ValueField(grid, np.broadcast_to(grid.payoff(), (grid.n_steps + 1, grid.n_nodes)))


def policy_iterate(cfg: MarketConfig, grid: SpaceTimeGrid, lam: float, u0: ValueField | None = None,
                   n_iters: int = 50, tol: float = 0.0, reference: ValueField | None = None,
                   e_max: float = E_MAX):
    """Alternate improvement and evaluation starting from ``u0`` (default: the payoff).

    Stops after ``n_iters`` evaluations or once the sup increment drops below
    ``tol``. Trace record ``n`` holds ``||u^n - u^{n-1}||`` and, when a
    reference is given, ``||u^n - reference||``.
    """
    op = assemble_operator(cfg, grid)
    u = u0 if u0 is not None else payoff_field(grid)
    trace = IterationTrace()
    if reference is not None:
        trace.append(TraceRecord(0, float("nan"), sup_distance(u, reference)))
    pi = None
    for n in range(1, n_iters + 1):
        pi = policy_improve(u, lam, e_max)
        new = policy_eval_pde(cfg, grid, pi, lam, op=op)
        inc = sup_distance(new, u)
        err = sup_distance(new, reference) if reference is not None else float("nan")
        trace.append(TraceRecord(n, inc, err))
        u = new
        if inc < tol:
            break
    if pi is None:
        pi = policy_improve(u, lam, e_max)
    return u, pi, trace


def threshold_value_pde(cfg: MarketConfig, grid: SpaceTimeGrid, u: ValueField, tol: float = 1e-8,
                        op: TridiagonalOperator | None = None) -> ValueField:
    """Value of the deployable rule "stop once ``u <= h + tol``" with pure payoff.

    Backward implicit steps of the discounted pricing equation, projected onto the
    payoff on the stop set of each slice. With ``u`` the classical solution this
    reproduces it; with ``u^lam`` it prices the threshold strategy.
    """
    if not u.grid.same_as(grid):
        raise InvalidConfigError("value field lives on a different grid")
    op = op or assemble_operator(cfg, grid)
    h = grid.payoff()
    zero = np.zeros(grid.n_nodes)
    w = np.empty((grid.n_steps + 1, grid.n_nodes))
    w[-1] = h
    for i in range(grid.n_steps - 1, -1, -1):
        cont = implicit_step(op, grid.dt, w[i + 1], zero, zero, h)
        w[i] = np.where(u.u[i] - h <= tol, h, cont)
    return ValueField(grid, w, lam=0.0)
