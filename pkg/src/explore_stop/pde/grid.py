"""Space-time grids and the field types living on them."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .._io import write_csv
from ..errors import GridMismatchError, InvalidConfigError


@dataclass(frozen=True, eq=False)
class SpaceTimeGrid:
    """Uniform grid in log-price ``x_j = log K + j*dx`` (j = -N..N) and time ``t_i = i*dt``."""

    strike: float
    horizon: float
    n_steps: int
    half_nodes: int
    dx: float

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def x(self) -> np.ndarray:
        return math.log(self.strike) + self.dx * np.arange(-self.half_nodes, self.half_nodes + 1)

    @property
    def t(self) -> np.ndarray:
        t = np.arange(self.n_steps + 1) * self.dt
        t[-1] = self.horizon
        return t

    @property
    def n_nodes(self) -> int:
        return 2 * self.half_nodes + 1

    @property
    def center(self) -> int:
        return self.half_nodes

    def payoff(self) -> np.ndarray:
        """Put payoff ``(K - e^x)^+`` at every column."""
        return np.maximum(self.strike - np.exp(self.x), 0.0)

    def same_as(self, other: "SpaceTimeGrid") -> bool:
        return (self.strike, self.horizon, self.n_steps, self.half_nodes, self.dx) == (
            other.strike, other.horizon, other.n_steps, other.half_nodes, other.dx)

    def time_index(self, t: float) -> int:
        """Nearest time slice to ``t``."""
        return int(min(max(round(t / self.dt), 0), self.n_steps))


def build_grid(strike: float, horizon: float, n_steps: int, half_nodes: int,
               x_halfwidth: float) -> SpaceTimeGrid:
    if n_steps < 2 or half_nodes < 2:
        raise InvalidConfigError(f"need n_steps >= 2 and half_nodes >= 2, got {n_steps}, {half_nodes}")
    if not x_halfwidth > 0:
        raise InvalidConfigError(f"x_halfwidth must be > 0, got {x_halfwidth}")
    if not strike > 0:
        raise InvalidConfigError(f"log-price grid needs strike > 0, got {strike}")
    if not horizon > 0:
        raise InvalidConfigError(f"horizon must be > 0, got {horizon}")
    return SpaceTimeGrid(float(strike), float(horizon), int(n_steps), int(half_nodes),
                         x_halfwidth / half_nodes)


def default_halfwidth(sigma: float, horizon: float, s0: float, strike: float) -> float:
    """``4 sigma sqrt(T) + |log(s0/K)|`` rounded up to a multiple of 0.5."""
    w = 4.0 * sigma * math.sqrt(horizon) + abs(math.log(s0 / strike))
    return math.ceil(w * 2.0) / 2.0


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class ValueField:
    """Values ``u[i, j]`` at ``(t_i, x_j)``; ``lam`` is 0 for classical solutions."""

    grid: SpaceTimeGrid
    u: np.ndarray
    lam: float = 0.0
    newton_counts: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "u", _frozen(self.u))
        expect = (self.grid.n_steps + 1, self.grid.n_nodes)
        if self.u.shape != expect:
            raise GridMismatchError(f"field shape {self.u.shape} does not match grid {expect}")

    @property
    def h(self) -> np.ndarray:
        return self.grid.payoff()

    def at(self, s: float, time_index: int = 0) -> float:
        """Linear interpolation in log-price on one time slice."""
        return float(np.interp(math.log(s), self.grid.x, self.u[time_index]))

    def interpolator(self, time_index: int):
        row = self.u[time_index]
        x = self.grid.x
        return lambda s: np.interp(np.log(s), x, row)

    def upper_bound(self) -> np.ndarray:
        """``K + lam (T - t_i)`` per row."""
        return self.grid.strike + self.lam * (self.grid.horizon - self.grid.t)

    def to_csv(self, path, policy: "PolicySurface | None" = None, rows=None) -> None:
        g = self.grid
        x, t, h = g.x, g.t, self.h
        s = np.exp(x)
        idx = range(g.n_steps + 1) if rows is None else rows
        pi = policy.pi if policy is not None else None

        def gen():
            for i in idx:
                for j in range(g.n_nodes):
                    yield (float(t[i]), float(x[j]), float(s[j]), float(self.u[i, j]), float(h[j]),
                           float(pi[i, j]) if pi is not None else "")

        write_csv(path, ["t", "x", "S", "u", "h", "pi"], gen())


@dataclass(frozen=True, eq=False)
class PolicySurface:
    """Nonnegative stopping intensity ``pi[i, j]`` per unit time."""

    grid: SpaceTimeGrid
    pi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pi", _frozen(self.pi))
        if self.pi.shape != (self.grid.n_steps + 1, self.grid.n_nodes):
            raise GridMismatchError("policy shape does not match grid")
        if not np.all(np.isfinite(self.pi)) or np.any(self.pi < 0):
            raise InvalidConfigError("stopping intensity must be finite and nonnegative")

    @classmethod
    def constant(cls, grid: SpaceTimeGrid, value: float) -> "PolicySurface":
        return cls(grid, np.full((grid.n_steps + 1, grid.n_nodes), float(value)))


def sup_distance(a: ValueField, b: ValueField, row: int | None = None) -> float:
    """Max absolute difference over all rows, or over time index ``row``."""
    if not a.grid.same_as(b.grid):
        raise GridMismatchError("value fields live on different grids")
    if row is None:
        return float(np.max(np.abs(a.u - b.u)))
    return float(np.max(np.abs(a.u[row] - b.u[row])))
