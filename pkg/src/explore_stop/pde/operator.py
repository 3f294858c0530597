"""Finite-difference discretization of ``-L_x`` and tridiagonal solves.

``L_x = 1/2 sigma^2 d_xx + (r - 1/2 sigma^2) d_x - r`` is the Black-Scholes
generator in log-price.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, solve_banded

from ..errors import InvalidConfigError, SingularSystemError
from ..model_sim import MarketConfig
from .grid import SpaceTimeGrid


@dataclass(frozen=True, eq=False)
class TridiagonalOperator:
    """Rows of ``A = -L_x``; ``sub[j]`` multiplies ``u[j-1]``, ``sup[j]`` multiplies ``u[j+1]``.

    ``sub[0]`` and ``sup[-1]`` are zero. The two end rows are Dirichlet rows
    in every solver and carry the interior stencil only for inspection.
    """

    sub: np.ndarray
    diag: np.ndarray
    sup: np.ndarray
    upwinded: np.ndarray

    def apply(self, u: np.ndarray) -> np.ndarray:
        """``(A u)_j`` at interior nodes ``j = 1..2N-1``."""
        u = np.asarray(u, dtype=float)
        return self.sub[1:-1] * u[:-2] + self.diag[1:-1] * u[1:-1] + self.sup[1:-1] * u[2:]

    def dense(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.sub[1:], -1) + np.diag(self.sup[:-1], 1)


def assemble_operator(cfg: MarketConfig, grid: SpaceTimeGrid) -> TridiagonalOperator:
    """Central differences, falling back to one-sided drift where they break the M-matrix signs."""
    if cfg.kind != "gbm-1d":
        raise InvalidConfigError("the PDE solver handles 1-d markets only")
    sigma, r = cfg.sigma[0], cfg.rate
    dx, n = grid.dx, grid.n_nodes
    a = 0.5 * sigma**2
    b = r - a
    lo = -(a / dx**2 - b / (2 * dx))
    di = 2 * a / dx**2 + r
    up = -(a / dx**2 + b / (2 * dx))
    upwinded = lo > 0 or up > 0
    if upwinded:
        lo, di, up = -a / dx**2, 2 * a / dx**2 + r, -a / dx**2
        if b > 0:
            up -= b / dx
            di += b / dx
        else:
            lo += b / dx
            di -= b / dx
    sub = np.full(n, lo)
    sup = np.full(n, up)
    sub[0] = 0.0
    sup[-1] = 0.0
    return TridiagonalOperator(sub, np.full(n, di), sup, np.full(n, upwinded))


def implicit_step(op: TridiagonalOperator, dt: float, later: np.ndarray, reaction, source,
                  boundary: np.ndarray) -> np.ndarray:
    """Solve ``(I/dt + A + diag(reaction)) U = later/dt + source`` with pinned end values.

    ``reaction`` and ``source`` are arrays over all nodes (end entries ignored)
    or scalars.
    """
    n = len(op.diag)
    ab = np.empty((3, n))
    ab[0, 1:] = op.sup[:-1]
    ab[0, 0] = 0.0
    ab[1] = (1.0 / dt + op.diag) + reaction
    ab[2, :-1] = op.sub[1:]
    ab[2, -1] = 0.0
    rhs = later / dt + source
    # Dirichlet end rows
    ab[1, 0] = 1.0
    ab[0, 1] = 0.0
    ab[1, -1] = 1.0
    ab[2, -2] = 0.0
    rhs[0] = boundary[0]
    rhs[-1] = boundary[-1]
    try:
        out = solve_banded((1, 1), ab, rhs, overwrite_ab=True, overwrite_b=True, check_finite=False)
    except (LinAlgError, ValueError) as exc:
        raise SingularSystemError(f"tridiagonal solve failed: {exc}") from None
    if not np.all(np.isfinite(out)):
        raise SingularSystemError("tridiagonal solve produced non-finite values")
    return out
