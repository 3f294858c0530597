from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .._io import write_csv
from .grid import ValueField


@dataclass(frozen=True, eq=False)
class BoundaryCurve:
    """Exercise boundary in log-price per time slice; NaN means no boundary."""

    t: np.ndarray
    x: np.ndarray

    @property
    def s(self) -> np.ndarray:
        return np.exp(self.x)

    def to_csv(self, path, label: str | None = None) -> None:
        write_csv(path, ["t", "x_boundary"], zip(self.t.tolist(), self.x.tolist()))


def _row_boundary(x, d) -> float:
    cont = np.flatnonzero(d > 0)
    if cont.size == 0:
        return float(x[-1])
    j = int(cont[0])
    if j == 0:
        return float("nan")
    d0, d1 = d[j - 1], d[j]
    return float(x[j - 1] + (x[j] - x[j - 1]) * (-d0) / (d1 - d0))


def extract_boundary(u: ValueField, tol_b: float = 1e-6) -> BoundaryCurve:
    """Top edge of the exercise region ``{u <= h + tol_b}`` grown from the bottom of the grid.

    Interpolates linearly where ``u - h - tol_b`` changes sign. A row that is
    all exercise reports the top of the grid; a row whose lowest node already
    continues reports NaN.
    """
    g = u.grid
    x, h = g.x, u.h
    xb = np.array([_row_boundary(x, u.u[i] - h - tol_b) for i in range(g.n_steps + 1)])
    return BoundaryCurve(g.t, xb)


def write_boundaries(path, curves: dict) -> None:
    """Several named curves side by side: columns ``t, x_boundary_<name>...``."""
    names = list(curves)
    t = curves[names[0]].t
    write_csv(path, ["t"] + [f"x_boundary_{n}" for n in names],
              ([float(t[i])] + [float(curves[n].x[i]) for n in names] for i in range(len(t))))
