"""Seedable path simulators for the three market models and their payoffs.

Random draws are organised in fixed-size chunks of paths, each chunk with its
own Philox stream keyed by ``(seed, stream, chunk)``. Normals are filled path
by path, so the draws of path ``m`` depend only on ``(seed, stream, m)``: the
result does not change with the number of paths requested alongside it or
with how chunks are spread over workers.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import FactorizationError, InvalidConfigError

KINDS = ("gbm-1d", "bs-multid", "fbm")
PAYOFFS = ("put", "max-call", "identity")

CHUNK_PATHS = 4096
FBM_JITTER = 1e-12


@dataclass(frozen=True)
class MarketConfig:
    """Market model parameters. Vectors are stored as tuples (one per asset)."""

    kind: str
    strike: float = 0.0
    horizon: float = 1.0
    rate: float = 0.0
    s0: tuple = (1.0,)
    sigma: tuple = (1.0,)
    dividends: tuple = ()
    corr: tuple = ()
    hurst: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidConfigError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        for name in ("s0", "sigma", "dividends"):
            object.__setattr__(self, name, tuple(float(v) for v in np.atleast_1d(getattr(self, name))))
        d = len(self.s0)
        if not self.dividends:
            object.__setattr__(self, "dividends", (0.0,) * d)
        if not self.corr:
            object.__setattr__(self, "corr", tuple(tuple(float(i == j) for j in range(d)) for i in range(d)))
        else:
            object.__setattr__(self, "corr", tuple(tuple(float(v) for v in row) for row in self.corr))

        if not self.horizon > 0:
            raise InvalidConfigError(f"horizon T must be > 0, got {self.horizon}")
        if not self.strike >= 0:
            raise InvalidConfigError(f"strike K must be >= 0, got {self.strike}")
        if self.kind == "fbm":
            if self.hurst is None or not 0 < self.hurst <= 1:
                raise InvalidConfigError(f"hurst H must lie in (0, 1], got {self.hurst}")
            return
        if self.kind == "gbm-1d" and d != 1:
            raise InvalidConfigError("gbm-1d takes exactly one asset")
        if len(self.sigma) != d or len(self.dividends) != d:
            raise InvalidConfigError(f"sigma/dividends must have length d={d}")
        if any(not s > 0 for s in self.sigma):
            raise InvalidConfigError(f"volatilities must be > 0, got {self.sigma}")
        if any(not s > 0 for s in self.s0):
            raise InvalidConfigError(f"initial prices must be > 0, got {self.s0}")
        rho = np.asarray(self.corr)
        if rho.shape != (d, d):
            raise InvalidConfigError(f"correlation must be {d}x{d}, got shape {rho.shape}")
        if not np.array_equal(rho, rho.T):
            raise InvalidConfigError("correlation matrix must be symmetric")
        if not np.all(np.diag(rho) == 1.0):
            raise InvalidConfigError("correlation matrix must have a unit diagonal")

    @property
    def dim(self) -> int:
        return 1 if self.kind == "fbm" else len(self.s0)

    @classmethod
    def gbm(cls, s0, strike, rate, sigma, horizon):
        return cls("gbm-1d", strike=strike, horizon=horizon, rate=rate, s0=(s0,), sigma=(sigma,))

    @classmethod
    def symmetric_bs(cls, d, s0, strike, rate, dividend, sigma, horizon, rho=0.0):
        corr = np.full((d, d), float(rho))
        np.fill_diagonal(corr, 1.0)
        return cls("bs-multid", strike=strike, horizon=horizon, rate=rate,
                   s0=(s0,) * d, sigma=(sigma,) * d, dividends=(dividend,) * d,
                   corr=tuple(map(tuple, corr)))

    @classmethod
    def fbm_model(cls, hurst, horizon=1.0):
        return cls("fbm", horizon=horizon, hurst=hurst, s0=(0.0,), sigma=(1.0,))

    @classmethod
    def from_dict(cls, d: dict) -> "MarketConfig":
        d = dict(d)
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "strike": self.strike,
            "horizon": self.horizon,
            "rate": self.rate,
            "s0": list(self.s0),
            "sigma": list(self.sigma),
            "dividends": list(self.dividends),
            "corr": [list(r) for r in self.corr],
        }
        if self.hurst is not None:
            out["hurst"] = self.hurst
        return out


@dataclass(frozen=True)
class TimeGrid:
    """``L`` equal steps on ``[0, T]``."""

    L: int
    T: float

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 1:
            raise InvalidConfigError(f"step count L must be a positive integer, got {self.L}")
        if not self.T > 0:
            raise InvalidConfigError(f"horizon T must be > 0, got {self.T}")

    @property
    def dt(self) -> float:
        return self.T / self.L

    @property
    def times(self) -> np.ndarray:
        t = np.arange(self.L + 1) * self.dt
        t[-1] = self.T
        return t


@dataclass(frozen=True, eq=False)
class PathBatch:
    """Simulated levels, ``values[m, l, i]`` for path m, time index l, coordinate i."""

    values: np.ndarray
    grid: TimeGrid
    seed: int
    kind: str
    stream: int = 0

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    def to_csv(self, path) -> None:
        from ._io import atomic_writer

        M, Lp1, d = self.values.shape
        with atomic_writer(path) as fh:
            w = csv.writer(fh)
            w.writerow(["path", "time_index", "coordinate", "value"])
            for m in range(M):
                for l in range(Lp1):
                    for i in range(d):
                        w.writerow([m, l, i, repr(float(self.values[m, l, i]))])


def _chunk_normals(seed: int, stream: int, chunk: int, count: int, shape) -> np.ndarray:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(stream), int(chunk)])
    gen = np.random.Generator(np.random.Philox(ss))
    return gen.standard_normal((count, *shape))


def standard_normals(seed: int, n_paths: int, shape: Sequence[int], stream: int = 0,
                     workers: int = 1) -> np.ndarray:
    """I.i.d. N(0,1) draws of shape ``(n_paths, *shape)``, partition-invariant per path."""
    if n_paths < 1:
        raise InvalidConfigError(f"n_paths must be >= 1, got {n_paths}")
    shape = tuple(int(s) for s in shape)
    n_chunks = math.ceil(n_paths / CHUNK_PATHS)
    counts = [min(CHUNK_PATHS, n_paths - c * CHUNK_PATHS) for c in range(n_chunks)]
    if workers > 1 and n_chunks > 1:
        with ThreadPoolExecutor(workers) as pool:
            blocks = list(pool.map(lambda c: _chunk_normals(seed, stream, c, counts[c], shape),
                                   range(n_chunks)))
    else:
        blocks = [_chunk_normals(seed, stream, c, counts[c], shape) for c in range(n_chunks)]
    return blocks[0] if n_chunks == 1 else np.concatenate(blocks, axis=0)


def psd_cholesky(C: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Lower Cholesky factor of a positive semidefinite matrix.

    Zero pivots (within ``tol`` relative to the diagonal scale) give zero
    columns, so singular PSD matrices such as perfect correlation factor
    cleanly. A negative pivot raises :class:`FactorizationError` naming the
    leading minor that fails.
    """
    C = np.asarray(C, dtype=float)
    n = C.shape[0]
    if C.shape != (n, n):
        raise FactorizationError(f"matrix must be square, got {C.shape}")
    scale = max(float(np.max(np.abs(np.diag(C)))) if n else 1.0, 1.0)
    L = np.zeros_like(C)
    for k in range(n):
        pivot = C[k, k] - L[k, :k] @ L[k, :k]
        if pivot < -tol * scale:
            raise FactorizationError(
                f"matrix is not positive semidefinite: leading minor of order {k + 1} is negative",
                minor=k + 1)
        if pivot <= tol * scale:
            continue
        L[k, k] = math.sqrt(pivot)
        L[k + 1:, k] = (C[k + 1:, k] - L[k + 1:, :k] @ L[k, :k]) / L[k, k]
    return L


def simulate_gbm(cfg: MarketConfig, grid: TimeGrid, n_paths: int, seed: int,
                 stream: int = 0, workers: int = 1) -> PathBatch:
    """Exact log-normal stepping of a single risk-neutral GBM."""
    if cfg.kind != "gbm-1d":
        raise InvalidConfigError(f"simulate_gbm needs kind gbm-1d, got {cfg.kind}")
    if n_paths < 1:
        raise InvalidConfigError(f"n_paths must be >= 1, got {n_paths}")
    sigma = cfg.sigma[0]
    dt = grid.dt
    z = standard_normals(seed, n_paths, (grid.L, 1), stream, workers)
    incr = (cfg.rate - 0.5 * sigma**2) * dt + sigma * math.sqrt(dt) * z
    logs = np.concatenate([np.zeros((n_paths, 1, 1)), np.cumsum(incr, axis=1)], axis=1)
    return PathBatch(cfg.s0[0] * np.exp(logs), grid, seed, cfg.kind, stream)


def simulate_correlated_bs(cfg: MarketConfig, grid: TimeGrid, n_paths: int, seed: int,
                           stream: int = 0, workers: int = 1) -> PathBatch:
    """Multi-asset Black-Scholes with dividends and constant correlation."""
    if cfg.kind != "bs-multid":
        raise InvalidConfigError(f"simulate_correlated_bs needs kind bs-multid, got {cfg.kind}")
    if n_paths < 1:
        raise InvalidConfigError(f"n_paths must be >= 1, got {n_paths}")
    chol = psd_cholesky(np.asarray(cfg.corr))
    sigma = np.asarray(cfg.sigma)
    drift = (cfg.rate - np.asarray(cfg.dividends) - 0.5 * sigma**2) * grid.dt
    d = cfg.dim
    z = standard_normals(seed, n_paths, (grid.L, d), stream, workers)
    incr = drift + sigma * math.sqrt(grid.dt) * (z @ chol.T)
    logs = np.concatenate([np.zeros((n_paths, 1, d)), np.cumsum(incr, axis=1)], axis=1)
    return PathBatch(np.asarray(cfg.s0) * np.exp(logs), grid, seed, cfg.kind, stream)


def fbm_covariance(hurst: float, grid: TimeGrid) -> np.ndarray:
    """Covariance of fractional Brownian motion at ``t_1..t_L`` (t_0 = 0 excluded)."""
    if not 0 < hurst <= 1:
        raise InvalidConfigError(f"hurst H must lie in (0, 1], got {hurst}")
    t = grid.times[1:]
    e = 2.0 * hurst
    C = 0.5 * (t[:, None] ** e + t[None, :] ** e - np.abs(t[:, None] - t[None, :]) ** e)
    return 0.5 * (C + C.T)


def fbm_factor(hurst: float, grid: TimeGrid, jitter: float = FBM_JITTER) -> np.ndarray:
    C = fbm_covariance(hurst, grid)
    return psd_cholesky(C + jitter * np.eye(len(C)))


def simulate_fbm(cfg: MarketConfig, grid: TimeGrid, n_paths: int, seed: int,
                 stream: int = 0, workers: int = 1) -> PathBatch:
    """Fractional Brownian motion by dense Cholesky of its covariance.

    A diagonal jitter of ``FBM_JITTER`` keeps the factorization defined for H
    close to 1, where the covariance is (nearly) rank one.
    """
    if cfg.kind != "fbm":
        raise InvalidConfigError(f"simulate_fbm needs kind fbm, got {cfg.kind}")
    if n_paths < 1:
        raise InvalidConfigError(f"n_paths must be >= 1, got {n_paths}")
    chol = fbm_factor(cfg.hurst, grid)
    z = standard_normals(seed, n_paths, (grid.L,), stream, workers)
    w = z @ chol.T
    vals = np.zeros((n_paths, grid.L + 1, 1))
    vals[:, 1:, 0] = w
    return PathBatch(vals, grid, seed, cfg.kind, stream)


def simulate(cfg: MarketConfig, grid: TimeGrid, n_paths: int, seed: int,
             stream: int = 0, workers: int = 1) -> PathBatch:
    sim = {"gbm-1d": simulate_gbm, "bs-multid": simulate_correlated_bs, "fbm": simulate_fbm}[cfg.kind]
    return sim(cfg, grid, n_paths, seed, stream=stream, workers=workers)


def payoff_eval(kind: str, strike: float, state) -> np.ndarray | float:
    """Payoff of ``state`` (last axis = coordinates).

    put -> (K - S)^+, max-call -> (max_i S^i - K)^+, identity -> the level itself.
    """
    s = np.asarray(state, dtype=float)
    if s.ndim == 0:
        s = s[None]
    if kind == "put":
        if s.shape[-1] != 1:
            raise InvalidConfigError("put payoff takes a single coordinate")
        out = np.maximum(strike - s[..., 0], 0.0)
    elif kind == "max-call":
        out = np.maximum(np.max(s, axis=-1) - strike, 0.0)
    elif kind == "identity":
        if s.shape[-1] != 1:
            raise InvalidConfigError("identity payoff takes a single coordinate")
        out = s[..., 0].copy()
    else:
        raise InvalidConfigError(f"unknown payoff kind {kind!r}; expected one of {PAYOFFS}")
    return float(out) if out.ndim == 0 else out


def default_payoff(cfg: MarketConfig) -> str:
    return {"gbm-1d": "put", "bs-multid": "max-call", "fbm": "identity"}[cfg.kind]


def load_market(path) -> MarketConfig:
    """Read a MarketConfig from a YAML file (either top level or under ``market:``)."""
    from .config import read_yaml

    data = read_yaml(path)
    if isinstance(data, dict) and "market" in data:
        data = data["market"]
    return MarketConfig.from_dict(data)
