"""Monte Carlo evaluation of stopping policies on simulated paths.

Three estimators share one discretization of the reward functional:

* ``randomized``: survival-weighted sum over the grid,
  ``sum_l e^{-r t_l} (g_l pi_l + lam R(pi_l)) p_l dt + e^{-rT} g_L p_L``;
* ``cox``: the same functional realised through random exercise times;
* ``threshold``: stop at the first ``l`` with ``V <= g``.

Payoffs are passed as a ``(M, L+1)`` array, intensities as ``(M, L)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._common import entropy_reward
from ._io import write_csv
from .errors import ContractViolation
from .model_sim import TimeGrid

PI_DT_SLACK = 1e-12


@dataclass(frozen=True)
class EvalReport:
    estimate: float
    std_error: float
    mode: str
    n_paths: int
    lam: float = 0.0
    include_entropy: bool = False
    reference: float | None = None

    def __post_init__(self):
        if not self.std_error >= 0:
            raise ValueError(f"std_error must be >= 0, got {self.std_error}")

    @property
    def abs_gap(self) -> float:
        return float("nan") if self.reference is None else abs(self.estimate - self.reference)

    @property
    def rel_gap(self) -> float:
        if self.reference is None or self.reference == 0:
            return float("nan")
        return self.abs_gap / abs(self.reference)

    def with_reference(self, reference: float) -> "EvalReport":
        return EvalReport(self.estimate, self.std_error, self.mode, self.n_paths, self.lam,
                          self.include_entropy, reference)


def _report(samples: np.ndarray, mode: str, lam=0.0, include_entropy=False) -> EvalReport:
    n = samples.shape[0]
    se = float(np.std(samples, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return EvalReport(float(np.mean(samples)), se, mode, n, lam, include_entropy)


@dataclass(frozen=True, eq=False)
class SurvivalWeights:
    p: np.ndarray  # (M, L+1)


def _check_pi(pi: np.ndarray, dt: float) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    x = pi * dt
    bad = ~((x >= -PI_DT_SLACK) & (x <= 1 + PI_DT_SLACK))
    if np.any(bad):
        m, l = np.argwhere(bad)[0] if pi.ndim == 2 else (int(np.argmax(bad)), 0)
        raise ContractViolation(f"pi*dt must lie in [0, 1]; got {x[bad][0]!r} at path {m}, step {l}")
    return pi


def survival_weights(pi, dt: float) -> SurvivalWeights:
    """``p_0 = 1``, ``p_{l+1} = (1 - pi_l dt) p_l``."""
    pi = _check_pi(np.atleast_2d(pi), dt)
    keep = np.clip(1.0 - pi * dt, 0.0, 1.0)
    p = np.ones((pi.shape[0], pi.shape[1] + 1))
    p[:, 1:] = np.cumprod(keep, axis=1)
    return SurvivalWeights(p)


def _discounts(grid: TimeGrid, r: float) -> np.ndarray:
    return np.exp(-r * grid.times)


def randomized_reward_samples(payoffs, pi, grid: TimeGrid, lam: float, r: float,
                              include_entropy: bool = False) -> np.ndarray:
    payoffs = np.asarray(payoffs, dtype=float)
    pi = _check_pi(pi, grid.dt)
    if payoffs.shape != (pi.shape[0], pi.shape[1] + 1) or pi.shape[1] != grid.L:
        raise ValueError(f"shape mismatch: payoffs {payoffs.shape}, pi {pi.shape}, L={grid.L}")
    p = survival_weights(pi, grid.dt).p
    disc = _discounts(grid, r)
    flow = payoffs[:, :-1] * (pi * grid.dt)
    if include_entropy:
        flow = flow + lam * entropy_reward(pi) * grid.dt
    running = np.sum(disc[:-1] * flow * p[:, :-1], axis=1)
    return running + disc[-1] * payoffs[:, -1] * p[:, -1]


def randomized_reward(payoffs, pi, grid: TimeGrid, lam: float, r: float,
                      include_entropy: bool = False) -> EvalReport:
    """Expected reward of the randomized policy ``pi`` given survival weights."""
    s = randomized_reward_samples(payoffs, pi, grid, lam, r, include_entropy)
    return _report(s, "randomized", lam, include_entropy)


def first_exercise(values, payoffs, positive_only: bool = False) -> np.ndarray:
    """Index of the first ``l < L`` with ``values <= payoffs`` (ties stop), else ``L``.

    ``values`` may be an ``(M, L)`` array or a callable ``l -> (M,)``.
    With ``positive_only`` a zero payoff never triggers exercise.
    """
    payoffs = np.asarray(payoffs, dtype=float)
    M, Lp1 = payoffs.shape
    L = Lp1 - 1
    tau = np.full(M, L, dtype=int)
    alive = np.ones(M, dtype=bool)
    for l in range(L):
        v = values(l) if callable(values) else np.asarray(values)[:, l]
        stop = alive & (v <= payoffs[:, l])
        if positive_only:
            stop &= payoffs[:, l] > 0
        tau[stop] = l
        alive &= ~stop
        if not alive.any():
            break
    return tau


def field_path_values(field, values: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Look up a PDE value field along 1-d price paths, shape ``(M, L)``.

    Linear interpolation in ``x = log S`` on the nearest time slice of the
    field; prices outside the grid take the edge values.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim == 3:
        values = values[..., 0]
    x = field.grid.x
    out = np.empty((values.shape[0], grid.L))
    for l in range(grid.L):
        i = field.grid.time_index(grid.times[l])
        out[:, l] = np.interp(np.log(values[:, l]), x, field.u[i])
    return out


def threshold_stop_reward(payoffs, values, grid: TimeGrid, r: float,
                          positive_only: bool = False) -> EvalReport:
    """Reward ``e^{-r tau} g(S_tau)`` of the rule ``tau = first l with V <= g`` (else T)."""
    payoffs = np.asarray(payoffs, dtype=float)
    tau = first_exercise(values, payoffs, positive_only)
    reward = np.exp(-r * grid.times[tau]) * payoffs[np.arange(len(tau)), tau]
    return _report(reward, "threshold")


@dataclass(frozen=True, eq=False)
class CoxSample:
    """Per path: unit exponential ``theta``; ``tau_index`` = first l with cumulative
    hazard over steps ``< l`` at least ``theta`` (``L`` if never); ``survived`` marks
    paths that were never exercised."""

    theta: np.ndarray
    tau_index: np.ndarray
    survived: np.ndarray

    def to_csv(self, path) -> None:
        write_csv(path, ["path", "theta", "tau_index", "survived"],
                  ((m, float(self.theta[m]), int(self.tau_index[m]), bool(self.survived[m]))
                   for m in range(len(self.theta))))


def cumulative_hazard(pi, dt: float, rule: str = "exact") -> np.ndarray:
    """Hazard accumulated over steps ``< l`` for l = 0..L, shape ``(M, L+1)``.

    ``exact`` uses ``-log(1 - pi dt)`` per step, which makes ``P(tau > t_l)`` equal
    the survival weight ``p_l`` exactly; ``linear`` uses ``pi dt`` (first-order
    equivalent).
    """
    pi = _check_pi(pi, dt)
    if rule == "exact":
        with np.errstate(divide="ignore"):
            step = -np.log1p(-np.clip(pi * dt, 0.0, 1.0))
    elif rule == "linear":
        step = pi * dt
    else:
        raise ValueError(f"unknown hazard rule {rule!r}")
    out = np.zeros((pi.shape[0], pi.shape[1] + 1))
    out[:, 1:] = np.cumsum(step, axis=1)
    return out


def sample_cox_times(pi, grid: TimeGrid, seed: int, rule: str = "exact") -> CoxSample:
    """Random exercise times ``tau = inf{t : int_0^t pi >= Theta} ^ T``, ``Theta ~ Exp(1)``."""
    pi = np.atleast_2d(pi)
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0xC0C5])))
    theta = gen.exponential(1.0, size=pi.shape[0])
    H = cumulative_hazard(pi, grid.dt, rule)
    crossed = H[:, 1:] >= theta[:, None]
    any_cross = crossed.any(axis=1)
    tau = np.where(any_cross, np.argmax(crossed, axis=1) + 1, grid.L)
    return CoxSample(theta, tau, ~any_cross)


def cox_reward_samples(payoffs, pi, sample: CoxSample, grid: TimeGrid, lam: float, r: float,
                       include_entropy: bool = False) -> np.ndarray:
    """``e^{-r tau} g(S_tau) + lam int_0^tau e^{-ru} R(pi_u) du`` per path.

    A path exercised during step ``k`` (``tau_index = k + 1``) collects ``g_k`` at
    ``t_k`` and entropy over steps ``0..k``; a survivor collects ``g_L`` at ``T``
    and entropy over every step. This matches the left-point sums of
    :func:`randomized_reward`.
    """
    payoffs = np.asarray(payoffs, dtype=float)
    pi = np.atleast_2d(pi)
    M = payoffs.shape[0]
    disc = _discounts(grid, r)
    k = np.where(sample.survived, grid.L, sample.tau_index - 1)
    reward = disc[k] * payoffs[np.arange(M), k]
    if include_entropy:
        ent = np.concatenate([np.zeros((M, 1)),
                              np.cumsum(disc[:-1] * lam * entropy_reward(pi) * grid.dt, axis=1)], axis=1)
        steps = np.where(sample.survived, grid.L, k + 1)
        reward = reward + ent[np.arange(M), steps]
    return reward


def cox_reward(payoffs, pi, sample: CoxSample, grid: TimeGrid, lam: float, r: float,
               include_entropy: bool = False) -> EvalReport:
    s = cox_reward_samples(payoffs, pi, sample, grid, lam, r, include_entropy)
    return _report(s, "cox", lam, include_entropy)


@dataclass
class Comparison:
    rows: list = field(default_factory=list)
    reference: float = float("nan")

    def to_csv(self, path) -> None:
        write_csv(path, ["mode", "lambda", "estimate", "se", "abs_gap", "rel_gap"],
                  ((r.mode, r.lam, r.estimate, r.std_error, r.abs_gap, r.rel_gap) for r in self.rows))

    def to_text(self) -> str:
        head = f"{'mode':<11}{'lambda':>10}{'estimate':>12}{'se':>10}{'abs_gap':>10}{'rel_gap':>10}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            lines.append(f"{r.mode:<11}{r.lam:>10.3g}{r.estimate:>12.5f}{r.std_error:>10.5f}"
                         f"{r.abs_gap:>10.5f}{r.rel_gap:>9.3%} ")
        lines.append(f"reference: {self.reference:.5f}")
        return "\n".join(lines)


def comparison_report(items: Sequence[EvalReport], reference: float) -> Comparison:
    """Attach a reference price to each report, preserving input order."""
    if not items:
        raise ValueError("comparison_report needs at least one item")
    return Comparison([it.with_reference(reference) for it in items], reference)
