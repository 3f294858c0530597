"""TD training of per-timestep value networks with the soft stopping policy.

One iteration simulates a fresh batch and sweeps ``l = L-1, ..., 0``; at each
step the target uses the network ``theta^{l+1}`` that was just updated in the
same sweep (the payoff at ``l + 1 = L``).
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .._common import E_MAX, entropy_reward
from .._io import write_csv
from ..errors import InvalidConfigError, NonFiniteLossError, TrainingDivergedError
from ..evaluate import EvalReport, threshold_stop_reward
from ..model_sim import MarketConfig, PathBatch, TimeGrid, default_payoff, payoff_eval, simulate
from .net import (ValueNet, backward, default_layouts, features, forward,
                  init_valuenet, standardize, value)

log = logging.getLogger(__name__)

DIVERGENCE_LOSS = 1e6
TEST_STREAM = 0


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 3000
    batch_size: int = 1024
    lr: float = 3e-3
    lr_final: float = 1e-4
    lam: float = 1e-4
    seed: int = 0
    optimizer: str = "adam"
    clip_norm: float = 10.0
    eval_every: int = 100
    test_paths: int = 2 ** 16
    stopgrad_policy: bool = True
    positive_only: bool = False
    zero_output: bool = True
    whiten: bool | None = None

    def __post_init__(self):
        for name in ("iterations", "batch_size", "eval_every", "test_paths"):
            if int(getattr(self, name)) < 1:
                raise InvalidConfigError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if not self.lr > 0:
            raise InvalidConfigError(f"lr must be > 0, got {self.lr}")
        if not 0 < self.lr_final <= self.lr:
            raise InvalidConfigError(f"lr_final must lie in (0, lr], got {self.lr_final}")
        if not self.lam > 0:
            raise InvalidConfigError(f"lam must be > 0, got {self.lam}")
        if not self.clip_norm > 0:
            raise InvalidConfigError(f"clip_norm must be > 0, got {self.clip_norm}")
        if self.optimizer not in ("adam", "sgd"):
            raise InvalidConfigError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    def lr_at(self, n: int) -> float:
        """Cosine decay from ``lr`` at iteration 1 to ``lr_final`` at the last iteration."""
        if self.iterations == 1:
            return self.lr
        frac = (n - 1) / (self.iterations - 1)
        return self.lr_final + 0.5 * (self.lr - self.lr_final) * (1.0 + math.cos(math.pi * frac))


@dataclass
class LearningCurve:
    """Test-set estimates ``(iteration, estimate, relative_error)``."""

    reference: float | None = None
    iterations: list = field(default_factory=list)
    estimates: list = field(default_factory=list)
    std_errors: list = field(default_factory=list)
    losses: list = field(default_factory=list)

    def append(self, n: int, report: EvalReport, loss: float) -> None:
        if self.iterations and n <= self.iterations[-1]:
            raise ValueError(f"iterations must increase, got {n} after {self.iterations[-1]}")
        self.iterations.append(int(n))
        self.estimates.append(report.estimate)
        self.std_errors.append(report.std_error)
        self.losses.append(float(loss))

    @property
    def relative_errors(self) -> list:
        if not self.reference:
            return [float("nan")] * len(self.estimates)
        return [abs(e - self.reference) / abs(self.reference) for e in self.estimates]

    @property
    def final(self) -> float:
        return self.estimates[-1] if self.estimates else float("nan")

    def to_csv(self, path) -> None:
        write_csv(path, ["iteration", "estimate", "relative_error"],
                  zip(self.iterations, self.estimates, self.relative_errors))


@dataclass(frozen=True, eq=False)
class Problem:
    """A market, its time grid and the payoff used for stopping."""

    market: MarketConfig
    grid: TimeGrid
    payoff: str = ""

    def __post_init__(self):
        if not self.payoff:
            object.__setattr__(self, "payoff", default_payoff(self.market))

    @property
    def rate(self) -> float:
        # the fBm reward is undiscounted
        return 0.0 if self.market.kind == "fbm" else self.market.rate

    def payoffs(self, batch: PathBatch) -> np.ndarray:
        return np.asarray(payoff_eval(self.payoff, self.market.strike, batch.values))

    def simulate(self, n_paths: int, seed: int, stream: int) -> PathBatch:
        return simulate(self.market, self.grid, n_paths, seed, stream=stream)

    @property
    def path_dependent(self) -> bool:
        return self.market.kind == "fbm"

    def layouts(self) -> list:
        return default_layouts(self.market.kind, self.market.dim, self.grid.L)


# ---------------------------------------------------------------- loss


def td_residual(net: ValueNet, l: int, x: np.ndarray, g: np.ndarray, target: np.ndarray,
                stopgrad_policy: bool = False, keep: bool = False):
    """One-step residual ``g pi dt + lam R(pi) dt + e^{-r dt} target (1 - pi dt) - V``.

    Returns ``(res, dres_dV)`` and, with ``keep``, the forward activations.
    """
    lay = net.layouts[l]
    y, acts = forward(lay, net.thetas[l], standardize(net, l, x), keep=True)
    v = g + net.out_scale * y if lay.residual_payoff else net.out_scale * y
    lam, dt, disc = net.lam, net.dt, net.discount
    expo = -(v - g) / lam
    pi = np.exp(np.clip(expo, -E_MAX, E_MAX))
    capped = pi * dt >= 1.0
    pi = np.where(capped, 1.0 / dt, pi)
    res = g * pi * dt + lam * entropy_reward(pi) * dt + disc * target * (1.0 - pi * dt) - v
    dres = -np.ones_like(v)
    if not stopgrad_policy:
        # d pi / dV = -pi / lam where neither clamp is active; R'(pi) = -log pi = (V - g)/lam
        active = (~capped) & (np.abs(expo) < E_MAX)
        dres -= np.where(active, (pi * dt / lam) * (v - disc * target), 0.0)
    return (res, dres, acts) if keep else (res, dres)


def td_loss(net: ValueNet, l: int, x: np.ndarray, g: np.ndarray, target: np.ndarray,
            stopgrad_policy: bool = False):
    """Mean squared TD residual at step ``l`` and its gradient with respect to ``theta^l``.

    ``target`` holds next-step values and is treated as a constant.

    Raises
    ------
    NonFiniteLossError
        If any residual is NaN or infinite; names the first offending path.
    """
    res, dres, acts = td_residual(net, l, x, g, target, stopgrad_policy, keep=True)
    bad = ~np.isfinite(res)
    if bad.any():
        m = int(np.argmax(bad))
        raise NonFiniteLossError(f"non-finite TD residual at path {m}, step {l}",
                                 path_index=m, time_index=l)
    M = res.shape[0]
    loss = float(np.mean(res * res))
    dy = (2.0 / M) * res * dres * net.out_scale
    grad = backward(net.layouts[l], net.thetas[l], acts, dy)
    return loss, grad


# ---------------------------------------------------------------- optimizer


class Adam:
    """Adam with global gradient-norm clipping, one state per parameter block."""

    def __init__(self, sizes, lr: float, clip_norm: float = 10.0, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, kind: str = "adam"):
        self.lr, self.clip, self.b1, self.b2, self.eps, self.kind = lr, clip_norm, beta1, beta2, eps, kind
        self.m = [np.zeros(n) for n in sizes]
        self.v = [np.zeros(n) for n in sizes]
        self.t = [0] * len(sizes)

    def step(self, k: int, theta: np.ndarray, grad: np.ndarray) -> None:
        norm = float(np.sqrt(grad @ grad))
        if norm > self.clip:
            grad = grad * (self.clip / norm)
        if self.kind == "sgd":
            theta -= self.lr * grad
            return
        self.t[k] += 1
        t = self.t[k]
        m, v = self.m[k], self.v[k]
        m *= self.b1
        m += (1 - self.b1) * grad
        v *= self.b2
        v += (1 - self.b2) * grad * grad
        mhat = m / (1 - self.b1 ** t)
        vhat = v / (1 - self.b2 ** t)
        theta -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


# ---------------------------------------------------------------- training


def whitening_matrix(x: np.ndarray, rel_floor: float = 1e-10) -> np.ndarray:
    """PCA whitening ``P`` with ``cov((x - mean) @ P) = I`` on the kept directions.

    Directions with variance below ``rel_floor`` times the largest are dropped
    (zero columns), so rank-deficient inputs do not amplify rounding noise.
    """
    n = x.shape[1]
    C = np.cov(x, rowvar=False).reshape(n, n)
    w, U = np.linalg.eigh(C)
    keep = w > rel_floor * max(float(w.max()), 1e-300)
    P = np.zeros_like(U)
    P[:, keep] = U[:, keep] / np.sqrt(w[keep])
    return P


def fit_normalization(net: ValueNet, problem: Problem, batch: PathBatch, g: np.ndarray,
                      whiten: bool = False) -> None:
    """Per-step input shift/scale and a global output scale from one reference batch."""
    for l in range(net.L):
        x = features(problem.market.kind, batch.values, l, g[:, l])
        if x.shape[1] == 0:
            continue
        mu, sd = x.mean(axis=0), x.std(axis=0)
        net.in_shift[l] = mu
        if whiten and x.shape[1] > 1:
            net.in_scale[l] = whitening_matrix(x)
        else:
            net.in_scale[l] = np.where(sd > 1e-8, sd, 1.0)
    s = float(np.std(g[:, -1]))
    net.out_scale = s if s > 1e-8 else 1.0


def evaluate_net(net: ValueNet, problem: Problem, batch: PathBatch, g: np.ndarray | None = None,
                 positive_only: bool = False) -> EvalReport:
    """Pure-payoff reward of the threshold rule ``stop at the first l with V <= g``."""
    g = problem.payoffs(batch) if g is None else g
    kind = problem.market.kind

    def values(l):
        return value(net, l, features(kind, batch.values, l, g[:, l]), g[:, l])

    return threshold_stop_reward(g, values, problem.grid, problem.rate, positive_only)


def sweep(net: ValueNet, opt: Adam, problem: Problem, batch: PathBatch, g: np.ndarray,
          stopgrad_policy: bool = False) -> np.ndarray:
    """One backward-in-time pass of TD steps; returns the per-step losses."""
    kind = problem.market.kind
    L = net.L
    losses = np.empty(L)
    target = g[:, L]
    for l in range(L - 1, -1, -1):
        x = features(kind, batch.values, l, g[:, l])
        loss, grad = td_loss(net, l, x, g[:, l], target, stopgrad_policy)
        opt.step(l, net.thetas[l], grad)
        losses[l] = loss
        if l:
            target = value(net, l, x, g[:, l])
    return losses


def train(problem: Problem, tcfg: TrainConfig, layouts: list | None = None,
          reference: float | None = None, progress=None, test_batch: PathBatch | None = None):
    """Fit the value networks; returns ``(ValueNet, LearningCurve)``.

    Training batch ``n`` uses random stream ``n``; the test set uses stream 0.
    The test set is evaluated every ``eval_every`` iterations and after the last.

    Raises
    ------
    TrainingDivergedError
        If a step loss exceeds 1e6.
    """
    layouts = layouts or problem.layouts()
    if len(layouts) != problem.grid.L:
        raise InvalidConfigError(f"need {problem.grid.L} layouts, got {len(layouts)}")
    net = init_valuenet(layouts, tcfg.lam, problem.rate, problem.grid.dt, tcfg.seed,
                       zero_output=tcfg.zero_output)
    test = test_batch or problem.simulate(tcfg.test_paths, tcfg.seed, TEST_STREAM)
    g_test = problem.payoffs(test)
    ref_batch = problem.simulate(tcfg.batch_size, tcfg.seed, 1)
    whiten = problem.path_dependent if tcfg.whiten is None else tcfg.whiten
    fit_normalization(net, problem, ref_batch, problem.payoffs(ref_batch), whiten)
    opt = Adam([lay.n_params for lay in layouts], tcfg.lr, tcfg.clip_norm, kind=tcfg.optimizer)
    curve = LearningCurve(reference=reference)
    for n in range(1, tcfg.iterations + 1):
        opt.lr = tcfg.lr_at(n)
        batch = ref_batch if n == 1 else problem.simulate(tcfg.batch_size, tcfg.seed, n)
        losses = sweep(net, opt, problem, batch, problem.payoffs(batch), tcfg.stopgrad_policy)
        worst = float(np.max(losses))
        if not worst <= DIVERGENCE_LOSS:
            raise TrainingDivergedError(
                f"TD loss {worst:.3e} exceeded {DIVERGENCE_LOSS:.0e} at iteration {n}, "
                f"step {int(np.argmax(losses))}")
        if n % tcfg.eval_every == 0 or n == tcfg.iterations:
            rep = evaluate_net(net, problem, test, g_test, tcfg.positive_only)
            curve.append(n, rep, float(np.mean(losses)))
            msg = f"iter {n:6d}  loss {np.mean(losses):.4e}  estimate {rep.estimate:.5f}"
            log.info(msg)
            if progress is not None:
                progress(msg)
    return net, curve
