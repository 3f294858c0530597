"""Per-timestep rectifier networks ``V_theta(., t_l)`` with hand-written backprop.

Each time step owns one flat parameter vector laid out as
``[W1, b1, W2, b2, ..., W_out, b_out]`` (weights row-major, ``fan_in x fan_out``).
Inputs are standardized with a fixed per-step shift and scale (a diagonal
scale, or a whitening matrix for strongly correlated path inputs) and the network
output is multiplied by ``out_scale``; with ``residual_payoff`` the value is
``payoff + out_scale * net(x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .._common import soft_intensity
from ..errors import InvalidConfigError


@dataclass(frozen=True)
class NetLayout:
    input_dim: int
    hidden: tuple = (21, 21)
    residual_payoff: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))
        if self.input_dim < 0 or not self.hidden or any(w < 1 for w in self.hidden):
            raise InvalidConfigError(f"invalid layout {self}")

    @property
    def widths(self) -> tuple:
        return (self.input_dim, *self.hidden, 1)

    @property
    def n_params(self) -> int:
        w = self.widths
        return sum(w[k] * w[k + 1] + w[k + 1] for k in range(len(w) - 1))

    def unpack(self, theta: np.ndarray) -> list:
        """Views ``[(W, b), ...]`` into a flat parameter vector."""
        out, pos, w = [], 0, self.widths
        for k in range(len(w) - 1):
            a, b = w[k], w[k + 1]
            W = theta[pos:pos + a * b].reshape(a, b)
            pos += a * b
            out.append((W, theta[pos:pos + b]))
            pos += b
        return out


def feature_dim(kind: str, dim: int, l: int) -> int:
    if kind == "gbm-1d":
        return 2
    if kind == "bs-multid":
        return dim + 1
    if kind == "fbm":
        return l
    raise InvalidConfigError(f"unknown model kind {kind!r}")


def default_layouts(kind: str, dim: int, L: int) -> list:
    """Width 21 for the put, d + 20 for the max-call, n + 20 for fBm at t_n."""
    if kind == "gbm-1d":
        return [NetLayout(2, (21, 21)) for _ in range(L)]
    if kind == "bs-multid":
        return [NetLayout(dim + 1, (dim + 20,) * 2) for _ in range(L)]
    if kind == "fbm":
        return [NetLayout(l, (l + 20,) * 2) for l in range(L)]
    raise InvalidConfigError(f"unknown model kind {kind!r}")


def features(kind: str, values: np.ndarray, l: int, payoff_l: np.ndarray) -> np.ndarray:
    """Network input at time index ``l`` for paths ``values`` of shape ``(M, L+1, d)``.

    put: ``(S, g)``; max-call: ``(S^1..S^d, g)``; fBm: the observed levels
    ``W_{t_1}..W_{t_l}``.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 3:
        raise InvalidConfigError(f"paths must have shape (M, L+1, d), got {values.shape}")
    if kind == "gbm-1d":
        if values.shape[2] != 1:
            raise InvalidConfigError("put features need a single coordinate")
        return np.column_stack([values[:, l, 0], payoff_l])
    if kind == "bs-multid":
        return np.column_stack([values[:, l, :], payoff_l])
    if kind == "fbm":
        return values[:, 1:l + 1, 0]
    raise InvalidConfigError(f"unknown model kind {kind!r}")


@dataclass(eq=False)
class ValueNet:
    layouts: list
    thetas: list
    lam: float
    rate: float
    dt: float
    seed: int = 0
    in_shift: list = field(default=None)
    in_scale: list = field(default=None)
    out_scale: float = 1.0

    def __post_init__(self):
        if len(self.layouts) != len(self.thetas):
            raise InvalidConfigError("one parameter block per layout expected")
        for lay, th in zip(self.layouts, self.thetas):
            if th.shape != (lay.n_params,):
                raise InvalidConfigError(f"parameter block of size {th.shape} does not fit {lay}")
        if self.in_shift is None:
            self.in_shift = [np.zeros(lay.input_dim) for lay in self.layouts]
        if self.in_scale is None:
            self.in_scale = [np.ones(lay.input_dim) for lay in self.layouts]

    @property
    def L(self) -> int:
        return len(self.layouts)

    @property
    def discount(self) -> float:
        return math.exp(-self.rate * self.dt)

    @property
    def n_params(self) -> int:
        return sum(lay.n_params for lay in self.layouts)

    def copy(self) -> "ValueNet":
        return ValueNet(list(self.layouts), [t.copy() for t in self.thetas], self.lam, self.rate,
                        self.dt, self.seed, [s.copy() for s in self.in_shift],
                        [s.copy() for s in self.in_scale], self.out_scale)


def init_valuenet(layouts, lam: float, rate: float, dt: float, seed: int = 0,
                  zero: bool = False, zero_output: bool = False) -> ValueNet:
    """He-normal weights (variance 2/fan_in), zero biases.

    ``zero=True`` gives an all-zero net; ``zero_output=True`` keeps the hidden
    layers random but zeroes the output layer, so the net starts at exactly 0
    while still receiving nonzero gradients.
    """
    if isinstance(layouts, NetLayout):
        raise InvalidConfigError("pass one layout per time step")
    thetas = []
    for l, lay in enumerate(layouts):
        theta = np.zeros(lay.n_params)
        if not zero:
            gen = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0x5EED, l])))
            blocks = lay.unpack(theta)
            for W, _ in blocks:
                W[...] = gen.standard_normal(W.shape) * math.sqrt(2.0 / max(W.shape[0], 1))
            if zero_output:
                blocks[-1][0][...] = 0.0
        thetas.append(theta)
    return ValueNet(list(layouts), thetas, lam, rate, dt, seed)


def forward(layout: NetLayout, theta: np.ndarray, z: np.ndarray, keep: bool = False):
    """Raw network output ``(M,)`` on standardized inputs ``z``; optionally the activations."""
    acts = [z]
    a = z
    params = layout.unpack(theta)
    for W, b in params[:-1]:
        a = a @ W
        a += b
        np.maximum(a, 0.0, out=a)
        acts.append(a)
    W, b = params[-1]
    y = (a @ W)[:, 0] + b[0]
    return (y, acts) if keep else y


def backward(layout: NetLayout, theta: np.ndarray, acts: list, dy: np.ndarray) -> np.ndarray:
    """Gradient of ``sum(dy * y)`` with respect to the flat parameters."""
    params = layout.unpack(theta)
    grad = np.empty_like(theta)
    gparams = layout.unpack(grad)
    delta = dy[:, None]
    for k in range(len(params) - 1, -1, -1):
        W, _ = params[k]
        gW, gb = gparams[k]
        np.matmul(acts[k].T, delta, out=gW)
        gb[...] = delta.sum(axis=0)
        if k:
            delta = delta @ W.T
            delta *= acts[k] > 0
    return grad


def standardize(net: ValueNet, l: int, x: np.ndarray) -> np.ndarray:
    """Fixed affine input map: ``(x - shift) / scale`` or, for a matrix scale, ``(x - shift) @ scale``."""
    s = net.in_scale[l]
    if s.ndim == 2:
        return (x - net.in_shift[l]) @ s
    return (x - net.in_shift[l]) / s


def value(net: ValueNet, l: int, x: np.ndarray, payoff: np.ndarray) -> np.ndarray:
    """``V_theta(x, t_l)``; at ``l == L`` the payoff itself."""
    payoff = np.asarray(payoff, dtype=float)
    if l == net.L:
        return payoff.copy()
    if not 0 <= l < net.L:
        raise IndexError(f"time index {l} outside 0..{net.L}")
    lay = net.layouts[l]
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != lay.input_dim:
        raise InvalidConfigError(f"features have {x.shape[1]} columns, layout expects {lay.input_dim}")
    y = net.out_scale * forward(lay, net.thetas[l], standardize(net, l, x))
    return payoff + y if lay.residual_payoff else y


def policy_from_value(v, g, lam: float, dt: float) -> np.ndarray:
    """``pi = exp(-(V - g)/lam)`` (exponent clamped to +-60), capped so ``pi dt <= 1``."""
    return np.minimum(soft_intensity(np.asarray(v) - np.asarray(g), lam), 1.0 / dt)
