"""Reference prices computed independently of the package."""

import math

import numpy as np
from scipy.stats import norm


def bs_put(s, k, r, sigma, t):
    """Black-Scholes European put."""
    s = np.asarray(s, dtype=float)
    if t <= 0:
        return np.maximum(k - s, 0.0)
    d1 = (np.log(s / k) + (r + 0.5 * sigma**2) * t) / (sigma * math.sqrt(t))
    d2 = d1 - sigma * math.sqrt(t)
    return k * math.exp(-r * t) * norm.cdf(-d2) - s * norm.cdf(-d1)


def binomial_american_put(s0, k, r, sigma, t, steps=2000):
    """Cox-Ross-Rubinstein tree with early exercise at every node."""
    dt = t / steps
    u = math.exp(sigma * math.sqrt(dt))
    d = 1.0 / u
    q = (math.exp(r * dt) - d) / (u - d)
    disc = math.exp(-r * dt)
    j = np.arange(steps + 1)
    s = s0 * u ** (steps - j) * d**j
    v = np.maximum(k - s, 0.0)
    for n in range(steps - 1, -1, -1):
        s = s0 * u ** (n - np.arange(n + 1)) * d ** np.arange(n + 1)
        v = np.maximum(disc * (q * v[:-1] + (1 - q) * v[1:]), k - s)
    return float(v[0])


def expected_positive_part_h1(t1=0.01):
    """Stopping W_t = t xi on a grid starting at t1: E[xi^+] - t1 E[xi^-]."""
    half = 1.0 / math.sqrt(2.0 * math.pi)
    return half - t1 * half
