import numpy as np
from scipy.special import xlogy

# Exponent clamp for exp(-(u - h)/lam); e^60 already forces exercise within one step.
E_MAX = 60.0


def entropy_reward(pi):
    """``R(pi) = pi - pi log pi`` with ``R(0) = 0``."""
    pi = np.asarray(pi, dtype=float)
    return pi - xlogy(pi, pi)


def soft_intensity(gap, lam, e_max: float = E_MAX):
    """``exp(-gap/lam)`` with the exponent clamped to ``[-e_max, e_max]``."""
    return np.exp(np.clip(-np.asarray(gap, dtype=float) / lam, -e_max, e_max))
