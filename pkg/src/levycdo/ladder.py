"""Survival arithmetic for single-mark loss ladders.

With a single mark size y0 and a constant base jump rate rho, the barrier
indicator 1{L <= x} survives exactly while fewer than k+1 further jumps
occur, where k = floor((x - l)/y0) counts the jumps the slice can absorb.
While every barrier of interest stays at or below 1 - y0, the jump epochs
form a Poisson process of rate rho, so everything about the slice reduces
to Poisson tail arithmetic:

    q(tau; k)   = P(at most k jumps in tau)      (survival weight)
    s(tau; k)   = rho * pmf(k; rho tau) / q(tau; k)   (forward hazard spread)

The hazard spread integrates in closed form, int_0^tau s = -log q(tau; k),
which the forward-curve machinery uses to avoid quadrature entirely. A
barrier strictly between 1 - y0 and 1 would let the support rule block the
crossing jump and break the Poisson picture; constructors reject it.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

__all__ = [
    "remaining_jumps",
    "survival_weight",
    "hazard_spread",
    "hazard_spread_integral",
    "contagion_jump",
    "contagion_jump_integral",
]

_EDGE = 1e-9  # guards floor() against x/y0 landing a hair under an integer


def remaining_jumps(ell: float, x: float, mark: float) -> int:
    """Jumps the (x - ell) cushion can absorb; -1 once the barrier is crossed.

    x = 1 is treated as uncrossable (the support rule caps the loss at 1)
    and reported as a large sentinel count.
    """
    if x >= 1.0:
        return 10**9
    if ell > x:
        return -1
    return int(np.floor((x - ell) / mark + _EDGE))


def survival_weight(tau, k: int, rate: float):
    """q(tau; k) = P(Poisson(rate*tau) <= k). Vectorized in tau."""
    tau = np.asarray(tau, dtype=float)
    if k < 0:
        return np.zeros_like(tau)
    if k >= 10**8:
        return np.ones_like(tau)
    lam = rate * tau
    term = np.ones_like(tau)
    acc = np.ones_like(tau)
    for j in range(1, k + 1):
        term = term * lam / j
        acc = acc + term
    return acc * np.exp(-lam)


def _pmf(tau, k: int, rate: float):
    tau = np.asarray(tau, dtype=float)
    lam = rate * tau
    out = np.exp(-lam)
    for j in range(1, k + 1):
        out = out * lam / j
    return out


def hazard_spread(tau, k: int, rate: float):
    """s(tau; k): the forward hazard of exhausting a k-jump cushion."""
    tau = np.asarray(tau, dtype=float)
    if k < 0:
        return np.zeros_like(tau)
    if k >= 10**8:
        return np.zeros_like(tau)
    return rate * _pmf(tau, k, rate) / survival_weight(tau, k, rate)


def hazard_spread_integral(tau, k: int, rate: float):
    """int_0^tau s(u; k) du = -log q(tau; k), exactly."""
    tau = np.asarray(tau, dtype=float)
    if k < 0:
        raise ConfigError("spread integral undefined for a crossed barrier")
    if k >= 10**8:
        return np.zeros_like(tau)
    return -np.log(survival_weight(tau, k, rate))


def contagion_jump(tau, k: int, rate: float):
    """Jump of the spread curve when the cushion drops from k to k-1 jumps."""
    if k <= 0 or k >= 10**8:
        return np.zeros_like(np.asarray(tau, dtype=float))
    return hazard_spread(tau, k - 1, rate) - hazard_spread(tau, k, rate)


def contagion_jump_integral(tau, k: int, rate: float):
    """Maturity integral of the spread jump: log(q_k / q_{k-1})."""
    tau = np.asarray(tau, dtype=float)
    if k <= 0 or k >= 10**8:
        return np.zeros_like(tau)
    return np.log(survival_weight(tau, k, rate) / survival_weight(tau, k - 1, rate))
