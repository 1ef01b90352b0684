"""Truncation operator Tn, its inverse and the entropy density Ln.

    Tn(r) = r                      for r <= n
    Tn(r) = n + 1 - exp(-(r - n))  for r > n

Tn is C^1 with Lipschitz derivative, increasing, concave and saturates at
n + 1. Ln(sigma) = int_0^sigma Tn'(r) ln r dr, which equals sigma (ln sigma - 1)
below n and has a closed form in the exponential integral above n.
"""

from __future__ import annotations

import numpy as np
from scipy.special import exp1

from .errors import RangeViolation


def _scaled_e1(x):
    """exp(x) E1(x) for x > 0, using the asymptotic series where exp overflows."""
    x = np.asarray(x, dtype=float)
    big = x > 700.0
    xs = np.where(big, 1.0, x)
    out = np.exp(xs) * exp1(xs)
    xb = np.where(big, x, 1.0)
    series = (1.0 - 1.0 / xb + 2.0 / xb**2 - 6.0 / xb**3 + 24.0 / xb**4) / xb
    return np.where(big, series, out)


class Truncation:
    def __init__(self, n: int):
        if int(n) != n or n < 1:
            raise ValueError(f"truncation level must be a positive integer, got {n}")
        self.n = int(n)

    def __repr__(self):
        return f"Truncation(n={self.n})"

    def apply(self, r):
        r = np.asarray(r, dtype=float)
        n = self.n
        return np.where(r <= n, r, n + 1.0 - np.exp(-(np.maximum(r, n) - n)))

    def derivative(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r <= self.n, 1.0, np.exp(-(np.maximum(r, self.n) - self.n)))

    def gamma(self, s):
        """Inverse of ``apply``; raises RangeViolation for s >= n + 1."""
        s = np.asarray(s, dtype=float)
        n = self.n
        bad = ~(s < n + 1.0)
        if np.any(bad):
            i = int(np.argmax(np.where(np.isnan(s), np.inf, s)))
            idx = np.unravel_index(i, s.shape) if s.ndim else None
            raise RangeViolation(s.flat[i], n, idx)
        gap = np.where(s > n, n + 1.0 - s, 1.0)
        return np.where(s <= n, s, n - np.log(gap))

    def entropy(self, sigma):
        """Ln(sigma) for sigma >= 0, with Ln(0) = 0."""
        sigma = np.asarray(sigma, dtype=float)
        n = float(self.n)
        safe = np.where(sigma > 0, sigma, 1.0)
        low = np.where(sigma > 0, sigma * (np.log(safe) - 1.0), 0.0)
        hi_s = np.maximum(sigma, n)
        # e^n (E1(n) - E1(s)) = scaled(n) - e^{n-s} scaled(s)
        decay = np.exp(n - hi_s)
        high = (n * (np.log(n) - 1.0) + np.log(n) - decay * np.log(hi_s)
                + _scaled_e1(n) - decay * _scaled_e1(hi_s))
        return np.where(sigma <= n, low, high)
