"""Singular configuration potentials and their regularized family.

The potential is split as F = F1 + F2 with F1 convex and singular at
r = +-1 and F2(r) = -lam r^2 / 2. Two convex parts are available:

* ``floryHuggins``: F1(r) = (1+r) ln(1+r) + (1-r) ln(1-r)
* ``negLog``:       F1(r) = -ln(1 - r^2)

Both are normalized with F1(0) = F1'(0) = 0. The regularized family Fn
replaces F1' by its Yosida approximation of order 1/n plus the growth
term n^3 (|r|-1)_+ sign r, which makes it defined on the whole line.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

from .errors import DomainViolation

KINDS = ("floryHuggins", "negLog")

# Constant of the exponential growth bound |F1''| <= exp(C (|F1'| + 1)).
GROWTH_CONSTANT = 2.0


def _check_kind(kind):
    if kind not in KINDS:
        raise ValueError(f"unknown potential kind {kind!r}; expected one of {KINDS}")


def check_domain(r):
    """Raise DomainViolation if any entry of ``r`` has |r| >= 1."""
    r = np.asarray(r, dtype=float)
    margin = 1.0 - np.abs(r)
    bad = ~(margin > 0)
    if np.any(bad):
        # NaN margins compare as bad too; report the worst finite one if any
        m = np.where(np.isnan(margin), -np.inf, margin)
        i = int(np.argmin(m))
        idx = np.unravel_index(i, r.shape) if r.ndim else None
        raise DomainViolation(r.flat[i], margin.flat[i], idx)


def eval_f1(kind, r):
    _check_kind(kind)
    check_domain(r)
    r = np.asarray(r, dtype=float)
    if kind == "floryHuggins":
        return (1 + r) * np.log1p(r) + (1 - r) * np.log1p(-r)
    return -np.log1p(-r * r)


def eval_f1_prime(kind, r):
    _check_kind(kind)
    check_domain(r)
    r = np.asarray(r, dtype=float)
    if kind == "floryHuggins":
        return 2.0 * np.arctanh(r)
    return 2.0 * r / (1.0 - r * r)


def eval_f1_second(kind, r):
    _check_kind(kind)
    check_domain(r)
    r = np.asarray(r, dtype=float)
    if kind == "floryHuggins":
        return 2.0 / (1.0 - r * r)
    return 2.0 * (1.0 + r * r) / (1.0 - r * r) ** 2


# ----------------------------------------------------------------------
# Yosida regularization, parametrized by w = F1'(s) at the resolvent point s.
# The resolvent equation s + F1'(s)/n = r becomes inv(w) + w/n = r, where
# inv = (F1')^{-1} maps the whole line into (-1, 1).


def _inv(kind, w):
    if kind == "floryHuggins":
        return np.tanh(0.5 * w)
    return w / (1.0 + np.sqrt(1.0 + w * w))


def _inv_prime(kind, w):
    if kind == "floryHuggins":
        e = np.exp(-np.abs(w))
        return 2.0 * e / (1.0 + e) ** 2
    q = np.sqrt(1.0 + w * w)
    return 1.0 / (q * (1.0 + q))


def _f1_at_inv(kind, w):
    """F1(inv(w)) evaluated without cancellation near the singularity."""
    if kind == "floryHuggins":
        a, b = expit(w), expit(-w)
        return 2.0 * np.log(2.0) + 2.0 * (a * log_expit(w) + b * log_expit(-w))
    return np.log(0.5 * (1.0 + np.sqrt(1.0 + w * w)))


def yosida_w(kind, n, r, tol=1e-12, maxiter=200):
    """Solve inv(w) + w/n = r for w (the Yosida value F1'_n(r)).

    Safeguarded Newton on the bracket [n(r-1), n(r+1)]; the residual is
    increasing in w so bisection always makes progress.
    """
    _check_kind(kind)
    if n <= 0:
        raise ValueError("regularization index must be positive")
    r = np.asarray(r, dtype=float)
    lo = n * (r - 1.0)
    hi = n * (r + 1.0)
    w = np.clip(n * r / (1.0 + n), lo, hi)
    scale = 1.0 + np.abs(r)
    for _ in range(maxiter):
        g = _inv(kind, w) + w / n - r
        done = np.abs(g) <= tol * scale
        if np.all(done):
            return w
        lo = np.where(g < 0, w, lo)
        hi = np.where(g > 0, w, hi)
        step = g / (_inv_prime(kind, w) + 1.0 / n)
        trial = w - step
        outside = (trial <= lo) | (trial >= hi) | ~np.isfinite(trial)
        trial = np.where(outside, 0.5 * (lo + hi), trial)
        w = np.where(done, w, trial)
        if np.all(hi - lo <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(w))):
            return w
    return w


def resolvent(kind, r, scale=1.0):
    """Solve s + scale * F1'(s) = r for s in (-1, 1)."""
    w = yosida_w(kind, 1.0 / scale, r)
    return _inv(kind, w)


def eval_fn(kind, n, r):
    """Regularized convex part Fn (Moreau envelope plus quadratic growth)."""
    r = np.asarray(r, dtype=float)
    w = yosida_w(kind, n, r)
    excess = np.maximum(np.abs(r) - 1.0, 0.0)
    return _f1_at_inv(kind, w) + w * w / (2.0 * n) + 0.5 * n**3 * excess**2


def eval_fn_prime(kind, n, r):
    r = np.asarray(r, dtype=float)
    w = yosida_w(kind, n, r)
    return w + n**3 * np.maximum(np.abs(r) - 1.0, 0.0) * np.sign(r)


def eval_fn_second(kind, n, r):
    r = np.asarray(r, dtype=float)
    w = yosida_w(kind, n, r)
    return 1.0 / (_inv_prime(kind, w) + 1.0 / n) + n**3 * (np.abs(r) > 1.0)


@dataclass(frozen=True)
class PotentialSpec:
    """Potential kind, concave coefficient ``lam`` and optional index ``n``.

    With ``n`` set this object describes the regularized family built on
    ``kind`` and is defined for every real argument.
    """

    kind: str = "floryHuggins"
    lam: float = 0.0
    n: int | None = None

    def __post_init__(self):
        _check_kind(self.kind)
        if not self.lam >= 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.n is not None and int(self.n) != self.n or (self.n is not None and self.n < 1):
            raise ValueError(f"regularization index must be a positive integer, got {self.n}")

    @property
    def singular(self) -> bool:
        return self.n is None

    def with_n(self, n):
        return PotentialSpec(self.kind, self.lam, n)

    def convex(self, r):
        return eval_f1(self.kind, r) if self.n is None else eval_fn(self.kind, self.n, r)

    def convex_prime(self, r):
        return eval_f1_prime(self.kind, r) if self.n is None else eval_fn_prime(self.kind, self.n, r)

    def convex_second(self, r):
        return eval_f1_second(self.kind, r) if self.n is None else eval_fn_second(self.kind, self.n, r)

    def energy(self, r):
        """Full potential F = F1 - lam r^2 / 2 (regularized when ``n`` is set)."""
        r = np.asarray(r, dtype=float)
        return self.convex(r) - 0.5 * self.lam * r * r

    def derivative(self, r):
        r = np.asarray(r, dtype=float)
        return self.convex_prime(r) - self.lam * r
