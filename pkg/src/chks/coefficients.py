"""Mobilities, source terms and parameter validation.

Sources:
    S(phi, sigma) = -m phi + h(phi, sigma)
    b(phi, sigma) = beta(phi) (kappa0 sigma - kappaInf sigma^p)

Mobility shapes:
    constant:  value
    rational:  m0 + (M - m0) g(phi) sigma / (1 + sigma),  g(phi) = 1 / (1 + a phi^2)

For the rational shape the nutrient integral N(phi, sigma) = int_0^sigma n ds
and its phi-derivative n1 have closed forms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import NegativeSigma

# Sources tolerate tiny negative nutrient values from round-off.
SIGMA_FLOOR = -1e-14

# max over phi of |g'(phi)| / sqrt(a) for g = 1 / (1 + a phi^2)
_G_SLOPE = 3.0 * math.sqrt(3.0) / 8.0


def _check_sigma(sigma):
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma < SIGMA_FLOOR):
        i = int(np.argmin(sigma))
        idx = np.unravel_index(i, sigma.shape) if sigma.ndim else None
        raise NegativeSigma(sigma.flat[i], idx)
    return np.maximum(sigma, 0.0)


@dataclass(frozen=True)
class Mobility:
    shape: str = "constant"
    value: float = 1.0
    m0: float = 1.0
    M: float = 1.0
    a: float = 1.0

    def __post_init__(self):
        if self.shape not in ("constant", "rational"):
            raise ValueError(f"unknown mobility shape {self.shape!r}")

    @property
    def is_constant(self):
        return self.shape == "constant" or self.M == self.m0

    @property
    def bounds(self):
        if self.shape == "constant":
            return self.value, self.value
        return self.m0, self.M

    @property
    def phi_slope(self):
        """Upper bound of |d mobility / d phi|."""
        if self.shape == "constant":
            return 0.0
        return (self.M - self.m0) * _G_SLOPE * math.sqrt(self.a)

    @property
    def lipschitz(self):
        return max(self.bounds[1], self.phi_slope)

    def _g(self, phi):
        return 1.0 / (1.0 + self.a * phi * phi)

    def _dg(self, phi):
        return -2.0 * self.a * phi / (1.0 + self.a * phi * phi) ** 2

    def __call__(self, phi, sigma):
        """Pointwise mobility; negative nutrient values are read as zero."""
        phi = np.asarray(phi, dtype=float)
        sigma = np.maximum(np.asarray(sigma, dtype=float), 0.0)
        if self.shape == "constant":
            return np.full(np.broadcast(phi, sigma).shape, float(self.value))
        return self.m0 + (self.M - self.m0) * self._g(phi) * sigma / (1.0 + sigma)

    def big_n(self, phi, sigma):
        sigma = _check_sigma(sigma)
        phi = np.asarray(phi, dtype=float)
        if self.shape == "constant":
            return self.value * sigma + 0.0 * phi
        return self.m0 * sigma + (self.M - self.m0) * self._g(phi) * (sigma - np.log1p(sigma))

    def n1(self, phi, sigma):
        sigma = _check_sigma(sigma)
        phi = np.asarray(phi, dtype=float)
        if self.shape == "constant":
            return 0.0 * sigma + 0.0 * phi
        return (self.M - self.m0) * self._dg(phi) * (sigma - np.log1p(sigma))


@dataclass(frozen=True)
class Beta:
    """Trapezoid: B on [-3/2, 3/2], linear ramps to zero at |phi| = 2."""

    B: float = 1.0
    b0: float | None = None

    @property
    def lower(self):
        return self.B if self.b0 is None else self.b0

    def __call__(self, phi):
        phi = np.asarray(phi, dtype=float)
        return self.B * np.clip((2.0 - np.abs(phi)) / 0.5, 0.0, 1.0)


@dataclass(frozen=True)
class HSpec:
    """Bounded source part h: a constant or a bilinear table in (phi, sigma).

    Table queries outside the node range are clamped to the boundary nodes.
    """

    value: float = 0.0
    phi_nodes: tuple | None = None
    sigma_nodes: tuple | None = None
    table: tuple | None = None
    _interp: object = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.table is None:
            return
        pn = np.asarray(self.phi_nodes, dtype=float)
        sn = np.asarray(self.sigma_nodes, dtype=float)
        vals = np.asarray(self.table, dtype=float)
        if vals.shape != (pn.size, sn.size):
            raise ValueError(f"h table shape {vals.shape} does not match nodes ({pn.size}, {sn.size})")
        interp = RegularGridInterpolator((pn, sn), vals, method="linear")
        object.__setattr__(self, "_interp", interp)

    @property
    def is_constant(self):
        return self.table is None

    @property
    def sup(self):
        if self.table is None:
            return abs(self.value)
        return float(np.max(np.abs(self.table)))

    def __call__(self, phi, sigma):
        phi = np.asarray(phi, dtype=float)
        sigma = np.asarray(sigma, dtype=float)
        shape = np.broadcast(phi, sigma).shape
        if self.table is None:
            return np.full(shape, float(self.value))
        pn, sn = self._interp.grid
        p = np.clip(np.broadcast_to(phi, shape), pn[0], pn[-1])
        s = np.clip(np.broadcast_to(sigma, shape), sn[0], sn[-1])
        return self._interp(np.stack([p.ravel(), s.ravel()], axis=-1)).reshape(shape)


@dataclass(frozen=True)
class ModelParams:
    chi: float = 1.0
    eps: float = 1.0
    m: float = 0.0
    h: HSpec = HSpec()
    kappa0: float = 1.0
    kappa_inf: float = 1.0
    p: float = 2.0
    beta: Beta = Beta()
    mob_m: Mobility = Mobility()
    mob_n: Mobility = Mobility()

    @property
    def H(self):
        return self.h.sup

    def source_s(self, phi, sigma):
        return -self.m * np.asarray(phi, dtype=float) + self.h(phi, sigma)

    def source_b(self, phi, sigma):
        sigma = _check_sigma(sigma)
        return self.beta(phi) * (self.kappa0 * sigma - self.kappa_inf * sigma**self.p)


P_WINDOWS = {1: (1.0, 2.0, False), 2: (1.5, 2.0, True), 3: (1.6, 2.0, True)}


@dataclass
class ValidationReport:
    errors: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.errors

    def __bool__(self):
        return self.ok

    def __str__(self):
        return "\n".join(self.errors)


def validate(params: ModelParams, dim: int, strict3d: bool = False) -> ValidationReport:
    """Check parameters against the model's standing assumptions.

    Never raises; every violated inequality is listed with both sides.
    """
    rep = ValidationReport()
    err = rep.errors.append
    if dim not in P_WINDOWS:
        err(f"dimension: d = {dim} must be 1, 2 or 3")
    if not 0.0 < params.eps <= 1.0:
        err(f"interface parameter: eps = {params.eps:g} must lie in (0, 1]")
    if not params.chi >= 0.0:
        err(f"chemotaxis: chi = {params.chi:g} must be >= 0")
    m, H = params.m, params.H
    if m < 0:
        err(f"compatibility: m = {m:g} must be >= 0")
    elif not (m == 0 and H == 0):
        if m == 0:
            err(f"compatibility: H/m < 1 requires m > 0 (m = {m:g}, H = {H:g})")
        elif H / m >= 1.0:
            err(f"compatibility: H/m = {H / m:g} must be < 1 (H = {H:g}, m = {m:g})")
    if dim in P_WINDOWS:
        lo, hi, closed = P_WINDOWS[dim]
        inside = (lo <= params.p if closed else lo < params.p) and params.p <= hi
        if not inside:
            window = f"[{lo:g}, {hi:g}]" if closed else f"({lo:g}, {hi:g}]"
            err(f"logistic exponent: p = {params.p:g} must lie in {window} for d = {dim}")
    if not (params.kappa0 > 0 and params.kappa_inf > 0):
        err(f"logistic rates: kappa0 = {params.kappa0:g} and kappaInf = {params.kappa_inf:g} must be > 0")
    b = params.beta
    if not (0.0 < b.lower <= b.B):
        err(f"beta plateau: need 0 < b0 <= B (b0 = {b.lower:g}, B = {b.B:g})")
    for name, mob in (("phase", params.mob_m), ("nutrient", params.mob_n)):
        lo_, hi_ = mob.bounds
        if not (0.0 < lo_ <= hi_):
            err(f"{name} mobility: need 0 < m0 <= M (m0 = {lo_:g}, M = {hi_:g})")
        if mob.shape == "rational" and not mob.a >= 0:
            err(f"{name} mobility: shape parameter a = {mob.a:g} must be >= 0")
        elif mob.phi_slope > hi_:
            err(f"{name} mobility: phi-slope bound {mob.phi_slope:g} exceeds M = {hi_:g}")
    if strict3d:
        bound = math.sqrt(2.0 * params.kappa_inf * b.lower) if params.kappa_inf > 0 and b.lower > 0 else 0.0
        if not params.chi < bound:
            err(f"smallness: chi = {params.chi:g} must be < sqrt(2 kappaInf b0) = {bound:.6g}")
        if params.mob_n.bounds != (1.0, 1.0):
            err("nutrient mobility: strict 3D mode requires a constant nutrient mobility equal to 1")
    return rep
