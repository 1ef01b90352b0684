"""Free energy, its coercivity constant and the discrete dissipation budget.

    F(phi, sigma) = int eps/2 |grad phi|^2 + F(phi)/eps                 (Ginzburg-Landau part)
                  + int sigma (ln sigma - 1) + chi sigma (1 - phi)      (mixing part)

With a truncation level the mixing part becomes Ln(sigma) + chi Tn(sigma)(1 - phi)
and the potential is the regularized one carried by the PotentialSpec.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .coefficients import ModelParams, _check_sigma
from .grid import Grid
from .potentials import PotentialSpec
from .state import State
from .truncation import Truncation

# Nutrient values below this carry no entropy flux.
SIGMA_TINY = 1e-300


@dataclass(frozen=True)
class EnergyBreakdown:
    total: float
    ginzburg_landau: float
    mixing: float


def entropy_density(sigma):
    """sigma (ln sigma - 1) with the value 0 at sigma = 0."""
    sigma = _check_sigma(sigma)
    safe = np.where(sigma > 0, sigma, 1.0)
    return np.where(sigma > 0, sigma * (np.log(safe) - 1.0), 0.0)


def free_energy(grid: Grid, state: State, spec: PotentialSpec, params: ModelParams,
                truncation: Truncation | None = None) -> EnergyBreakdown:
    phi, sigma = state.phi, state.sigma
    eps = params.eps
    gl = 0.5 * eps * grid.grad_sq(phi) + grid.integrate(spec.energy(phi)) / eps
    if truncation is None:
        mix = grid.integrate(entropy_density(sigma) + params.chi * sigma * (1.0 - phi))
    else:
        _check_sigma(sigma)
        s = np.maximum(sigma, 0.0)
        mix = grid.integrate(truncation.entropy(s) + params.chi * truncation.apply(s) * (1.0 - phi))
    return EnergyBreakdown(gl + mix, gl, mix)


def coercivity_constant(grid: Grid, spec: PotentialSpec, params: ModelParams) -> float:
    """C with  F + C >= 1/2 (|phi|^2 + eps |grad phi|^2) + 1/2 |sigma ln sigma|  (integrated)

    for |phi| <= 1, sigma >= 0. Pointwise: -lam phi^2/(2 eps) >= -lam/(2 eps),
    phi^2/2 <= 1/2, and sigma ln sigma - sigma - |sigma ln sigma|/2 >= -(1 + 3/(2e)).
    The chemotactic term is nonnegative on this range.
    """
    c_sigma = 1.0 + 1.5 / math.e
    return grid.volume * (0.5 + spec.lam / (2.0 * params.eps) + c_sigma)


def log_mean(a, b):
    """Logarithmic mean (a - b)/(ln a - ln b) for positive a, b."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    pos = (a > 0) & (b > 0)
    sa, sb = np.where(pos, a, 1.0), np.where(pos, b, 1.0)
    d = np.log(sa) - np.log(sb)
    # b (e^d - 1)/d, with its Taylor series where d is tiny
    small = np.abs(d) < 1e-8
    ratio = np.where(small, 1.0 + 0.5 * d, np.expm1(d) / np.where(small, 1.0, d))
    lm = sb * ratio
    return np.where(pos, lm, 0.0)


def _interior(face, axis):
    return np.take(face, range(1, face.shape[axis] - 1), axis=axis)


def phase_dissipation(grid: Grid, mob_faces, mu) -> float:
    """sum over faces of m_f |grad mu|^2, scaled by cell volume."""
    return sum(float(np.sum(m * g * g)) for m, g in zip(mob_faces, grid.face_grad(mu))) * grid.cell_volume


def nutrient_dissipation(grid: Grid, mob_faces, sigma, phi, chi) -> float:
    """sum over faces of sigma_f n_f |grad(ln sigma + chi (1 - phi))|^2.

    sigma_f is the logarithmic mean, which makes sigma_f grad(ln sigma) = grad sigma
    exactly; faces touching a cell with sigma below SIGMA_TINY contribute 0.
    """
    ok = sigma > SIGMA_TINY
    logs = np.log(np.where(ok, sigma, 1.0))
    pot = logs - chi * phi
    total = 0.0
    for axis, (n_f, h) in enumerate(zip(mob_faces, grid.spacing)):
        lo = np.take(sigma, range(0, grid.shape[axis] - 1), axis=axis)
        hi = np.take(sigma, range(1, grid.shape[axis]), axis=axis)
        both = np.take(ok, range(0, grid.shape[axis] - 1), axis=axis) & np.take(ok, range(1, grid.shape[axis]), axis=axis)
        g = np.diff(pot, axis=axis) / h
        sf = np.where(both, log_mean(lo, hi), 0.0)
        total += float(np.sum(sf * _interior(n_f, axis) * g * g))
    return total * grid.cell_volume


def dissipation_residual(grid: Grid, prev: State, next_: State, dt: float, spec: PotentialSpec,
                         params: ModelParams, *, source_power: float = 0.0, c: float = 0.0,
                         truncation: Truncation | None = None, energies=None) -> float:
    """Signed violation of the discrete energy law for one step.

    [F(next) - F(prev)]/dt + D_phase + D_nutrient - source_power - c (F(prev) + C)

    Phase mobility is taken at the previous state, nutrient mobility at
    (next.phi, prev.sigma), matching the stepper's lagging. A value <= 0
    means the law holds for the step. ``energies`` may pass precomputed
    (F(prev), F(next)) totals.
    """
    if energies is None:
        energies = (free_energy(grid, prev, spec, params, truncation).total,
                    free_energy(grid, next_, spec, params, truncation).total)
    e0, e1 = energies
    m_f = grid.face_average(params.mob_m(prev.phi, prev.sigma))
    n_f = grid.face_average(params.mob_n(next_.phi, prev.sigma))
    d_phase = phase_dissipation(grid, m_f, next_.mu)
    d_nut = nutrient_dissipation(grid, n_f, next_.sigma, next_.phi, params.chi)
    budget = c * (e0 + coercivity_constant(grid, spec, params)) if c else 0.0
    return (e1 - e0) / dt + d_phase + d_nut - source_power - budget
