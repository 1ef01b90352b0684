"""Semi-implicit time stepping for the coupled phase/nutrient system.

One step of size dt:

1. Phase step (convex splitting, mobility lagged):
       phi1 - dt div(m(phi0, sigma0) grad mu1) = phi0 + dt S(phi0, sigma0)
       mu1 = -eps lap phi1 + (F1'(phi1) - lam phi0)/eps - chi sigma0
   solved by damped block Newton with a fraction-to-boundary rule.
2. Nutrient step with phi1 frozen:
       sigma_t = div(n grad sigma) - chi div(sigma n grad phi1) + b
   implicit diffusion, upwinded chemotactic drift (explicit by default),
   growth explicit and decay linearized implicitly. The drift is substepped
   when the explicit part would break positivity.

``Mode.OLD`` swaps step 2 for sigma_t = lap sigma - chi lap phi + b, and
``Mode.APPROX`` runs the regularized system (Fn potential, truncated nutrient
variable s = Tn(sigma)).
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import diagnostics as diag
from .coefficients import ModelParams
from .errors import (
    CHKSError, NewtonDivergence, PositivityLoss, StepFailure, TimeStepError,
)
from .grid import DIRECT_LIMIT, Grid, solve_linear
from .potentials import PotentialSpec, check_domain
from .state import State
from .truncation import Truncation

log = logging.getLogger(__name__)

POSITIVITY_TOL = 1e-12
FRACTION_TO_BOUNDARY = 0.95


class Mode(str, enum.Enum):
    FULL = "full"
    SOURCELESS = "sourceless"
    OLD = "old"
    APPROX = "approx"


@dataclass(frozen=True)
class SchemeConfig:
    dt: float
    mode: Mode = Mode.FULL
    n: int | None = None
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    lin_tol: float = 1e-6
    sigma_lin_tol: float = 1e-13
    theta_cross: float = 0.0
    max_halvings: int = 5
    # forcing(t) -> (f_phi, f_sigma), added to the right-hand sides at t_{k+1}
    forcing: Callable | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if not self.dt > 0:
            raise ValueError(f"time step must be positive, got {self.dt}")
        if not (self.newton_tol > 0 and self.lin_tol > 0 and self.sigma_lin_tol > 0):
            raise ValueError("tolerances must be positive")
        if not 0.0 <= self.theta_cross <= 1.0:
            raise ValueError("theta_cross must lie in [0, 1]")
        if self.mode is Mode.APPROX and (self.n is None or self.n < 1):
            raise ValueError("approximation mode needs a positive truncation level n")

    @property
    def truncation(self):
        return Truncation(self.n) if self.mode is Mode.APPROX else None

    def with_dt(self, dt):
        return _replace(self, dt=dt)


def _replace(obj, **kw):
    from dataclasses import replace
    return replace(obj, **kw)


@dataclass
class SigmaStepInfo:
    """Time-integrated face fluxes and cell sources of one nutrient step."""

    diffusive: tuple
    chemotactic: tuple
    source: np.ndarray
    substeps: int = 1
    dt_sub: float = 0.0


@dataclass
class StepInfo:
    newton_iters: int
    sigma: SigmaStepInfo
    source_power: float
    dt_used: float


# ----------------------------------------------------------------------
# helpers


def _sources_on(cfg):
    return cfg.mode is not Mode.SOURCELESS


def _forcing(cfg, t):
    if cfg.forcing is None:
        return None, None
    return cfg.forcing(t)


def coupling(state_sigma, params, truncation=None):
    if truncation is None:
        return params.chi * state_sigma
    return params.chi * truncation.apply(np.maximum(state_sigma, 0.0))


def chemical_potential(grid, phi, sigma, spec, params, truncation=None, phi_explicit=None):
    """mu = -eps lap phi + (F1'(phi) - lam phi_explicit)/eps - chi sigma."""
    if phi_explicit is None:
        phi_explicit = phi
    eps = params.eps
    return (-eps * grid.laplacian(phi) + (spec.convex_prime(phi) - spec.lam * phi_explicit) / eps
            - coupling(sigma, params, truncation))


def initial_state(grid, phi0, sigma0, spec, params, truncation=None, t=0.0) -> State:
    phi0 = np.array(phi0, dtype=float).reshape(grid.shape)
    sigma0 = np.array(sigma0, dtype=float).reshape(grid.shape)
    mu0 = chemical_potential(grid, phi0, sigma0, spec, params, truncation)
    return State(phi0, mu0, sigma0, float(t))


def _spectral_precond(grid, symbol):
    return grid.spectral_solver(symbol)


# ----------------------------------------------------------------------
# phase step


def step_ch(grid: Grid, state: State, cfg: SchemeConfig, spec: PotentialSpec, params: ModelParams,
            truncation: Truncation | None = None):
    """Return (phi1, mu1, newton_iterations, source_array)."""
    dt, eps = cfg.dt, params.eps
    phi0, sigma0 = state.phi, state.sigma
    N = grid.size
    if spec.singular:
        check_domain(phi0)

    m_f = grid.face_average(params.mob_m(phi0, sigma0))
    A_m = grid.diffusion_matrix(m_f)
    L = grid.laplacian_matrix
    c = coupling(sigma0, params, truncation).ravel()
    explicit = (-spec.lam * phi0 / eps).ravel()

    S = params.source_s(phi0, sigma0) if _sources_on(cfg) else np.zeros(grid.shape)
    f_phi, _ = _forcing(cfg, state.t + dt)
    if f_phi is not None:
        S = S + f_phi
    rhs = (phi0 + dt * S).ravel()

    def residual(phi, mu):
        r1 = phi - dt * (A_m @ mu) - rhs
        r2 = mu - (-eps * (L @ phi) + spec.convex_prime(phi) / eps + explicit - c)
        return r1, r2

    # Start from the explicit source update so the mass equation is met from
    # the first iterate; fall back to a uniform shift, then to phi0.
    phi = rhs.copy()
    if spec.singular and not np.all(np.abs(phi) < 1):
        phi = phi0.ravel() + dt * float(np.mean(S))
        if not np.all(np.abs(phi) < 1):
            phi = phi0.ravel().copy()
    mu = -eps * (L @ phi) + spec.convex_prime(phi) / eps + explicit - c

    mu_scale = 1.0 + np.max(np.abs(mu)) + eps * np.max(np.abs(L @ phi))
    r1, r2 = residual(phi, mu)

    def merit(r1, r2):
        return float(np.sqrt((np.sum(r1 * r1) + np.sum((r2 / mu_scale) ** 2)) / (2 * N)))

    # round-off floors: residual entries cannot be resolved below a few ulps
    # of the largest term that enters them
    abs_am = float(np.max(abs(A_m).sum(axis=1)))
    abs_l = float(np.max(abs(L).sum(axis=1)))
    ulp = 64 * np.finfo(float).eps

    def converged(r1, r2):
        fl1 = ulp * (1.0 + np.max(np.abs(rhs)) + dt * abs_am * np.max(np.abs(mu)))
        fl2 = ulp * (mu_scale + eps * abs_l * np.max(np.abs(phi)))
        return (np.max(np.abs(r1)) <= max(cfg.newton_tol, fl1)
                and np.max(np.abs(r2)) <= max(cfg.newton_tol * mu_scale, fl2))

    history = [merit(r1, r2)]
    m_bar = float(np.mean(params.mob_m(phi0, sigma0)))
    kappa = grid.neumann_eigenvalues
    iters = 0
    while not converged(r1, r2):
        if iters >= cfg.newton_max_iter:
            raise NewtonDivergence("phase Newton iteration cap reached", history)
        d2 = spec.convex_second(phi) / eps
        b = -r1 - dt * (A_m @ r2)
        if N <= DIRECT_LIMIT:
            K = -eps * L + sp.diags(d2)
            J = sp.identity(N, format="csr") - dt * (A_m @ K)
            dphi = solve_linear(J, b)
        else:
            def matvec(v, d2=d2):
                return v - dt * (A_m @ (-eps * (L @ v) + d2 * v))
            J = spla.LinearOperator((N, N), matvec=matvec, dtype=float)
            # the median ignores the few stiff cells that would skew a mean
            symbol = 1.0 + dt * m_bar * kappa * (eps * kappa + float(np.median(d2)))
            dphi = _krylov_or_direct(J, b, grid.spectral_solver(symbol), cfg.lin_tol,
                                     lambda d2=d2: sp.identity(N, format="csr")
                                     - dt * (A_m @ (-eps * L + sp.diags(d2))), accept=1e-2)
        # keep the mass balance exact despite inexact linear solves
        dphi += (-np.sum(r1) - np.sum(dphi)) / N
        dmu = (-eps * (L @ dphi) + d2 * dphi) - r2

        alpha = 1.0
        if spec.singular:
            with np.errstate(divide="ignore", invalid="ignore"):
                up = np.where(dphi > 0, FRACTION_TO_BOUNDARY * (1 - phi) / dphi, np.inf)
                dn = np.where(dphi < 0, FRACTION_TO_BOUNDARY * (1 + phi) / -dphi, np.inf)
            alpha = min(1.0, float(np.min(up)), float(np.min(dn)))
        m0 = history[-1]
        for _ in range(40):
            phi_t, mu_t = phi + alpha * dphi, mu + alpha * dmu
            r1_t, r2_t = residual(phi_t, mu_t)
            m_t = merit(r1_t, r2_t)
            if m_t < m0:
                break
            alpha *= 0.5
        else:
            history.append(m_t)
            raise NewtonDivergence("phase Newton line search found no decrease", history)
        phi, mu, r1, r2 = phi_t, mu_t, r1_t, r2_t
        history.append(m_t)
        iters += 1
    return phi.reshape(grid.shape), mu.reshape(grid.shape), iters, S


def _krylov_or_direct(J, b, precond, rtol, assemble, symmetric=False, accept=None):
    """Preconditioned Krylov solve with a sparse LU fallback.

    With ``accept`` set, a Krylov result whose relative residual is below
    ``accept`` is returned even if ``rtol`` was not reached (inexact Newton).
    """
    n = b.size
    M = spla.LinearOperator((n, n), matvec=precond, dtype=float)
    if symmetric:
        x, info = spla.cg(J, b, M=M, rtol=rtol, atol=0.0, maxiter=500)
    else:
        x, info = spla.gmres(J, b, M=M, rtol=rtol, atol=0.0, restart=60, maxiter=1)
    if np.all(np.isfinite(x)):
        if info == 0:
            return x
        if accept is not None:
            bn = np.linalg.norm(b)
            if bn == 0 or np.linalg.norm(J @ x - b) <= accept * bn:
                return x
    log.debug("Krylov solve stalled (info=%s); using sparse LU", info)
    return solve_linear(assemble(), b)


# ----------------------------------------------------------------------
# nutrient step


def _drift(grid, n_f, phi1, chi):
    return tuple(chi * n * g for n, g in zip(n_f, grid.face_grad(phi1)))


def _substeps(dt, rate, cfg, ratio=None):
    """Number of halvings k so that (dt/2^k)(1-theta) rate <= ratio."""
    expl = 1.0 - cfg.theta_cross
    if ratio is None:
        ratio = 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        need = np.where(rate > 0, expl * rate / ratio, 0.0)
    worst = float(np.max(need)) if need.size else 0.0
    for k in range(cfg.max_halvings + 1):
        if dt / 2**k * worst <= 1.0 + 1e-12:
            return k
    raise TimeStepError(
        f"nutrient drift needs dt <= {1.0 / worst:.3e} for positivity; "
        f"dt = {dt:.3e} still too large after {cfg.max_halvings} halvings"
    )


def _sigma_system(grid, tau, D, U, decay, theta):
    N = grid.size
    A = sp.identity(N, format="csr") - tau * D + sp.diags(tau * decay.ravel())
    if theta > 0:
        A = A + tau * theta * U
    return A


def _solve_sigma(grid, A, b, tau, n_bar, decay_bar, theta, rtol):
    sym = theta == 0
    if grid.size <= DIRECT_LIMIT:
        return solve_linear(A, b)
    symbol = 1.0 + tau * n_bar * grid.neumann_eigenvalues + tau * decay_bar
    return _krylov_or_direct(A, b, grid.spectral_solver(symbol), rtol, lambda: A, symmetric=sym)


def step_sigma(grid: Grid, state: State, phi1, cfg: SchemeConfig, spec: PotentialSpec,
               params: ModelParams):
    """Positivity-preserving nutrient update. Returns (sigma1, SigmaStepInfo)."""
    return _nutrient_step(grid, state, phi1, cfg, params, truncation=None)


def _nutrient_step(grid, state, phi1, cfg, params, truncation):
    dt, theta, chi = cfg.dt, cfg.theta_cross, params.chi
    sigma0 = state.sigma
    n_cells = params.mob_n(phi1, sigma0)
    n_f = grid.face_average(n_cells)
    D = grid.diffusion_matrix(n_f)
    u = _drift(grid, n_f, phi1, chi)
    U = grid.upwind_matrix(u)
    rate = U.diagonal().reshape(grid.shape)
    sources = _sources_on(cfg)
    beta = params.beta(phi1) if sources else np.zeros(grid.shape)
    _, f_sigma = _forcing(cfg, state.t + dt)

    if truncation is None:
        k = _substeps(dt, rate, cfg)
    else:
        s0 = np.maximum(sigma0, 0.0)
        ratio = np.where(s0 > 0, truncation.apply(s0) / np.where(s0 > 0, s0, 1.0), 1.0)
        k = _substeps(dt, rate, cfg, ratio)
    nsub = 2**k
    tau = dt / nsub
    n_bar = float(np.mean(n_cells))

    flux_d = [np.zeros(grid.face_shape(a)) for a in range(grid.dim)]
    flux_c = [np.zeros(grid.face_shape(a)) for a in range(grid.dim)]
    src = np.zeros(grid.shape)
    sigma = sigma0.copy()
    for _ in range(nsub):
        s_pos = np.maximum(sigma, 0.0)
        decay = params.kappa_inf * beta * s_pos ** (params.p - 1.0)
        growth = params.kappa0 * beta * sigma
        A = _sigma_system(grid, tau, D, U, decay, theta)
        expl = -(1.0 - theta) * (U @ sigma.ravel()).reshape(grid.shape) + growth
        if f_sigma is not None:
            expl = expl + f_sigma
        if truncation is None:
            b = sigma + tau * expl
            new = _solve_sigma(grid, A, b.ravel(), tau, n_bar, float(np.mean(decay)), theta,
                               cfg.sigma_lin_tol).reshape(grid.shape)
        else:
            new = _truncated_solve(grid, A, truncation, sigma, tau * expl, cfg)
        if np.min(new) < -POSITIVITY_TOL:
            i = int(np.argmin(new))
            raise PositivityLoss(new.flat[i], np.unravel_index(i, grid.shape))
        gd = grid.face_grad(new)
        fc_new = grid.upwind_flux(u, new)
        fc_old = grid.upwind_flux(u, sigma)
        for a in range(grid.dim):
            flux_d[a] += tau * (-n_f[a] * gd[a])
            flux_c[a] += tau * (theta * fc_new[a] + (1 - theta) * fc_old[a])
        cell_src = growth - decay * new
        if f_sigma is not None:
            cell_src = cell_src + f_sigma
        src += tau * cell_src
        sigma = new
    return sigma, SigmaStepInfo(tuple(flux_d), tuple(flux_c), src, nsub, tau)


def _truncated_solve(grid, A, T, sigma0, explicit, cfg):
    """Newton for T(sigma) + (A - I) sigma = T(sigma0) + explicit (A carries the identity)."""
    N = grid.size
    I = sp.identity(N, format="csr")
    B = A - I
    s0 = np.maximum(sigma0.ravel(), 0.0)
    rhs = T.apply(s0) + explicit.ravel()
    x = sigma0.ravel().copy()

    def G(x):
        return T.apply(x) + B @ x - rhs

    g = G(x)
    scale = 1.0 + np.max(np.abs(rhs))
    history = [float(np.max(np.abs(g)))]
    for _ in range(cfg.newton_max_iter):
        if history[-1] <= cfg.newton_tol * 1e-2 * scale:
            break
        J = sp.diags(T.derivative(x)) + B
        dx = solve_linear(J, -g)
        alpha = 1.0
        for _ in range(40):
            xt = x + alpha * dx
            gt = G(xt)
            if np.max(np.abs(gt)) < history[-1] or np.max(np.abs(gt)) <= cfg.newton_tol * 1e-2 * scale:
                break
            alpha *= 0.5
        else:
            raise NewtonDivergence("truncated nutrient Newton found no decrease", history)
        x, g = xt, gt
        history.append(float(np.max(np.abs(g))))
    else:
        if history[-1] > cfg.newton_tol * 1e-2 * scale:
            raise NewtonDivergence("truncated nutrient Newton iteration cap reached", history)
    # recover sigma through the truncated variable
    s1 = rhs - B @ x
    return T.gamma(s1).reshape(grid.shape)


def step_sigma_old(grid: Grid, state: State, phi1, cfg: SchemeConfig, params: ModelParams):
    """sigma_t = lap sigma - chi lap phi + b; no positivity safeguard."""
    dt, chi = cfg.dt, params.chi
    sigma0 = state.sigma
    sources = _sources_on(cfg)
    beta = params.beta(phi1) if sources else np.zeros(grid.shape)
    decay = params.kappa_inf * beta * np.abs(sigma0) ** (params.p - 1.0)
    growth = params.kappa0 * beta * sigma0
    _, f_sigma = _forcing(cfg, state.t + dt)
    expl = -chi * grid.laplacian(phi1) + growth
    if f_sigma is not None:
        expl = expl + f_sigma
    D = grid.laplacian_matrix
    A = _sigma_system(grid, dt, D, None, decay, 0.0)
    new = _solve_sigma(grid, A, (sigma0 + dt * expl).ravel(), dt, 1.0, float(np.mean(decay)), 0.0,
                       cfg.sigma_lin_tol).reshape(grid.shape)
    gs, gp = grid.face_grad(new), grid.face_grad(phi1)
    flux_d = tuple(-dt * g for g in gs)
    flux_c = tuple(dt * chi * g for g in gp)
    src = dt * (growth - decay * new + (f_sigma if f_sigma is not None else 0.0))
    return new, SigmaStepInfo(flux_d, flux_c, src, 1, dt)


def step_approximation(grid: Grid, state: State, cfg: SchemeConfig, spec: PotentialSpec,
                       params: ModelParams):
    """One step of the regularized system; returns (State, StepInfo)."""
    T = Truncation(cfg.n)
    reg = spec if spec.n == cfg.n else spec.with_n(cfg.n)
    phi1, mu1, iters, S = step_ch(grid, state, cfg, reg, params, truncation=T)
    sigma1, info = _nutrient_step(grid, state, phi1, cfg, params, truncation=T)
    new = State(phi1, mu1, sigma1, state.t + cfg.dt)
    return new, StepInfo(iters, info, _source_power(grid, S, mu1, sigma1, phi1, info, params, cfg.dt, T),
                         info.dt_sub)


def _source_power(grid, S, mu1, sigma1, phi1, info, params, dt, truncation=None):
    """int S mu1 + int b (ln sigma1 + chi (1 - phi1)), with b the realized source."""
    b = info.source / dt
    ok = sigma1 > 1e-300
    w = np.where(ok, np.log(np.where(ok, sigma1, 1.0)), 0.0) + params.chi * (1.0 - phi1)
    if truncation is not None:
        w = truncation.derivative(np.maximum(sigma1, 0.0)) * w
    w = np.where(ok, w, 0.0)
    return grid.inner(S, mu1) + grid.inner(b, w)


def step(grid, state, cfg, spec, params):
    """Advance one step in the configured mode; returns (State, StepInfo)."""
    if cfg.mode is Mode.APPROX:
        return step_approximation(grid, state, cfg, spec, params)
    phi1, mu1, iters, S = step_ch(grid, state, cfg, spec, params)
    if cfg.mode is Mode.OLD:
        sigma1, info = step_sigma_old(grid, state, phi1, cfg, params)
    else:
        sigma1, info = step_sigma(grid, state, phi1, cfg, spec, params)
    new = State(phi1, mu1, sigma1, state.t + cfg.dt)
    return new, StepInfo(iters, info, _source_power(grid, S, mu1, sigma1, phi1, info, params, cfg.dt),
                         info.dt_sub)


def advance(grid: Grid, state: State, cfg: SchemeConfig, spec: PotentialSpec, params: ModelParams,
            n_steps: int, *, subvolume=None, keep_states: bool = False, callback=None):
    """Run ``n_steps`` steps and collect diagnostics.

    Returns (final_state, series); with ``keep_states`` the series also holds
    every state including the initial one. A failing step raises StepFailure
    carrying the partial series and the last accepted state.
    """
    truncation = cfg.truncation
    ctx = diag.RunContext.create(grid, state, spec, params, cfg.mode.value, truncation, subvolume)
    series = diag.DiagnosticsSeries()
    if keep_states:
        series.states.append(state)
    for k in range(n_steps):
        try:
            new, info = step(grid, state, cfg, spec, params)
            rec = diag.make_record(ctx, k + 1, state, new, info, cfg.dt)
        except CHKSError as exc:
            raise StepFailure(k + 1, state.t, exc, series=series, state=state) from exc
        except FloatingPointError as exc:  # pragma: no cover - numpy errstate raise mode
            raise StepFailure(k + 1, state.t, exc, series=series, state=state) from exc
        series.records.append(rec)
        if keep_states:
            series.states.append(new)
        if callback is not None:
            callback(k + 1, new, rec)
        state = new
    return state, series
