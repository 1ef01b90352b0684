"""Per-step diagnostics, subvolume flux balance and twin-run metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .energy import dissipation_residual, free_energy
from .errors import NegativeSigma
from .grid import Grid

COLUMNS = (
    "step", "t", "energy_total", "energy_gl", "energy_mix", "dissipation_residual",
    "phi_mean", "phi_mean_lo", "phi_mean_hi", "sigma_min", "sigma_mass", "sep_delta",
    "flux_imbalance", "newton_iters", "dt_used",
)


@dataclass
class DiagnosticsRecord:
    step: int
    t: float
    energy_total: float
    energy_gl: float
    energy_mix: float
    dissipation_residual: float
    phi_mean: float
    phi_mean_lo: float
    phi_mean_hi: float
    sigma_min: float
    sigma_mass: float
    sep_delta: float
    flux_imbalance: float
    newton_iters: int
    dt_used: float

    def row(self):
        return [getattr(self, c) for c in COLUMNS]


assert tuple(f.name for f in fields(DiagnosticsRecord)) == COLUMNS


@dataclass
class DiagnosticsSeries:
    records: list = field(default_factory=list)
    states: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])


# ----------------------------------------------------------------------
# mean-value envelope


def mean_envelope(y0, m, H, t):
    """Bounds on the phase mean for y' = -m y + g(t), |g| <= H."""
    if not m > 0:
        raise ValueError(f"mean envelope needs m > 0, got m = {m}")
    decay = math.exp(-m * t)
    base = y0 * decay
    spread = (1.0 - decay) * H / m
    return base - spread, base + spread


def mean_ode(y0, m, h, t):
    """Closed-form solution of y' = -m y + h with constant h."""
    if m == 0:
        return y0 + h * t
    return y0 * math.exp(-m * t) + (h / m) * (1.0 - math.exp(-m * t))


# ----------------------------------------------------------------------
# subvolumes and flux balance


@dataclass(frozen=True)
class Subvolume:
    """Block of cells [i0, i1) x [j0, j1) (j-range ignored in 1D)."""

    i0: int
    i1: int
    j0: int = 0
    j1: int = 1

    @classmethod
    def from_box(cls, grid: Grid, x0, x1, y0=None, y1=None):
        def index(v, h, name):
            k = v / h
            if abs(k - round(k)) > 1e-9:
                raise ValueError(f"subvolume edge {name} = {v:g} is not on a cell boundary")
            return int(round(k))

        i0, i1 = index(x0, grid.hx, "x0"), index(x1, grid.hx, "x1")
        if grid.dim == 1:
            j0, j1 = 0, 1
        else:
            y0 = 0.0 if y0 is None else y0
            y1 = grid.ly if y1 is None else y1
            j0, j1 = index(y0, grid.hy, "y0"), index(y1, grid.hy, "y1")
        return cls(i0, i1, j0, j1).checked(grid)

    @classmethod
    def left_half(cls, grid: Grid):
        return cls(0, max(1, grid.nx // 2), 0, grid.ny)

    @classmethod
    def whole(cls, grid: Grid):
        return cls(0, grid.nx, 0, grid.ny)

    def checked(self, grid: Grid):
        if not (0 <= self.i0 < self.i1 <= grid.nx and 0 <= self.j0 < self.j1 <= grid.ny):
            raise ValueError(f"subvolume {self} does not fit the {grid.shape} grid")
        return self

    def cells(self, grid: Grid):
        if grid.dim == 1:
            return (slice(self.i0, self.i1),)
        return (slice(self.i0, self.i1), slice(self.j0, self.j1))

    def outflow(self, grid: Grid, fluxes) -> float:
        """Integral over the block boundary of the outward normal face flux."""
        fx = fluxes[0]
        if grid.dim == 1:
            return float(fx[self.i1] - fx[self.i0])
        js, is_ = slice(self.j0, self.j1), slice(self.i0, self.i1)
        out_x = (np.sum(fx[self.i1, js]) - np.sum(fx[self.i0, js])) * grid.hy
        fy = fluxes[1]
        out_y = (np.sum(fy[is_, self.j1]) - np.sum(fy[is_, self.j0])) * grid.hx
        return float(out_x + out_y)

    def _zero_boundary(self, grid, fluxes):
        out = []
        for a, f in enumerate(fluxes):
            f = np.array(f, dtype=float)
            idx = [slice(None)] * grid.dim
            idx[a] = 0
            f[tuple(idx)] = 0.0
            idx[a] = -1
            f[tuple(idx)] = 0.0
            out.append(f)
        return out


@dataclass(frozen=True)
class FluxBalance:
    change: float
    diffusive_outflow: float
    chemotactic_outflow: float
    source: float
    imbalance: float
    relative: float


def flux_balance(grid: Grid, sigma0, sigma1, info, V: Subvolume) -> FluxBalance:
    """Check int_V (sigma1 - sigma0) = -outflow(diffusive + chemotactic) + int_V source.

    ``info`` carries time-integrated face fluxes and cell sources of the step.
    """
    cells = V.cells(grid)
    change = float(np.sum(sigma1[cells] - sigma0[cells]) * grid.cell_volume)
    fd = V._zero_boundary(grid, info.diffusive)
    fc = V._zero_boundary(grid, info.chemotactic)
    od, oc = V.outflow(grid, fd), V.outflow(grid, fc)
    src = float(np.sum(info.source[cells]) * grid.cell_volume)
    imb = abs(change + od + oc - src)
    scale = (float(np.sum(np.abs(sigma1[cells]) + np.abs(sigma0[cells]))) * grid.cell_volume
             + abs(od) + abs(oc) + float(np.sum(np.abs(info.source[cells]))) * grid.cell_volume)
    rel = imb / scale if scale > 0 else 0.0
    return FluxBalance(change, od, oc, src, imb, rel)


def boundary_chemotaxis(grid: Grid, phi, sigma, n_cells, chi, V: Subvolume):
    """Outward chemotactic flux through the boundary of V in both forms.

    Returns (weighted, unweighted): chi * sum sigma n d_n phi (nutrient
    weighted, upwinded sigma) and chi * sum d_n phi (plain Laplacian form).
    """
    n_f = grid.face_average(n_cells)
    u = tuple(chi * n * g for n, g in zip(n_f, grid.face_grad(phi)))
    weighted = V.outflow(grid, V._zero_boundary(grid, grid.upwind_flux(u, sigma)))
    plain = V.outflow(grid, V._zero_boundary(grid, tuple(chi * g for g in grid.face_grad(phi))))
    return weighted, plain


# ----------------------------------------------------------------------
# per-step record


@dataclass
class RunContext:
    grid: Grid
    spec: object
    params: object
    mode: str
    truncation: object
    subvolume: Subvolume
    y0: float
    last_energy: tuple | None = None

    @classmethod
    def create(cls, grid, state0, spec, params, mode, truncation=None, subvolume=None):
        V = Subvolume.left_half(grid) if subvolume is None else subvolume.checked(grid)
        return cls(grid, spec, params, mode, truncation, V, grid.mean(state0.phi))


def _envelope(ctx, t):
    if ctx.mode == "sourceless":
        return ctx.y0, ctx.y0
    m, H = ctx.params.m, ctx.params.H
    if m > 0:
        return mean_envelope(ctx.y0, m, H, t)
    return ctx.y0 - H * t, ctx.y0 + H * t


def make_record(ctx: RunContext, step: int, prev, new, info, dt) -> DiagnosticsRecord:
    grid, spec, params = ctx.grid, ctx.spec, ctx.params
    spec_e = spec if ctx.truncation is None or spec.n == ctx.truncation.n else spec.with_n(ctx.truncation.n)
    try:
        if ctx.last_energy is not None and ctx.last_energy[0] is prev:
            e0 = ctx.last_energy[1]
        else:
            e0 = free_energy(grid, prev, spec_e, params, ctx.truncation).total
        e = free_energy(grid, new, spec_e, params, ctx.truncation)
        ctx.last_energy = (new, e.total)
        res = dissipation_residual(grid, prev, new, dt, spec_e, params, source_power=info.source_power,
                                   truncation=ctx.truncation, energies=(e0, e.total))
        energy = (e.total, e.ginzburg_landau, e.mixing)
    except NegativeSigma:
        if ctx.mode != "old":
            raise
        # the entropy is undefined once the unprotected model goes negative
        energy, res = (math.nan, math.nan, math.nan), math.nan
    lo, hi = _envelope(ctx, new.t)
    fb = flux_balance(grid, prev.sigma, new.sigma, info.sigma, ctx.subvolume)
    return DiagnosticsRecord(
        step=step,
        t=new.t,
        energy_total=energy[0],
        energy_gl=energy[1],
        energy_mix=energy[2],
        dissipation_residual=res,
        phi_mean=grid.mean(new.phi),
        phi_mean_lo=lo,
        phi_mean_hi=hi,
        sigma_min=float(np.min(new.sigma)),
        sigma_mass=grid.integrate(new.sigma),
        sep_delta=1.0 - float(np.max(np.abs(new.phi))),
        flux_imbalance=fb.relative,
        newton_iters=info.newton_iters,
        dt_used=info.dt_used,
    )


# ----------------------------------------------------------------------
# twin-run metrics

LHS_NAMES = (
    "phi_fluct_dual_sq", "phi_mean_sq", "phi_mean_abs", "sigma_fluct_dual_sq", "sigma_mean_sq",
    "phi_l2v_sq", "sigma_l2l2_sq",
)
RHS_NAMES = ("phi0_fluct_dual_sq", "phi0_mean_sq", "phi0_mean_abs", "sigma0_fluct_dual_sq", "sigma0_mean_sq")


@dataclass
class TwinMetrics:
    lhs: dict
    rhs: dict
    trace: list = field(default_factory=list)

    @property
    def lhs_total(self):
        return float(sum(self.lhs.values()))

    @property
    def rhs_total(self):
        return float(sum(self.rhs.values()))

    @property
    def ratio(self):
        return self.lhs_total / self.rhs_total if self.rhs_total > 0 else math.nan


def _pointwise(grid, a, b):
    dphi = a.phi - b.phi
    dsig = a.sigma - b.sigma
    mp, ms = grid.mean(dphi), grid.mean(dsig)
    return {
        "phi_fluct_dual_sq": grid.dual_norm(dphi) ** 2,
        "phi_mean_sq": mp * mp,
        "phi_mean_abs": abs(mp),
        "sigma_fluct_dual_sq": grid.dual_norm(dsig) ** 2,
        "sigma_mean_sq": ms * ms,
        "phi_v_sq": grid.norm_h1_sq(dphi),
        "sigma_l2_sq": grid.inner(dsig, dsig),
    }


def twin_metrics(grid: Grid, run_a, run_b) -> TwinMetrics:
    """Continuous-dependence terms for two state sequences on one timeline.

    Suprema are maxima over the samples, time integrals use the left
    endpoint rule.
    """
    if len(run_a) != len(run_b) or not run_a:
        raise ValueError(f"twin runs need equal, nonempty timelines ({len(run_a)} vs {len(run_b)} states)")
    for a, b in zip(run_a, run_b):
        if a.phi.shape != grid.shape or b.phi.shape != grid.shape:
            raise ValueError("twin runs must share the grid")
        if abs(a.t - b.t) > 1e-12 * max(1.0, abs(a.t)):
            raise ValueError(f"twin runs have mismatched times {a.t} and {b.t}")
    trace = [_pointwise(grid, a, b) for a, b in zip(run_a, run_b)]
    lhs = {k: max(p[k] for p in trace) for k in LHS_NAMES[:5]}
    ts = [s.t for s in run_a]
    lhs["phi_l2v_sq"] = sum((ts[k + 1] - ts[k]) * trace[k]["phi_v_sq"] for k in range(len(ts) - 1))
    lhs["sigma_l2l2_sq"] = sum((ts[k + 1] - ts[k]) * trace[k]["sigma_l2_sq"] for k in range(len(ts) - 1))
    first = trace[0]
    rhs = {
        "phi0_fluct_dual_sq": first["phi_fluct_dual_sq"],
        "phi0_mean_sq": first["phi_mean_sq"],
        "phi0_mean_abs": first["phi_mean_abs"],
        "sigma0_fluct_dual_sq": first["sigma_fluct_dual_sq"],
        "sigma0_mean_sq": first["sigma_mean_sq"],
    }
    return TwinMetrics(lhs, rhs, trace)
