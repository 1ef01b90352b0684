"""Uniform cell-centered grids with homogeneous Neumann operators.

Fields are plain ``numpy`` arrays of shape ``grid.shape`` (``(nx,)`` in 1D,
``(nx, ny)`` in 2D). Face quantities live on arrays with one extra entry
along their axis; the first and last faces are domain boundary faces and
always carry zero flux, which is how the no-flux condition is imposed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import LinearSolveFailure

log = logging.getLogger(__name__)

# Systems at or below this many unknowns are factorized directly.
DIRECT_LIMIT = 2048


@dataclass(frozen=True)
class Grid:
    dim: int
    nx: int
    ny: int = 1
    lx: float = 1.0
    ly: float = 1.0

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"grid dimension must be 1 or 2, got {self.dim}")
        if self.nx < 4:
            raise ValueError(f"nx must be >= 4, got {self.nx}")
        if self.dim == 1 and self.ny != 1:
            raise ValueError("a 1D grid must have ny = 1")
        if self.dim == 2 and self.ny < 4:
            raise ValueError(f"ny must be >= 4 in 2D, got {self.ny}")
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError("domain lengths must be positive")

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.nx,) if self.dim == 1 else (self.nx, self.ny)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def spacing(self) -> tuple[float, ...]:
        return (self.hx,) if self.dim == 1 else (self.hx, self.hy)

    @property
    def cell_volume(self) -> float:
        return self.hx if self.dim == 1 else self.hx * self.hy

    @property
    def volume(self) -> float:
        return self.lx if self.dim == 1 else self.lx * self.ly

    def centers(self) -> tuple[np.ndarray, ...]:
        """Cell-center coordinates, broadcastable to ``shape``."""
        x = (np.arange(self.nx) + 0.5) * self.hx
        if self.dim == 1:
            return (x,)
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    # ------------------------------------------------------------------
    # reductions

    def integrate(self, v) -> float:
        return float(np.sum(v) * self.cell_volume)

    def mean(self, v) -> float:
        return float(np.mean(v))

    def inner(self, u, v) -> float:
        return float(np.sum(u * v) * self.cell_volume)

    def norm_l2(self, v) -> float:
        return float(np.sqrt(self.inner(v, v)))

    def grad_sq(self, v) -> float:
        """Squared L2 norm of the discrete face gradient."""
        return sum(float(np.sum(g * g)) for g in self.face_grad(v)) * self.cell_volume

    def norm_h1_sq(self, v) -> float:
        return self.inner(v, v) + self.grad_sq(v)

    # ------------------------------------------------------------------
    # face/cell stencils

    def face_grad(self, v) -> tuple[np.ndarray, ...]:
        """One-sided differences on faces; boundary faces are zero."""
        out = []
        for axis, h in enumerate(self.spacing):
            g = np.diff(v, axis=axis) / h
            pad = [(0, 0)] * self.dim
            pad[axis] = (1, 1)
            out.append(np.pad(g, pad))
        return tuple(out)

    def face_average(self, v) -> tuple[np.ndarray, ...]:
        """Arithmetic face averages; boundary faces copy the adjacent cell."""
        out = []
        for axis in range(self.dim):
            avg = 0.5 * (np.take(v, range(0, v.shape[axis] - 1), axis=axis)
                         + np.take(v, range(1, v.shape[axis]), axis=axis))
            first = np.take(v, [0], axis=axis)
            last = np.take(v, [v.shape[axis] - 1], axis=axis)
            out.append(np.concatenate([first, avg, last], axis=axis))
        return tuple(out)

    def face_shape(self, axis: int) -> tuple[int, ...]:
        s = list(self.shape)
        s[axis] += 1
        return tuple(s)

    def div_flux(self, fx, fy=None) -> np.ndarray:
        """Conservative divergence of face fluxes.

        Boundary entries of the flux arrays are ignored (treated as zero),
        so the global sum of the result telescopes to zero.
        """
        fluxes = (fx,) if self.dim == 1 else (fx, fy)
        if self.dim == 1 and fy is not None:
            raise ValueError("1D grid takes a single flux array")
        out = np.zeros(self.shape)
        for axis, (f, h) in enumerate(zip(fluxes, self.spacing)):
            if f is None or np.shape(f) != self.face_shape(axis):
                raise ValueError(
                    f"flux along axis {axis} must have shape {self.face_shape(axis)}, "
                    f"got {None if f is None else np.shape(f)}"
                )
            f = np.array(f, dtype=float)
            idx = [slice(None)] * self.dim
            idx[axis] = 0
            f[tuple(idx)] = 0.0
            idx[axis] = -1
            f[tuple(idx)] = 0.0
            out += np.diff(f, axis=axis) / h
        return out

    def laplacian(self, v) -> np.ndarray:
        return self.div_flux(*self.face_grad(v))

    # ------------------------------------------------------------------
    # spectral representation of the Neumann Laplacian

    @cached_property
    def neumann_eigenvalues(self) -> np.ndarray:
        """Eigenvalues of ``-laplacian`` in the DCT-II basis (grid shape)."""
        lam = []
        for n, h in zip(self.shape, self.spacing):
            k = np.arange(n)
            lam.append((4.0 / h**2) * np.sin(np.pi * k / (2 * n)) ** 2)
        if self.dim == 1:
            return lam[0]
        return lam[0][:, None] + lam[1][None, :]

    def dct(self, v) -> np.ndarray:
        return sfft.dctn(np.reshape(v, self.shape), type=2, norm="ortho")

    def idct(self, c) -> np.ndarray:
        return sfft.idctn(c, type=2, norm="ortho")

    def spectral_solver(self, symbol):
        """Return ``r -> idct(dct(r) / symbol)`` acting on flat vectors."""
        inv = np.where(symbol != 0, 1.0 / np.where(symbol != 0, symbol, 1.0), 0.0)

        def apply(r):
            return self.idct(self.dct(r) * inv).ravel()

        return apply

    # ------------------------------------------------------------------
    # sparse assembly (flattened C-order unknowns)

    def _pairs(self, axis: int):
        idx = np.arange(self.size).reshape(self.shape)
        lo = np.take(idx, range(0, self.shape[axis] - 1), axis=axis).ravel()
        hi = np.take(idx, range(1, self.shape[axis]), axis=axis).ravel()
        return lo, hi

    @staticmethod
    def _interior(face, axis):
        return np.take(face, range(1, face.shape[axis] - 1), axis=axis).ravel()

    def diffusion_matrix(self, coeffs=None) -> sp.csr_matrix:
        """Matrix of ``v -> div(c grad v)`` for face coefficients ``c``."""
        rows, cols, vals = [], [], []
        for axis, h in enumerate(self.spacing):
            lo, hi = self._pairs(axis)
            if coeffs is None:
                w = np.full(lo.size, 1.0 / h**2)
            else:
                w = self._interior(np.asarray(coeffs[axis], dtype=float), axis) / h**2
            rows += [lo, hi, lo, hi]
            cols += [hi, lo, lo, hi]
            vals += [w, w, -w, -w]
        n = self.size
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        )

    @cached_property
    def laplacian_matrix(self) -> sp.csr_matrix:
        return self.diffusion_matrix()

    def upwind_flux(self, velocity, v) -> tuple[np.ndarray, ...]:
        """First-order upwind face fluxes ``u+ v_left + u- v_right``."""
        out = []
        for axis, u in enumerate(velocity):
            left = np.take(v, range(0, v.shape[axis] - 1), axis=axis)
            right = np.take(v, range(1, v.shape[axis]), axis=axis)
            ui = np.take(u, range(1, u.shape[axis] - 1), axis=axis)
            f = np.maximum(ui, 0.0) * left + np.minimum(ui, 0.0) * right
            pad = [(0, 0)] * self.dim
            pad[axis] = (1, 1)
            out.append(np.pad(f, pad))
        return tuple(out)

    def upwind_matrix(self, velocity) -> sp.csr_matrix:
        """Matrix of ``v -> div(upwind_flux(velocity, v))``."""
        rows, cols, vals = [], [], []
        for axis, (u, h) in enumerate(zip(velocity, self.spacing)):
            lo, hi = self._pairs(axis)
            ui = self._interior(np.asarray(u, dtype=float), axis)
            up, um = np.maximum(ui, 0.0) / h, np.minimum(ui, 0.0) / h
            rows += [lo, lo, hi, hi]
            cols += [lo, hi, lo, hi]
            vals += [up, um, -up, -um]
        n = self.size
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        )

    # ------------------------------------------------------------------
    # inverse Neumann Laplacian and the dual norm

    def inv_neumann_laplacian(self, v, rtol: float = 1e-10, maxiter: int | None = None,
                              preconditioned: bool = True) -> np.ndarray:
        """Zero-mean ``u`` with ``-laplacian(u) = v - mean(v)``."""
        b = (np.asarray(v, dtype=float) - np.mean(v)).ravel()
        A = self.laplacian_matrix

        def apply(x):
            return -(A @ x)

        precond = self.spectral_solver(self.neumann_eigenvalues) if preconditioned else None
        if maxiter is None:
            maxiter = 10 * self.size
        x = conjugate_gradient(apply, b, precond=precond, rtol=rtol, maxiter=maxiter,
                               zero_mean=True)
        return x.reshape(self.shape)

    def dual_norm(self, v) -> float:
        w = np.asarray(v, dtype=float) - np.mean(v)
        u = self.inv_neumann_laplacian(w)
        return float(np.sqrt(max(self.inner(w, u), 0.0)))


def conjugate_gradient(apply, b, *, precond=None, rtol=1e-10, maxiter=1000, zero_mean=False):
    """Preconditioned CG for a symmetric positive (semi)definite operator.

    With ``zero_mean`` the iterates are kept orthogonal to constants, which
    makes the singular Neumann operator definite on that subspace.
    """
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x
    r = b.copy()
    z = precond(r) if precond is not None else r.copy()
    if zero_mean:
        z -= z.mean()
    p = z.copy()
    rz = r @ z
    for k in range(maxiter):
        Ap = apply(p)
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        if zero_mean:
            r -= r.mean()
        rnorm = np.linalg.norm(r)
        if rnorm <= rtol * bnorm:
            if zero_mean:
                x -= x.mean()
            return x
        z = precond(r) if precond is not None else r.copy()
        if zero_mean:
            z -= z.mean()
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise LinearSolveFailure("conjugate gradient did not converge", rnorm / bnorm, maxiter)


def solve_linear(A, b, *, precond=None, rtol=1e-10, symmetric=False, maxiter=400):
    """Solve ``A x = b``; direct for small systems, preconditioned Krylov otherwise.

    A Krylov failure falls back to a sparse LU factorization, so the only
    error that escapes is a non-finite direct solution.
    """
    b = np.asarray(b, dtype=float).ravel()
    n = b.size
    if n > DIRECT_LIMIT and precond is not None:
        M = spla.LinearOperator((n, n), matvec=precond, dtype=float)
        if symmetric:
            x, info = spla.cg(A, b, M=M, rtol=rtol, atol=0.0, maxiter=maxiter)
        else:
            x, info = spla.gmres(A, b, M=M, rtol=rtol, atol=0.0, restart=60,
                                 maxiter=max(1, maxiter // 60))
        if info == 0 and np.all(np.isfinite(x)):
            return x
        log.debug("Krylov solve failed (info=%s); falling back to sparse LU", info)
    lu = spla.splu(sp.csc_matrix(A), permc_spec="MMD_AT_PLUS_A")
    x = lu.solve(b)
    if not np.all(np.isfinite(x)):
        raise LinearSolveFailure("sparse LU produced non-finite values")
    return x
