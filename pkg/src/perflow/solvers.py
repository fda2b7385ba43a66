"""Ground-truth PDE data: Poisson, Darcy, viscous Burgers and 2D Navier-Stokes.

Static problems live on the closed unit square with ``nx`` points per axis
(``x_i = i / (nx - 1)``) and homogeneous Dirichlet data.  Time-dependent
problems are periodic on ``[0, 1)`` and use Fourier pseudo-spectral
discretisations with the 2/3 dealiasing rule and a low-storage RK3 /
Crank-Nicolson IMEX stepper (explicit nonlinear terms, implicit diffusion).
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

LINEAR_RTOL = 1e-10

# Spalart-Moser-Rogers RK3 / CN coefficients
_RK_GAMMA = (8 / 15, 5 / 12, 3 / 4)
_RK_ZETA = (0.0, -17 / 60, -5 / 12)
_RK_ALPHA = tuple((g + z) / 2 for g, z in zip(_RK_GAMMA, _RK_ZETA))


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class Grid2D:
    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0
    boundary: str = "dirichlet"

    def __post_init__(self):
        if self.nx < 8 or self.ny < 8:
            raise ValueError(f"grid needs at least 8 points per axis, got {self.nx}x{self.ny}")
        if self.boundary not in ("dirichlet", "periodic"):
            raise ValueError(f"unknown boundary {self.boundary!r}")

    @property
    def hx(self) -> float:
        return self.lx / (self.nx - 1) if self.boundary == "dirichlet" else self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / (self.ny - 1) if self.boundary == "dirichlet" else self.ly / self.ny

    @property
    def shape(self):
        return (self.nx, self.ny)

    def coords(self):
        """Meshgrid of point coordinates, ``indexing='ij'`` (axis 0 is x1)."""
        x = np.arange(self.nx) * self.hx
        y = np.arange(self.ny) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def boundary_mask(self) -> np.ndarray:
        b = np.zeros(self.shape, dtype=bool)
        b[0, :] = b[-1, :] = b[:, 0] = b[:, -1] = True
        return b

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class PdeCase:
    kind: str
    nu: float = 0.01
    re: float = 1000.0
    horizon: float = 1.0
    n_t: int = 2
    source: float = 1.0

    def __post_init__(self):
        if self.kind not in ("poisson", "darcy", "burgers", "navier_stokes"):
            raise ValueError(f"unknown PDE kind {self.kind!r}")
        if self.nu <= 0 or self.re <= 0:
            raise ValueError("viscosity and Reynolds number must be positive")
        if self.n_t < 2:
            raise ValueError("need at least two snapshots")


def _require_dirichlet(field, grid: Grid2D):
    if grid.boundary != "dirichlet":
        raise ValueError("static solvers need a Dirichlet grid")
    if np.shape(field) != grid.shape:
        raise ValueError(f"field shape {np.shape(field)} does not match grid {grid.shape}")


def _linear_solve(mat: sp.csr_matrix, rhs: np.ndarray) -> np.ndarray:
    sol = spla.spsolve(mat.tocsc(), rhs)
    rnorm = np.linalg.norm(mat @ sol - rhs)
    bnorm = max(np.linalg.norm(rhs), np.finfo(float).tiny)
    if not np.all(np.isfinite(sol)) or rnorm > LINEAR_RTOL * bnorm:
        log.warning("direct solve residual %.3e, falling back to CG", rnorm / bnorm)
        sol, info = spla.cg(mat, rhs, x0=np.nan_to_num(sol), rtol=LINEAR_RTOL, maxiter=20 * len(rhs))
        rnorm = np.linalg.norm(mat @ sol - rhs)
        if info != 0 or rnorm > 10 * LINEAR_RTOL * bnorm:
            raise SolverError(f"linear solve failed: relative residual {rnorm / bnorm:.3e}")
    return sol


def laplacian_matrix(grid: Grid2D) -> sp.csr_matrix:
    """5-point Laplacian acting on interior unknowns (zero Dirichlet data)."""
    mx, my = grid.nx - 2, grid.ny - 2
    dx = sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(mx, mx)) / grid.hx**2
    dy = sp.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(my, my)) / grid.hy**2
    return (sp.kron(dx, sp.eye(my)) + sp.kron(sp.eye(mx), dy)).tocsr()


def discrete_laplacian(u: np.ndarray, grid: Grid2D) -> np.ndarray:
    """5-point Laplacian at interior points, shape ``(nx-2, ny-2)``."""
    return (
        (u[2:, 1:-1] - 2 * u[1:-1, 1:-1] + u[:-2, 1:-1]) / grid.hx**2
        + (u[1:-1, 2:] - 2 * u[1:-1, 1:-1] + u[1:-1, :-2]) / grid.hy**2
    )


def solve_poisson(f: np.ndarray, grid: Grid2D) -> np.ndarray:
    """Solve ``Lap u = f`` with ``u = 0`` on the boundary."""
    _require_dirichlet(f, grid)
    rhs = np.asarray(f, dtype=float)[1:-1, 1:-1].ravel()
    u = np.zeros(grid.shape)
    u[1:-1, 1:-1] = _linear_solve(laplacian_matrix(grid), rhs).reshape(grid.nx - 2, grid.ny - 2)
    return u


def _harmonic(a, b):
    return 2 * a * b / (a + b)


def darcy_matrix(a: np.ndarray, grid: Grid2D) -> sp.csr_matrix:
    """Flux-conservative ``-div(a grad .)`` on interior unknowns, harmonic face coefficients."""
    nx, ny = grid.shape
    mx, my = nx - 2, ny - 2
    ax_face = _harmonic(a[1:, :], a[:-1, :])  # between (i, j) and (i+1, j)
    ay_face = _harmonic(a[:, 1:], a[:, :-1])  # between (i, j) and (i, j+1)
    idx = np.arange(mx * my).reshape(mx, my)
    rows, cols, vals = [], [], []
    ii, jj = np.meshgrid(np.arange(1, nx - 1), np.arange(1, ny - 1), indexing="ij")
    w_e = ax_face[ii, jj] / grid.hx**2
    w_w = ax_face[ii - 1, jj] / grid.hx**2
    w_n = ay_face[ii, jj] / grid.hy**2
    w_s = ay_face[ii, jj - 1] / grid.hy**2
    rows.append(idx.ravel())
    cols.append(idx.ravel())
    vals.append((w_e + w_w + w_n + w_s).ravel())
    for di, dj, w in ((1, 0, w_e), (-1, 0, w_w), (0, 1, w_n), (0, -1, w_s)):
        ni, nj = ii + di, jj + dj
        inside = (ni >= 1) & (ni <= nx - 2) & (nj >= 1) & (nj <= ny - 2)
        rows.append(idx[(ii - 1)[inside], (jj - 1)[inside]])
        cols.append(idx[(ni - 1)[inside], (nj - 1)[inside]])
        vals.append(-w[inside])
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(mx * my, mx * my)
    )


def solve_darcy(a: np.ndarray, q, grid: Grid2D) -> np.ndarray:
    """Solve ``-div(a grad p) = q`` with ``p = 0`` on the boundary."""
    a = np.asarray(a, dtype=float)
    _require_dirichlet(a, grid)
    if np.any(~(a > 0)):
        raise ValueError("Darcy coefficient must be strictly positive")
    q = np.broadcast_to(np.asarray(q, dtype=float), grid.shape)
    p = np.zeros(grid.shape)
    sol = _linear_solve(darcy_matrix(a, grid), q[1:-1, 1:-1].ravel())
    p[1:-1, 1:-1] = sol.reshape(grid.nx - 2, grid.ny - 2)
    return p


def apply_boundary_multiplier(u: np.ndarray, grid: Grid2D) -> np.ndarray:
    """Multiply by ``sin(pi x1) sin(pi x2)``; boundary rows are set to exact zeros."""
    _require_dirichlet(u, grid)
    x1, x2 = grid.coords()
    out = u * np.sin(np.pi * x1 / grid.lx) * np.sin(np.pi * x2 / grid.ly)
    out[grid.boundary_mask()] = 0.0
    return out


def binarize_coefficient(mu: np.ndarray, high: float = 12.0, low: float = 3.0) -> np.ndarray:
    return np.where(np.asarray(mu) >= 0, high, low).astype(float)


def downsample(x: np.ndarray, factor: int, axes=None) -> np.ndarray:
    """Keep every ``factor``-th point along the spatial ``axes`` (default: the last two)."""
    x = np.asarray(x)
    if factor < 1:
        raise ValueError("factor must be >= 1")
    if axes is None:
        axes = tuple(range(max(0, x.ndim - 2), x.ndim))
    idx = [slice(None)] * x.ndim
    for ax in axes:
        if x.shape[ax] % factor:
            raise ValueError(f"axis {ax} of length {x.shape[ax]} is not divisible by {factor}")
        idx[ax] = slice(None, None, factor)
    return np.ascontiguousarray(x[tuple(idx)])


# ---------------------------------------------------------------- spectral


def _dealias_mask(n: int) -> np.ndarray:
    k = np.abs(np.fft.fftfreq(n, d=1.0 / n))
    return k < n / 3


def _imex_step(w_hat, prev_n, nonlinear, lin, dt):
    """One RK3-CN step for ``dw/dt = N(w) + lin * w`` in Fourier space."""
    for g, z, a in zip(_RK_GAMMA, _RK_ZETA, _RK_ALPHA):
        n_hat = nonlinear(w_hat)
        rhs = (1 + dt * a * lin) * w_hat + dt * g * n_hat
        if z:
            rhs = rhs + dt * z * prev_n
        w_hat = rhs / (1 - dt * a * lin)
        prev_n = n_hat
    return w_hat


def _substeps(horizon, n_t, dt_max):
    interval = horizon / (n_t - 1)
    return max(1, int(np.ceil(interval / dt_max - 1e-12)))


def solve_burgers(u0: np.ndarray, nu: float, n_t: int, horizon: float = 1.0, cfl: float = 0.4,
                  max_refinements: int = 6) -> np.ndarray:
    """Viscous Burgers ``u_t + (u^2/2)_x = nu u_xx`` on the periodic unit interval.

    Returns an ``(n_t, n)`` array of snapshots at uniform times on
    ``[0, horizon]`` (row 0 is ``u0``).  The substep size keeps the
    advective CFL number below ``cfl``; if the solution grows during the run
    the stepper restarts with a finer substep.
    """
    u0 = np.asarray(u0, dtype=float)
    if u0.ndim != 1:
        raise ValueError("Burgers initial condition must be 1D")
    if nu <= 0:
        raise ValueError("viscosity must be positive")
    n = u0.size
    h = 1.0 / n
    k = 2 * np.pi * np.fft.rfftfreq(n, d=h)
    keep = np.arange(k.size) < (n / 3)
    lin = -nu * k**2

    def nonlinear(u_hat):
        u = np.fft.irfft(u_hat * keep, n=n)
        return -0.5j * k * np.fft.rfft(u * u) * keep

    umax = max(np.max(np.abs(u0)), 1e-12)
    for _ in range(max_refinements):
        dt_max = cfl * h / umax
        sub = _substeps(horizon, n_t, dt_max)
        dt = horizon / (n_t - 1) / sub
        out = np.empty((n_t, n))
        out[0] = u0
        u_hat = np.fft.rfft(u0)
        peak = umax
        for step in range(1, n_t):
            for _ in range(sub):
                u_hat = _imex_step(u_hat, 0.0, nonlinear, lin, dt)
            out[step] = np.fft.irfft(u_hat, n=n)
            if not np.all(np.isfinite(out[step])):
                raise SolverError(f"Burgers solution became non-finite at snapshot {step}")
            peak = max(peak, np.max(np.abs(out[step])))
        if peak * dt <= cfl * h * 1.0001:
            return out
        umax = peak
    raise SolverError("Burgers CFL condition could not be met within the refinement budget")


def spectral_wavenumbers_2d(n: int, lx: float = 1.0):
    k = 2 * np.pi * np.fft.fftfreq(n, d=lx / n)
    kx, ky = np.meshgrid(k, k, indexing="ij")
    return kx, ky


def ns_forcing(n: int) -> np.ndarray:
    """Vorticity forcing ``0.1 (sin(2 pi (x1 + x2)) + cos(2 pi (x1 + x2)))`` on the periodic grid."""
    x = np.arange(n) / n
    x1, x2 = np.meshgrid(x, x, indexing="ij")
    return 0.1 * (np.sin(2 * np.pi * (x1 + x2)) + np.cos(2 * np.pi * (x1 + x2)))


def velocity_from_vorticity_hat(w_hat, kx, ky):
    """``psi = (-Lap)^-1 w``, ``u = d_y psi``, ``v = -d_x psi`` (Nyquist derivative zeroed)."""
    n = kx.shape[0]
    k2 = kx**2 + ky**2
    k2[0, 0] = 1.0
    psi_hat = w_hat / k2
    psi_hat[0, 0] = 0.0
    dx, dy = _nyquist_free(kx, n), _nyquist_free(ky, n)
    u = np.fft.ifft2(1j * dy * psi_hat).real
    v = np.fft.ifft2(-1j * dx * psi_hat).real
    return u, v


def _nyquist_free(k, n):
    if n % 2 == 0:
        k = k.copy()
        k[np.isclose(np.abs(k), np.pi * n)] = 0.0
    return k


def vorticity_from_velocity(u, v):
    n = u.shape[0]
    kx, ky = spectral_wavenumbers_2d(n)
    dx, dy = _nyquist_free(kx, n), _nyquist_free(ky, n)
    return np.fft.ifft2(1j * dx * np.fft.fft2(v) - 1j * dy * np.fft.fft2(u)).real


def solve_ns(u0: np.ndarray, re: float, n_t: int, horizon: float = 1.0, forcing: bool = True,
             cfl: float = 0.5, dt_max: float = 1e-2) -> np.ndarray:
    """Incompressible 2D Navier-Stokes in vorticity form on the periodic unit square.

    ``u0`` has shape ``(2, n, n)`` (components u, v).  Returns
    ``(n_t, 2, n, n)`` velocity snapshots at uniform times on
    ``[0, horizon]``; velocities are recovered from the stream function,
    so every snapshot is spectrally divergence-free.
    """
    u0 = np.asarray(u0, dtype=float)
    if u0.ndim != 3 or u0.shape[0] != 2 or u0.shape[1] != u0.shape[2]:
        raise ValueError("NS initial velocity must have shape (2, n, n)")
    if re <= 0:
        raise ValueError("Reynolds number must be positive")
    n = u0.shape[1]
    kx, ky = spectral_wavenumbers_2d(n)
    dx, dy = _nyquist_free(kx, n), _nyquist_free(ky, n)
    keep = _dealias_mask(n)[:, None] & _dealias_mask(n)[None, :]
    lin = -(kx**2 + ky**2) / re
    f_hat = np.fft.fft2(ns_forcing(n)) if forcing else 0.0
    # the stream function carries only k != 0; the mean flow is carried separately
    mean_u, mean_v = u0[0].mean(), u0[1].mean()

    def nonlinear(w_hat):
        w_d = w_hat * keep
        u, v = velocity_from_vorticity_hat(w_d, kx, ky)
        wx = np.fft.ifft2(1j * dx * w_d).real
        wy = np.fft.ifft2(1j * dy * w_d).real
        return -np.fft.fft2((u + mean_u) * wx + (v + mean_v) * wy) * keep + f_hat

    w_hat = np.fft.fft2(vorticity_from_velocity(u0[0], u0[1]))
    h = 1.0 / n
    umax = max(np.max(np.abs(u0)), 1.0)
    sub = _substeps(horizon, n_t, min(dt_max, cfl * h / umax))
    dt = horizon / (n_t - 1) / sub
    out = np.empty((n_t, 2, n, n))
    out[0] = u0
    for step in range(1, n_t):
        for _ in range(sub):
            w_hat = _imex_step(w_hat, 0.0, nonlinear, lin, dt)
        u, v = velocity_from_vorticity_hat(w_hat, kx, ky)
        out[step, 0] = u + mean_u
        out[step, 1] = v + mean_v
        if not np.all(np.isfinite(out[step])):
            raise SolverError(f"Navier-Stokes solution became non-finite at snapshot {step}")
    return out
