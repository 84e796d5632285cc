"""Unsplit convolutional PML (recursive-convolution psi form) for the TEz grid.

The PML occupies the outer ``thickness`` cells of the grid on the selected
sides and is backed by the PEC ring the core update already leaves at zero.
Grading is polynomial in the normalised depth rho (0 at the interface, 1 at
the outer wall); corners get the superposition of both stretches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InstabilityError
from .fdtd import EPS0, ETA0, MU0, BoundaryHandler, FieldGrid, GridSpec


@dataclass(frozen=True)
class PmlParams:
    thickness: int = 10
    m: float = 4.0
    sigma_max_ratio: float = 1.0
    kappa_max: float = 1.0
    alpha: float = 0.0

    def __post_init__(self):
        if self.thickness < 1 or self.m < 1 or self.kappa_max < 1 or self.alpha < 0:
            raise ConfigError(f"invalid PML parameters {self}")
        if not self.sigma_max_ratio >= 0:
            raise ConfigError("sigma_max_ratio must be non-negative")

    def sigma_max(self, cell: float) -> float:
        return self.sigma_max_ratio * (self.m + 1) * 0.8 / (ETA0 * cell)


def grade_profile(params: PmlParams, rho, cell: float = 1e-3):
    """Return ``(sigma, kappa, alpha)`` at normalised depth ``rho``."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0) or np.any(rho > 1) or not np.all(np.isfinite(rho)):
        raise ValueError("depth fraction must lie in [0, 1]")
    poly = rho ** params.m
    sigma = params.sigma_max(cell) * poly
    kappa = 1.0 + (params.kappa_max - 1.0) * poly
    alpha = np.full_like(rho, params.alpha)
    return sigma, kappa, alpha


def recursion_coefficients(sigma, kappa, alpha, dt: float):
    """psi <- b psi + c d(field); c is zero wherever sigma vanishes."""
    sigma, kappa, alpha = (np.asarray(a, dtype=float) for a in (sigma, kappa, alpha))
    b = np.exp(-(sigma / kappa + alpha) * dt / EPS0)
    denom = sigma * kappa + kappa * kappa * alpha
    c = np.zeros_like(b)
    nz = denom > 0
    c[nz] = sigma[nz] / denom[nz] * (b[nz] - 1.0)
    return b, c


def _slab(n: int, L: int, staggered: bool):
    """Indices and depth fractions of one axis' two PML slabs.

    ``staggered`` selects cell-centred (H) positions; otherwise node (E)
    positions strictly inside the PML, skipping the wall and the interface.
    """
    if staggered:
        idx = np.r_[0:L, n - L:n]
        pos = idx + 0.5
    else:
        idx = np.r_[1:L, n - L + 1:n]
        pos = idx.astype(float)
    depth = np.where(idx < n / 2, L - pos, pos - (n - L))
    return idx, depth / L


class _Axis:
    def __init__(self, n: int, cell: float, params: PmlParams, dt: float):
        L = params.thickness
        self.h_idx, rho_h = _slab(n, L, True)
        self.e_idx, rho_e = _slab(n, L, False)
        s, k, a = grade_profile(params, rho_h, cell)
        self.bh, self.ch = recursion_coefficients(s, k, a, dt)
        self.kh = 1.0 / k - 1.0
        s, k, a = grade_profile(params, rho_e, cell)
        self.be, self.ce = recursion_coefficients(s, k, a, dt)
        self.ke = 1.0 / k - 1.0


class CpmlBoundary(BoundaryHandler):
    """Graded CPML on the outer ``params.thickness`` cells.

    ``sides`` is ``"xy"`` (all four edges), ``"x"`` (left/right only) or
    ``"y"`` (top/bottom only).
    """

    name = "cpml"

    def __init__(self, spec: GridSpec, params: PmlParams = PmlParams(), sides: str = "xy"):
        L = params.thickness
        if ("x" in sides and spec.nx <= 2 * L) or ("y" in sides and spec.ny <= 2 * L):
            raise ConfigError(f"{L}-cell PML does not fit a {spec.nx}x{spec.ny} grid")
        self.spec, self.params, self.sides = spec, params, sides
        self.x = _Axis(spec.nx, spec.dx, params, spec.dt) if "x" in sides else None
        self.y = _Axis(spec.ny, spec.dy, params, spec.dt) if "y" in sides else None
        if self.x is not None:
            self.psi_hzx = np.zeros((self.x.h_idx.size, spec.ny))
            self.psi_eyx = np.zeros((self.x.e_idx.size, spec.ny))
        if self.y is not None:
            self.psi_hzy = np.zeros((spec.nx, self.y.h_idx.size))
            self.psi_exy = np.zeros((spec.nx, self.y.e_idx.size))

    def post_h(self, grid: FieldGrid, step: int) -> None:
        ch = self.spec.dt / MU0
        if self.x is not None:
            ax, i = self.x, self.x.h_idx
            d = (grid.ey[i + 1, :] - grid.ey[i, :]) / self.spec.dx
            self.psi_hzx *= ax.bh[:, None]
            self.psi_hzx += ax.ch[:, None] * d
            grid.hz[i, :] -= ch * (ax.kh[:, None] * d + self.psi_hzx)
        if self.y is not None:
            ay, j = self.y, self.y.h_idx
            d = (grid.ex[:, j + 1] - grid.ex[:, j]) / self.spec.dy
            self.psi_hzy *= ay.bh[None, :]
            self.psi_hzy += ay.ch[None, :] * d
            grid.hz[:, j] += ch * (ay.kh[None, :] * d + self.psi_hzy)
        self._check(step)

    def apply(self, grid: FieldGrid, step: int) -> None:
        ce = self.spec.dt / EPS0
        if self.x is not None:
            ax, i = self.x, self.x.e_idx
            d = (grid.hz[i, :] - grid.hz[i - 1, :]) / self.spec.dx
            self.psi_eyx *= ax.be[:, None]
            self.psi_eyx += ax.ce[:, None] * d
            grid.ey[i, :] -= ce * (ax.ke[:, None] * d + self.psi_eyx)
        if self.y is not None:
            ay, j = self.y, self.y.e_idx
            d = (grid.hz[:, j] - grid.hz[:, j - 1]) / self.spec.dy
            self.psi_exy *= ay.be[None, :]
            self.psi_exy += ay.ce[None, :] * d
            grid.ex[:, j] += ce * (ay.ke[None, :] * d + self.psi_exy)
        self._check(step)

    def _check(self, step: int) -> None:
        for name in ("psi_hzx", "psi_eyx", "psi_hzy", "psi_exy"):
            arr = getattr(self, name, None)
            if arr is not None and not np.isfinite(arr).all():
                raise InstabilityError(f"non-finite PML auxiliary {name}", step)
