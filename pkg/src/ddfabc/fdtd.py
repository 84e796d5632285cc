"""2D TEz Yee-grid FDTD engine.

Layout (cell indices i along x, j along y, nx by ny cells)::

    ex[i, j]  shape (nx, ny+1)   at ((i+1/2) dx, j dy)        horizontal edges
    ey[i, j]  shape (nx+1, ny)   at (i dx, (j+1/2) dy)        vertical edges
    hz[i, j]  shape (nx, ny)     at ((i+1/2) dx, (j+1/2) dy)  cell centres

The outermost tangential E (ex[:, 0], ex[:, ny], ey[0, :], ey[nx, :]) is never
touched by the interior update; it belongs to the active boundary handler.
With the default handler it stays at zero, i.e. a PEC wall.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, InstabilityError

C0 = 299_792_458.0
MU0 = 4e-7 * math.pi
EPS0 = 1.0 / (MU0 * C0 * C0)
ETA0 = MU0 * C0


def courant_limit(dx: float, dy: float) -> float:
    """Largest stable 2D Yee time step, 1 / (c sqrt(1/dx^2 + 1/dy^2))."""
    if not (dx > 0 and dy > 0):
        raise ValueError(f"cell sizes must be positive, got dx={dx}, dy={dy}")
    return 1.0 / (C0 * math.sqrt(1.0 / dx**2 + 1.0 / dy**2))


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int
    dx: float = 1e-3
    dy: float = 1e-3
    dt: float | None = None
    n_steps: int = 1500

    def __post_init__(self):
        if not (self.dx > 0 and self.dy > 0):
            raise ConfigError("dx and dy must be positive")
        if self.nx < 3 or self.ny < 3:
            raise ConfigError(f"grid too small: {self.nx} x {self.ny}")
        if self.n_steps < 0:
            raise ConfigError("n_steps must be >= 0")
        limit = courant_limit(self.dx, self.dy)
        if self.dt is None:
            object.__setattr__(self, "dt", 0.5 * limit)
        if not (0 < self.dt <= limit):
            raise ConfigError(f"dt={self.dt:g} violates the Courant limit {limit:g}")

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny


@dataclass
class FieldGrid:
    ex: np.ndarray
    ey: np.ndarray
    hz: np.ndarray

    @classmethod
    def zeros(cls, spec: GridSpec) -> "FieldGrid":
        return cls(
            ex=np.zeros((spec.nx, spec.ny + 1)),
            ey=np.zeros((spec.nx + 1, spec.ny)),
            hz=np.zeros((spec.nx, spec.ny)),
        )

    def copy(self) -> "FieldGrid":
        return FieldGrid(self.ex.copy(), self.ey.copy(), self.hz.copy())

    def max_abs(self) -> float:
        return max(np.abs(self.ex).max(), np.abs(self.ey).max(), np.abs(self.hz).max())


@dataclass(frozen=True)
class SourceSpec:
    """Soft y-directed line current driven by a differentiated Gaussian."""

    position: tuple[int, int]
    t_w: float = 26.53e-12
    t0: float | None = None
    amplitude: float = 1.0

    def __post_init__(self):
        if not self.t_w > 0:
            raise ConfigError("t_w must be positive")
        if self.t0 is None:
            object.__setattr__(self, "t0", 4.0 * self.t_w)
        if self.t0 < 3.0 * self.t_w:
            raise ConfigError("t0 must be at least 3 t_w so the pulse starts near zero")
        object.__setattr__(self, "position", (int(self.position[0]), int(self.position[1])))

    def current(self, t):
        tau = (np.asarray(t, dtype=float) - self.t0) / self.t_w
        return -2.0 * tau * np.exp(-tau * tau)


@dataclass(frozen=True)
class PecSheet:
    """One-cell-thick PEC strip occupying cells [i_start, i_end) of row j_row.

    Every E edge bounding those cells is held at zero.
    """

    j_row: int
    i_start: int
    i_end: int

    def __post_init__(self):
        if self.i_end <= self.i_start:
            raise ConfigError("PEC sheet must have positive width")

    @property
    def width(self) -> int:
        return self.i_end - self.i_start

    def check_inside(self, spec: GridSpec) -> None:
        if not (0 < self.i_start and self.i_end < spec.nx and 0 < self.j_row < spec.ny - 1):
            raise ConfigError(f"PEC sheet {self} does not lie strictly inside a {spec.nx}x{spec.ny} grid")

    def enforce(self, grid: FieldGrid) -> None:
        i0, i1, j = self.i_start, self.i_end, self.j_row
        grid.ex[i0:i1, j:j + 2] = 0.0
        grid.ey[i0:i1 + 1, j] = 0.0

    def covers_ey(self, i: int, j: int) -> bool:
        return j == self.j_row and self.i_start <= i <= self.i_end


class BoundaryHandler:
    """Hooks called by :func:`run` around the interior updates.

    The base class leaves the outer ring at zero, i.e. PEC walls.
    """

    name = "pec"

    def begin_step(self, grid: FieldGrid, step: int) -> None:
        pass

    def post_h(self, grid: FieldGrid, step: int) -> None:
        pass

    def apply(self, grid: FieldGrid, step: int) -> None:
        pass


PecBoundary = BoundaryHandler


def _check_finite(arr: np.ndarray, name: str, step: int | None) -> None:
    if not np.isfinite(arr).all():
        raise InstabilityError(f"non-finite {name}", step)


def step_h(grid: FieldGrid, spec: GridSpec, step: int | None = None) -> FieldGrid:
    curl = grid.ey[1:, :] - grid.ey[:-1, :]
    curl /= spec.dx
    dexdy = grid.ex[:, 1:] - grid.ex[:, :-1]
    dexdy /= spec.dy
    curl -= dexdy
    curl *= spec.dt / MU0
    grid.hz -= curl
    _check_finite(grid.hz, "hz", step)
    return grid


def step_e(grid: FieldGrid, spec: GridSpec, pec: PecSheet | None = None,
           step: int | None = None) -> FieldGrid:
    ce = spec.dt / EPS0
    dhdy = grid.hz[:, 1:] - grid.hz[:, :-1]
    dhdy /= spec.dy
    dhdy *= ce
    grid.ex[:, 1:-1] += dhdy
    dhdx = grid.hz[1:, :] - grid.hz[:-1, :]
    dhdx /= spec.dx
    dhdx *= ce
    grid.ey[1:-1, :] -= dhdx
    if pec is not None:
        pec.enforce(grid)
    _check_finite(grid.ex, "ex", step)
    _check_finite(grid.ey, "ey", step)
    return grid


def inject_source(grid: FieldGrid, src: SourceSpec, t: float, spec: GridSpec) -> FieldGrid:
    i, j = src.position
    grid.ey[i, j] -= (spec.dt / EPS0) * float(src.current(t)) / spec.dx * src.amplitude
    return grid


def check_source(src: SourceSpec, spec: GridSpec, pec: PecSheet | None = None) -> None:
    i, j = src.position
    if not (0 < i < spec.nx and 0 <= j < spec.ny):
        raise ConfigError(f"source {src.position} is not an interior Ey edge")
    if pec is not None and pec.covers_ey(i, j):
        raise ConfigError(f"source {src.position} sits on the PEC sheet")


@dataclass
class ProbeRecord:
    probes: list[tuple[int, int]]
    dt: float
    series: np.ndarray  # (n_probes, n_steps), Ey after each completed step
    steps_done: int = 0

    @property
    def times(self) -> np.ndarray:
        return (np.arange(self.series.shape[1]) + 1) * self.dt

    def trace(self, k: int = 0) -> np.ndarray:
        return self.series[k, : self.steps_done]

    def to_csv(self, path, k: int = 0) -> None:
        write_probe_csv(path, self.trace(k), self.dt)


def write_probe_csv(path, ey: Sequence[float], dt: float) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "t_seconds", "ey"])
        for n, v in enumerate(ey, start=1):
            w.writerow([n, f"{n * dt:.16e}", f"{float(v):.16e}"])


def read_probe_csv(path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        return np.zeros(0), np.zeros(0)
    return data[:, 1], data[:, 2]


def run(spec: GridSpec, src: SourceSpec, pec: PecSheet | None = None,
        boundary: BoundaryHandler | None = None,
        probes: Sequence[tuple[int, int]] = (),
        on_step: Callable[[FieldGrid, int], None] | None = None,
        grid: FieldGrid | None = None) -> ProbeRecord:
    """Leapfrog loop: H update, E update, boundary, source, probes.

    Raises :class:`InstabilityError` with ``partial`` set to the probe record
    collected so far when any field goes non-finite.
    """
    boundary = boundary if boundary is not None else BoundaryHandler()
    check_source(src, spec, pec)
    if pec is not None:
        pec.check_inside(spec)
    probes = [(int(i), int(j)) for i, j in probes]
    for i, j in probes:
        if not (0 <= i <= spec.nx and 0 <= j < spec.ny):
            raise ConfigError(f"probe {(i, j)} outside the Ey array")
    grid = grid if grid is not None else FieldGrid.zeros(spec)
    rec = ProbeRecord(probes, spec.dt, np.zeros((len(probes), spec.n_steps)))
    pi = np.array([p[0] for p in probes], dtype=int)
    pj = np.array([p[1] for p in probes], dtype=int)
    for n in range(spec.n_steps):
        try:
            boundary.begin_step(grid, n)
            step_h(grid, spec, n)
            boundary.post_h(grid, n)
            step_e(grid, spec, pec, n)
            boundary.apply(grid, n)
            inject_source(grid, src, (n + 0.5) * spec.dt, spec)
        except InstabilityError as exc:
            if exc.step is None:
                exc = InstabilityError(str(exc), n)
            exc.partial = rec
            raise exc
        if len(probes):
            rec.series[:, n] = grid.ey[pi, pj]
        rec.steps_done = n + 1
        if on_step is not None:
            on_step(grid, n)
    return rec


def em_energy(grid: FieldGrid, spec: GridSpec, prev: FieldGrid | None = None) -> float:
    """Discrete EM energy per unit length.

    ``prev`` is the state one full step earlier. With it the electric term
    becomes E^n . E^{n+1}, which together with |H^{n+1/2}|^2 is exactly
    conserved by the Yee scheme in a lossless PEC cavity.
    """
    if prev is None:
        we = np.sum(grid.ex * grid.ex) + np.sum(grid.ey * grid.ey)
    else:
        we = np.sum(grid.ex * prev.ex) + np.sum(grid.ey * prev.ey)
    wh = np.sum(grid.hz * grid.hz)
    return float((0.5 * EPS0 * we + 0.5 * MU0 * wh) * spec.dx * spec.dy)
