"""Physical scene (sheet, source, probe) and its embedding into padded grids.

All positions in :class:`SimConfig` are in physical-region coordinates. A
scheme embeds the physical region in a grid padded by ``pad`` cells on every
side: 0 for PEC walls and the learned one-cell ring, the PML thickness for the
CPML teacher, and a large margin for the reference run.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .errors import ConfigError
from .fdtd import GridSpec, PecSheet, SourceSpec, courant_limit


@dataclass(frozen=True)
class SimConfig:
    sheet_width: int = 100
    gap: int = 3
    dx: float = 1e-3
    dy: float = 1e-3
    dt: float | None = None
    n_steps: int = 1500
    t_w: float = 26.53e-12
    t0: float | None = None
    amplitude: float = 1.0
    source_offset: int = 2          # rows above the sheet, at the sheet centre
    probe_offset: int = 2           # columns past the right end of the sheet
    source_pos: tuple[int, int] | None = None   # overrides source_offset
    probe_pos: tuple[int, int] | None = None    # overrides probe_offset
    extra_probes: tuple[tuple[int, int], ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.sheet_width < 1 or self.gap < 1:
            raise ConfigError("sheet_width and gap must be >= 1")
        if self.dt is None:
            object.__setattr__(self, "dt", 0.5 * courant_limit(self.dx, self.dy))
        i, j = self.source
        if not (0 < i < self.nx and 0 <= j < self.ny) or self.sheet().covers_ey(i, j):
            raise ConfigError(f"source {self.source} is not a free Ey edge of the physical region")
        for p in self.probes:
            if not (0 < p[0] < self.nx and 0 <= p[1] < self.ny):
                raise ConfigError(f"probe {p} outside the physical region")

    @property
    def nx(self) -> int:
        return self.sheet_width + 2 * self.gap

    @property
    def ny(self) -> int:
        return 2 * self.gap + 1

    @property
    def source(self) -> tuple[int, int]:
        if self.source_pos is not None:
            return tuple(self.source_pos)
        return (self.nx // 2, self.gap + self.source_offset)

    @property
    def probe(self) -> tuple[int, int]:
        if self.probe_pos is not None:
            return tuple(self.probe_pos)
        return (self.gap + self.sheet_width + self.probe_offset, self.gap)

    @property
    def probes(self) -> list[tuple[int, int]]:
        return [self.probe, *[tuple(p) for p in self.extra_probes]]

    def sheet(self, pad: int = 0) -> PecSheet:
        return PecSheet(j_row=self.gap + pad, i_start=self.gap + pad,
                        i_end=self.gap + self.sheet_width + pad)

    def grid(self, pad: int = 0, n_steps: int | None = None) -> GridSpec:
        return GridSpec(self.nx + 2 * pad, self.ny + 2 * pad, self.dx, self.dy, self.dt,
                        self.n_steps if n_steps is None else n_steps)

    def source_spec(self, pad: int = 0) -> SourceSpec:
        i, j = self.source
        return SourceSpec((i + pad, j + pad), self.t_w, self.t0, self.amplitude)

    def probe_positions(self, pad: int = 0) -> list[tuple[int, int]]:
        return [(i + pad, j + pad) for i, j in self.probes]

    def with_(self, **kw) -> "SimConfig":
        return replace(self, **kw)
