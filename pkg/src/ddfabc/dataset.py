"""Supervised samples for the learned boundary, harvested from CPML teacher runs.

The *ring* is the set of outermost tangential E edges of the physical region:
``ey[0, j]`` (left), ``ey[nx, j]`` (right), ``ex[i, 0]`` (bottom) and
``ex[i, ny]`` (top). In the teacher grid these edges sit exactly on the PML
interface; in the learned-boundary grid they are what the forest predicts.

Every ring location is mapped to one canonical frame, the left edge: ``u``
points inward, ``v`` runs along the edge. Under that map the tangential E
becomes canonical ``ey``, the normal E canonical ``ex`` and Hz picks up the
determinant sign of the map. Locations whose tangential window leaves the
edge are *corner* rows; they are additionally mirrored along ``v`` so the
missing (zero-filled) side is always at negative offsets.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError
from .fdtd import FieldGrid, run
from .pml import CpmlBoundary, PmlParams
from .scene import SimConfig

DS_MAGIC = b"DDFDS001"
COMPONENTS = ("ex", "ey", "hz")

# sign of (normal E, tangential E, Hz) after mapping each edge onto the left edge
_EDGE_SIGNS = {"left": (1, 1, 1), "right": (-1, 1, -1), "bottom": (1, 1, -1), "top": (-1, 1, 1)}


@dataclass(frozen=True)
class StencilSpec:
    inward_depth: int = 3
    tangential_halfwidth: int = 1
    components: tuple[str, ...] = COMPONENTS
    time_levels: int = 2

    def __post_init__(self):
        comps = tuple(c.lower() for c in self.components)
        if not comps or any(c not in COMPONENTS for c in comps) or len(set(comps)) != len(comps):
            raise ConfigError(f"components must be a subset of {COMPONENTS}")
        object.__setattr__(self, "components", tuple(c for c in COMPONENTS if c in comps))
        if self.inward_depth < 1 or self.tangential_halfwidth < 0:
            raise ConfigError("inward_depth >= 1 and tangential_halfwidth >= 0 required")
        if self.time_levels != 2:
            raise ConfigError("only two time levels (n, n-1) are supported")

    @property
    def per_level(self) -> int:
        return self.inward_depth * (2 * self.tangential_halfwidth + 1) * len(self.components)

    @property
    def n_features(self) -> int:
        return self.per_level * self.time_levels

    def as_meta(self) -> dict[str, str]:
        return {"stencil.inward_depth": str(self.inward_depth),
                "stencil.tangential_halfwidth": str(self.tangential_halfwidth),
                "stencil.components": ",".join(self.components),
                "stencil.time_levels": str(self.time_levels)}

    @classmethod
    def from_meta(cls, meta: dict[str, str]) -> "StencilSpec":
        return cls(int(meta["stencil.inward_depth"]), int(meta["stencil.tangential_halfwidth"]),
                   tuple(meta["stencil.components"].split(",")), int(meta["stencil.time_levels"]))


class RingMap:
    """Gather tables from a flat field vector to canonical stencil features.

    The flat vector is ``[ex.ravel(), ey.ravel(), hz.ravel(), 0.0]``; the last
    slot serves every stencil position that falls outside the grid.
    """

    def __init__(self, nx: int, ny: int, stencil: StencilSpec):
        D, h = stencil.inward_depth, stencil.tangential_halfwidth
        if D > min(nx, ny) // 2 or 2 * h + 1 > min(nx, ny):
            raise ConfigError(f"stencil {stencil} does not fit a {nx}x{ny} region")
        self.nx, self.ny, self.stencil = nx, ny, stencil
        self.offsets = {"ex": 0, "ey": nx * (ny + 1), "hz": nx * (ny + 1) + (nx + 1) * ny}
        self.zero_slot = self.offsets["hz"] + nx * ny
        rows, signs = [], []
        self.target_array, self.target_index, self.target_sign = [], [], []
        self.corner, self.edge = [], []
        for edge, n_along in (("left", ny), ("right", ny), ("bottom", nx), ("top", nx)):
            for a in range(n_along):
                mirror = 1
                is_corner = a < h or a > n_along - 1 - h
                if a > n_along - 1 - h:
                    mirror = -1
                idx, sg = self._location(edge, a, mirror)
                rows.append(idx)
                signs.append(sg)
                arr, idx = self._ring_edge(edge, a)
                self.target_array.append(arr)
                self.target_index.append(idx)
                self.target_sign.append(float(_EDGE_SIGNS[edge][1] * mirror))
                self.corner.append(is_corner)
                self.edge.append(edge)
        self.index = np.array(rows)
        self.sign = np.array(signs, dtype=float)
        self.target_sign = np.array(self.target_sign)
        self.target_index = np.array(self.target_index)
        self.target_flat = np.array([self.offsets[a] + i for a, i in
                                     zip(self.target_array, self.target_index)])
        self.target_array = np.array(self.target_array)
        self.corner = np.array(self.corner)
        self.edge = np.array(self.edge)

    @property
    def n_locations(self) -> int:
        return self.index.shape[0]

    def _flat(self, comp: str, i: int, j: int) -> int:
        shape = {"ex": (self.nx, self.ny + 1), "ey": (self.nx + 1, self.ny),
                 "hz": (self.nx, self.ny)}[comp]
        if 0 <= i < shape[0] and 0 <= j < shape[1]:
            return self.offsets[comp] + i * shape[1] + j
        return self.zero_slot

    def _ring_edge(self, edge: str, a: int):
        nx, ny = self.nx, self.ny
        if edge == "left":
            return "ey", 0 * ny + a
        if edge == "right":
            return "ey", nx * ny + a
        if edge == "bottom":
            return "ex", a * (ny + 1)
        return "ex", a * (ny + 1) + ny

    def _location(self, edge: str, a: int, mirror: int):
        nx, ny = self.nx, self.ny
        s_n, s_t, s_h = _EDGE_SIGNS[edge]
        s_t, s_h = s_t * mirror, s_h * mirror
        D, h = self.stencil.inward_depth, self.stencil.tangential_halfwidth
        n_along = ny if edge in ("left", "right") else nx
        idx, sg = [], []
        for comp in self.stencil.components:
            for k in range(D):
                for t in range(-h, h + 1):
                    v = a + mirror * t
                    if not 0 <= v < n_along:
                        idx.append(self.zero_slot)
                        sg.append(0.0)
                        continue
                    # normal E sits on integer v; take the edge at canonical offset t,
                    # which for a mirrored corner row is the physical edge a + 1 - t
                    w = a + t if mirror == 1 else a + 1 - t
                    if edge == "left":
                        pos = {"ey": ("ey", k, v), "hz": ("hz", k, v), "ex": ("ex", k, w)}[comp]
                    elif edge == "right":
                        pos = {"ey": ("ey", nx - k, v), "hz": ("hz", nx - 1 - k, v),
                               "ex": ("ex", nx - 1 - k, w)}[comp]
                    elif edge == "bottom":
                        pos = {"ey": ("ex", v, k), "hz": ("hz", v, k), "ex": ("ey", w, k)}[comp]
                    else:
                        pos = {"ey": ("ex", v, ny - k), "hz": ("hz", v, ny - 1 - k),
                               "ex": ("ey", w, ny - 1 - k)}[comp]
                    idx.append(self._flat(*pos))
                    sg.append({"ex": s_n, "ey": s_t, "hz": s_h}[comp])
        return idx, sg

    def flat(self, grid: FieldGrid) -> np.ndarray:
        return np.concatenate([grid.ex.ravel(), grid.ey.ravel(), grid.hz.ravel(), [0.0]])

    def level_features(self, flat: np.ndarray) -> np.ndarray:
        """Canonical stencil values of one time level, shape (locations, per_level)."""
        return flat[self.index] * self.sign

    def targets(self, flat: np.ndarray) -> np.ndarray:
        return flat[self.target_flat] * self.target_sign

    def write_ring(self, grid: FieldGrid, canonical_values: np.ndarray) -> None:
        phys = canonical_values * self.target_sign
        ex_sel = self.target_array == "ex"
        grid.ex.ravel()[self.target_index[ex_sel]] = phys[ex_sel]
        grid.ey.ravel()[self.target_index[~ex_sel]] = phys[~ex_sel]

    def band_mask(self) -> dict[str, np.ndarray]:
        """Boolean masks of every field entry the features read."""
        used = np.zeros(self.zero_slot + 1, dtype=bool)
        used[self.index.ravel()] = True
        o = self.offsets
        nx, ny = self.nx, self.ny
        return {"ex": used[o["ex"]:o["ey"]].reshape(nx, ny + 1),
                "ey": used[o["ey"]:o["hz"]].reshape(nx + 1, ny),
                "hz": used[o["hz"]:self.zero_slot].reshape(nx, ny)}


@dataclass
class SampleSet:
    features: np.ndarray
    targets: np.ndarray
    metadata: dict[str, str] = field(default_factory=dict)
    corner: np.ndarray | None = None      # per-row corner tag (in memory only)
    steps: np.ndarray | None = None       # per-row step index n (in memory only)
    locations: np.ndarray | None = None   # per-row ring location (in memory only)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float)
        if self.features.ndim != 2 or self.targets.shape != (self.features.shape[0],):
            raise ValueError("features must be (N, M) with N targets")

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def select(self, rows) -> "SampleSet":
        pick = lambda a: None if a is None else a[rows]
        return SampleSet(self.features[rows], self.targets[rows], dict(self.metadata),
                         pick(self.corner), pick(self.steps), pick(self.locations))

    def kind(self, which: str) -> "SampleSet":
        """Rows of one kind ("edge" or "corner"), tagged in metadata."""
        if self.corner is None:
            raise ValueError("sample set carries no corner tags")
        out = self.select(self.corner if which == "corner" else ~self.corner)
        out.metadata["rows"] = which
        return out

    # --- file io ---

    def to_bytes(self) -> bytes:
        meta = "".join(f"{k}={v}\n" for k, v in sorted(self.metadata.items())).encode("utf-8")
        head = DS_MAGIC + struct.pack("<II", self.n_rows, self.n_features)
        return (head + struct.pack("<I", len(meta)) + meta
                + self.features.astype("<f8").tobytes() + self.targets.astype("<f8").tobytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "SampleSet":
        if data[:8] != DS_MAGIC:
            raise ValueError(f"not a dataset file (magic {data[:8]!r})")
        n, m, lm = struct.unpack_from("<III", data, 8)
        off = 20
        meta = dict(line.split("=", 1) for line in data[off:off + lm].decode("utf-8").splitlines()
                    if line)
        off += lm
        if len(data) != off + 8 * n * (m + 1):
            raise ValueError("dataset file size does not match its header")
        X = np.frombuffer(data, "<f8", n * m, off).reshape(n, m).astype(float)
        y = np.frombuffer(data, "<f8", n, off + 8 * n * m).astype(float)
        if meta.get("n_features", str(m)) != str(m):
            raise ValueError("metadata feature count disagrees with the matrix width")
        return cls(X, y, meta)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "SampleSet":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"f{i + 1}" for i in range(self.n_features)] + ["target"])
            for x, y in zip(self.features, self.targets):
                w.writerow([repr(float(v)) for v in x] + [repr(float(y))])


def scenario_meta(sim: SimConfig) -> str:
    i, j = sim.source
    return f"{i}:{j}:{sim.t_w!r}:{sim.amplitude!r}"


def teacher_meta(sim: SimConfig, pml: PmlParams) -> dict[str, str]:
    return {
        "teacher.variant": "cpml-recursive-convolution-polynomial",
        "teacher.pml.thickness": str(pml.thickness), "teacher.pml.m": repr(pml.m),
        "teacher.pml.sigma_max_ratio": repr(pml.sigma_max_ratio),
        "teacher.pml.kappa_max": repr(pml.kappa_max), "teacher.pml.alpha": repr(pml.alpha),
        "grid.nx": str(sim.nx), "grid.ny": str(sim.ny), "grid.dx": repr(sim.dx),
        "grid.dy": repr(sim.dy), "grid.dt": repr(sim.dt), "grid.n_steps": str(sim.n_steps),
    }


def teacher_snapshots(sim: SimConfig, pml: PmlParams, on_snapshot) -> object:
    """Run the CPML teacher, calling ``on_snapshot(n, grid)`` with the physical
    sub-grid after ``n`` completed steps (n = 1..n_steps). Returns the probe record."""
    L = pml.thickness
    spec = sim.grid(L)
    nx, ny = sim.nx, sim.ny

    def hook(grid, n):
        sub = FieldGrid(grid.ex[L:L + nx, L:L + ny + 1], grid.ey[L:L + nx + 1, L:L + ny],
                        grid.hz[L:L + nx, L:L + ny])
        on_snapshot(n + 1, sub)

    return run(spec, sim.source_spec(L), sim.sheet(L), CpmlBoundary(spec, pml),
               sim.probe_positions(L), on_step=hook)


def extract_samples(sim: SimConfig, pml: PmlParams = PmlParams(),
                    stencil: StencilSpec = StencilSpec(), stride: int = 1) -> SampleSet:
    """Rows (features at n and n-1, ring target at n+1) for every n >= 1.

    ``stride`` keeps every ``stride``-th step n to thin the set.
    """
    ring = RingMap(sim.nx, sim.ny, stencil)
    levels: list[np.ndarray] = [ring.level_features(np.zeros(ring.zero_slot + 1))]
    feats, targs, steps = [], [], []

    def on_snapshot(n, sub):
        flat = ring.flat(sub)
        # rows for step n-1 are completed by the ring values of snapshot n
        m = n - 1
        if m >= 1 and m % stride == 0:
            feats.append(np.hstack([levels[-1], levels[-2]]))
            targs.append(ring.targets(flat))
            steps.append(m)
        levels.append(ring.level_features(flat))
        del levels[:-2]

    teacher_snapshots(sim, pml, on_snapshot)
    if not feats:
        raise ConfigError("teacher run too short to produce any samples")
    n_loc = ring.n_locations
    X = np.vstack(feats)
    y = np.concatenate(targs)
    steps = np.repeat(np.array(steps), n_loc)
    locs = np.tile(np.arange(n_loc), len(targs))
    corner = np.tile(ring.corner, len(targs))
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ConfigError("teacher produced non-finite samples")
    meta = teacher_meta(sim, pml)
    meta.update(stencil.as_meta())
    peak = float(max(np.abs(X).max(), np.abs(y).max()))
    meta.update({"canonicalized": "1", "scenarios": scenario_meta(sim), "stride": str(stride),
                 "n_features": str(stencil.n_features), "max_abs_field": repr(peak),
                 "degenerate": "1" if peak == 0.0 else "0", "rows": "all"})
    return SampleSet(X, y, meta, corner, steps, locs)


def concat(sets: list[SampleSet], seed: int | None = None) -> SampleSet:
    if not sets:
        raise ValueError("nothing to concatenate")
    meta = dict(sets[0].metadata)
    meta["scenarios"] = ";".join(s.metadata.get("scenarios", "") for s in sets)
    meta["max_abs_field"] = repr(max(float(s.metadata.get("max_abs_field", 0)) for s in sets))
    meta["degenerate"] = "1" if all(s.metadata.get("degenerate") == "1" for s in sets) else "0"
    if seed is not None:
        meta["seed"] = str(seed)
    cat = lambda name: (None if any(getattr(s, name) is None for s in sets)
                        else np.concatenate([getattr(s, name) for s in sets]))
    return SampleSet(np.vstack([s.features for s in sets]),
                     np.concatenate([s.targets for s in sets]), meta,
                     cat("corner"), cat("steps"), cat("locations"))


def split(data: SampleSet, ratios=(0.8, 0.1, 0.1), seed: int = 0):
    """Shuffled partition into (train, valid, test)."""
    ratios = np.asarray(ratios, dtype=float)
    if ratios.shape != (3,) or np.any(ratios <= 0) or abs(ratios.sum() - 1.0) > 1e-9:
        raise ValueError("ratios must be three positive numbers summing to 1")
    n = data.n_rows
    n_train = int(round(ratios[0] * n))
    n_valid = int(round(ratios[1] * n))
    n_test = n - n_train - n_valid
    if min(n_train, n_valid, n_test) < 1:
        raise ValueError(f"split of {n} rows by {tuple(ratios)} leaves a part empty")
    order = np.random.default_rng(seed).permutation(n)
    cut = np.split(order, [n_train, n_train + n_valid])
    return tuple(data.select(np.sort(part)) for part in cut)


def scenario_sweep(base: SimConfig, n_scenarios: int, seed: int = 0,
                   jitter: bool = True) -> list[SimConfig]:
    """Teacher scenarios: the base scene first, then jittered copies.

    Jitter draws a free source edge of the physical region, scales t_w and
    the amplitude by factors in [0.5, 2].
    """
    if n_scenarios < 1:
        raise ValueError("n_scenarios must be >= 1")
    rng = np.random.default_rng(seed)
    sheet = base.sheet()
    out = [base]
    for _ in range(n_scenarios - 1):
        if not jitter:
            out.append(base)
            continue
        while True:
            i = int(rng.integers(1, base.nx))
            j = int(rng.integers(0, base.ny))
            if not sheet.covers_ey(i, j):
                break
        tw_scale, amp_scale = rng.uniform(0.5, 2.0, size=2)
        t0 = None if base.t0 is None else base.t0 * tw_scale
        out.append(replace(base, source_pos=(i, j), t_w=base.t_w * tw_scale, t0=t0,
                           amplitude=base.amplitude * amp_scale))
    return out


def extract_sweep(scenarios: list[SimConfig], pml: PmlParams = PmlParams(),
                  stencil: StencilSpec = StencilSpec(), stride: int = 1,
                  seed: int | None = None) -> SampleSet:
    return concat([extract_samples(s, pml, stencil, stride) for s in scenarios], seed)


def curate(data: SampleSet, threshold: float = 1e-3, quiet_ratio: float = 1.0,
           seed: int = 0) -> SampleSet:
    """Keep active rows plus a random subset of quiescent ones.

    A row is active when its largest |feature| exceeds ``threshold`` times the
    set-wide maximum. Quiescent rows are kept at ``quiet_ratio`` times the
    active count so the model still sees the zero state. ``threshold <= 0``
    returns the set unchanged.
    """
    if threshold <= 0 or data.n_rows == 0:
        return data
    mag = np.abs(data.features).max(axis=1)
    active = mag > threshold * mag.max() if mag.max() > 0 else np.zeros(data.n_rows, bool)
    quiet = np.flatnonzero(~active)
    n_quiet = min(quiet.size, int(round(quiet_ratio * active.sum())))
    pick = np.random.default_rng(seed).choice(quiet, n_quiet, replace=False)
    keep = active.copy()
    keep[pick] = True
    if not keep.any():
        keep[:] = True
    out = data.select(keep)
    out.metadata.update({"curate.threshold": repr(threshold), "curate.quiet_ratio": repr(quiet_ratio),
                         "curate.active_rows": str(int(active.sum()))})
    return out
