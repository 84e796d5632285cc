"""One-cell learned absorbing boundary driven by forest inference."""

from __future__ import annotations

import hashlib
import logging
from pathlib import Path

import numpy as np

from .dataset import RingMap, SampleSet, StencilSpec
from .errors import ConfigError, InstabilityError
from .fdtd import BoundaryHandler, FieldGrid, GridSpec
from .forest import Forest, load_forest, save_forest

log = logging.getLogger(__name__)

DEFAULT_CLAMP = 1.0


def stability_guard(value, clamp: float):
    """Saturate ``value`` to [-clamp, clamp]; returns ``(clipped, n_triggered)``."""
    if not clamp > 0:
        raise ValueError("clamp must be positive")
    value = np.asarray(value, dtype=float)
    hit = np.abs(value) > clamp
    out = np.clip(value, -clamp, clamp)
    return (out if out.ndim else float(out)), int(hit.sum())


def clamp_from_meta(meta: dict[str, str]) -> float:
    """10x the largest |field| the teacher dataset saw; 1.0 for all-zero data."""
    peak = float(meta.get("max_abs_field", 0.0))
    return 10.0 * peak if peak > 0 else DEFAULT_CLAMP


def save_model(forest: Forest, path, meta: dict[str, str]) -> None:
    """Model file plus a ``.meta`` key=value sidecar (stencil, clamp, provenance)."""
    save_forest(forest, path)
    text = "".join(f"{k}={v}\n" for k, v in sorted(meta.items()))
    Path(str(path) + ".meta").write_text(text)


def load_model(path) -> tuple[Forest, dict[str, str]]:
    forest = load_forest(path)
    side = Path(str(path) + ".meta")
    meta = {}
    if side.exists():
        meta = dict(l.split("=", 1) for l in side.read_text().splitlines() if l)
    return forest, meta


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class DdfBoundary(BoundaryHandler):
    """Writes the outer ring of tangential E from forest predictions each step.

    ``spec`` must be the physical-region grid (no padding). Corner locations
    use ``corner_model`` when given, otherwise ``edge_model``.
    """

    name = "ddf"

    def __init__(self, spec: GridSpec, edge_model: Forest | None, corner_model: Forest | None = None,
                 stencil: StencilSpec = StencilSpec(), clamp: float = DEFAULT_CLAMP):
        self.ring = RingMap(spec.nx, spec.ny, stencil)
        self.stencil = stencil
        for model in (edge_model, corner_model):
            if model is not None and model.n_features != stencil.n_features:
                raise ConfigError(f"model expects {model.n_features} features, stencil gives "
                                  f"{stencil.n_features}")
        self.edge_model = edge_model
        self.corner_model = corner_model if corner_model is not None else edge_model
        self.clamp = clamp
        self.clamp_count = 0
        self.max_prediction = 0.0
        zero = np.zeros((self.ring.n_locations, stencil.per_level))
        self.current, self.previous = zero, zero.copy()

    def begin_step(self, grid: FieldGrid, step: int) -> None:
        self.previous = self.current
        self.current = self.ring.level_features(self.ring.flat(grid))
        if step == 0:
            self.previous = np.zeros_like(self.current)

    def features(self) -> np.ndarray:
        return np.hstack([self.current, self.previous])

    def predict(self, X: np.ndarray, step: int) -> np.ndarray:
        out = np.empty(X.shape[0])
        c = self.ring.corner
        out[~c] = self.edge_model.predict(X[~c])
        if c.any():
            out[c] = self.corner_model.predict(X[c])
        return out

    def apply(self, grid: FieldGrid, step: int) -> None:
        pred = self.predict(self.features(), step)
        bad = ~np.isfinite(pred)
        if bad.any():
            loc = int(np.flatnonzero(bad)[0])
            raise InstabilityError(f"non-finite prediction at ring location {loc} "
                                   f"({self.ring.edge[loc]})", step)
        pred, hits = stability_guard(pred, self.clamp)
        self.clamp_count += hits
        self.max_prediction = max(self.max_prediction, float(np.abs(pred).max(initial=0.0)))
        self.ring.write_ring(grid, pred)

    def diagnostics(self) -> str:
        return f"ddf clamp_count={self.clamp_count} max_prediction={self.max_prediction:.6e}"


class ReplayBoundary(DdfBoundary):
    """Perfect-oracle predictor: looks up recorded teacher targets by (step, location).

    Exercises the same feature, sign and write plumbing as the forest path.
    """

    name = "replay"

    def __init__(self, spec: GridSpec, samples: SampleSet, stencil: StencilSpec = StencilSpec()):
        super().__init__(spec, None, None, stencil, clamp=np.inf)
        if samples.steps is None or samples.locations is None:
            raise ConfigError("replay needs per-row step and location tags")
        self.table = np.full((int(samples.steps.max()) + 1, self.ring.n_locations), np.nan)
        self.table[samples.steps, samples.locations] = samples.targets
        self.table[0] = np.where(np.isnan(self.table[0]), 0.0, self.table[0])

    def predict(self, X: np.ndarray, step: int) -> np.ndarray:
        if step >= self.table.shape[0]:
            raise ConfigError(f"no recorded targets for step {step}")
        return self.table[step].copy()

    def apply(self, grid: FieldGrid, step: int) -> None:
        pred = self.predict(self.features(), step)
        if np.isnan(pred).any():
            raise ConfigError(f"recorded targets incomplete at step {step}")
        self.ring.write_ring(grid, pred)
