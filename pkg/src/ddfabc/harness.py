"""Reference runs, reflection-error reports and scheme comparison."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import StencilSpec
from .errors import ConfigError
from .fdtd import C0, BoundaryHandler, ProbeRecord, run
from .learned import DdfBoundary, clamp_from_meta, file_hash, load_model
from .pml import CpmlBoundary, PmlParams
from .scene import SimConfig

log = logging.getLogger(__name__)

FLOOR_DB = -300.0
DEFAULT_MARGIN = 10
DEFAULT_MEMORY_CAP = 2 * 1024**3


@dataclass
class ReflectionReport:
    r_db: np.ndarray
    test_id: str
    reference_id: str
    probe: tuple[int, int]
    n_steps: int

    @property
    def r_db_max(self) -> float:
        return float(self.r_db.max()) if self.r_db.size else FLOOR_DB

    def summary(self) -> str:
        return (f"{self.test_id}: r_db_max={self.r_db_max:.2f} dB vs {self.reference_id} "
                f"probe={self.probe} steps={self.n_steps}")


def reflection_error(test, reference, test_id: str = "test", reference_id: str = "reference",
                     probe: tuple[int, int] = (0, 0)) -> ReflectionReport:
    """Per-step 20*log10(|test - ref| / max|ref|), floored at -300 dB."""
    test = np.asarray(test, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if test.shape != reference.shape or test.ndim != 1:
        raise ValueError(f"series shapes differ: {test.shape} vs {reference.shape}")
    peak = np.abs(reference).max(initial=0.0)
    if not peak > 0:
        raise ValueError("reference series is identically zero")
    ratio = np.abs(test - reference) / peak
    with np.errstate(divide="ignore"):
        r_db = np.where(ratio > 0, 20.0 * np.log10(np.where(ratio > 0, ratio, 1.0)), FLOOR_DB)
    r_db = np.maximum(r_db, FLOOR_DB)
    return ReflectionReport(r_db, test_id, reference_id, tuple(probe), test.size)


def reference_pad(sim: SimConfig, margin: int = DEFAULT_MARGIN) -> int:
    """Cells added per side so that no wall echo reaches the scene in ``n_steps``."""
    if sim.n_steps == 0:
        return 0
    return math.ceil(C0 * sim.n_steps * sim.dt / (2.0 * sim.dx)) + margin


def reference_bytes(sim: SimConfig, margin: int = DEFAULT_MARGIN) -> int:
    spec = sim.grid(reference_pad(sim, margin))
    return 8 * ((spec.nx + 1) * (spec.ny + 1) * 3)


def reference_run(sim: SimConfig, margin: int = DEFAULT_MARGIN,
                  memory_cap: int = DEFAULT_MEMORY_CAP) -> ProbeRecord:
    """Same scene in an oversized PEC-walled grid; probes at the same physical spots."""
    need = reference_bytes(sim, margin)
    if need > memory_cap:
        raise ConfigError(f"reference grid needs ~{need / 2**20:.1f} MiB, cap is "
                          f"{memory_cap / 2**20:.1f} MiB")
    if sim.n_steps == 0:
        return ProbeRecord(sim.probes, sim.dt, np.zeros((len(sim.probes), 0)))
    pad = reference_pad(sim, margin)
    return run(sim.grid(pad), sim.source_spec(pad), sim.sheet(pad), None, sim.probe_positions(pad))


@dataclass
class Scheme:
    """One truncation scheme: ``pec``, ``cpml`` or ``ddf``."""

    kind: str
    pml: PmlParams = field(default_factory=PmlParams)
    model: str = ""
    corner_model: str = ""
    clamp: float | None = None
    label: str = ""

    def __post_init__(self):
        if self.kind not in ("pec", "cpml", "ddf"):
            raise ConfigError(f"unknown scheme {self.kind!r}")
        if not self.label:
            self.label = self.kind

    def model_files(self) -> list[str]:
        return [p for p in (self.model, self.corner_model) if p] if self.kind == "ddf" else []


def build_boundary(sim: SimConfig, scheme: Scheme) -> tuple[int, BoundaryHandler]:
    """Returns ``(pad, handler)`` for the scheme's grid embedding."""
    if scheme.kind == "pec":
        return 0, BoundaryHandler()
    if scheme.kind == "cpml":
        pad = scheme.pml.thickness
        return pad, CpmlBoundary(sim.grid(pad), scheme.pml)
    if not scheme.model:
        raise ConfigError("ddf scheme needs a model file (ddf.model)")
    for path in scheme.model_files():
        if not Path(path).is_file():
            raise ConfigError(f"model file not found: {path}")
    edge, meta = load_model(scheme.model)
    corner = None
    if scheme.corner_model:
        corner, _ = load_model(scheme.corner_model)
    try:
        stencil = StencilSpec.from_meta(meta) if "stencil.inward_depth" in meta else StencilSpec()
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad stencil metadata in {scheme.model}.meta: {exc}") from None
    clamp = scheme.clamp if scheme.clamp is not None else clamp_from_meta(meta)
    return 0, DdfBoundary(sim.grid(0), edge, corner, stencil, clamp)


def run_scheme(sim: SimConfig, scheme: Scheme) -> tuple[ProbeRecord, BoundaryHandler]:
    pad, handler = build_boundary(sim, scheme)
    rec = run(sim.grid(pad), sim.source_spec(pad), sim.sheet(pad), handler,
              sim.probe_positions(pad))
    return rec, handler


@dataclass
class Comparison:
    reports: dict[str, ReflectionReport]
    traces: dict[str, np.ndarray]
    reference: np.ndarray
    diagnostics: dict[str, str]
    probe: tuple[int, int]
    dt: float

    def write_csv(self, path) -> None:
        labels = list(self.reports)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "t_seconds", *[f"rdb_{l}" for l in labels]])
            for n in range(self.reference.size):
                w.writerow([n + 1, "%.16e" % ((n + 1) * self.dt),
                            *["%.6f" % self.reports[l].r_db[n] for l in labels]])

    def write_svg(self, path) -> None:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(8, 4.5))
        for label, rep in self.reports.items():
            t = np.arange(1, rep.r_db.size + 1) * self.dt * 1e9
            ax.plot(t, np.maximum(rep.r_db, -200.0), lw=1.0,
                    label=f"{label} (max {rep.r_db_max:.1f} dB)")
        ax.set_xlabel("time (ns)")
        ax.set_ylabel("reflection error (dB)")
        ax.set_title(f"probe Ey{self.probe}")
        ax.grid(alpha=0.3)
        ax.legend(loc="lower right", fontsize=8)
        fig.tight_layout()
        fig.savefig(path, format="svg")
        plt.close(fig)

    def summary(self) -> str:
        lines = [f"probe (physical-region Ey index) = {self.probe}"]
        lines += [rep.summary() for rep in self.reports.values()]
        lines += [d for d in self.diagnostics.values() if d]
        return "\n".join(lines)


def compare(sim: SimConfig, schemes: list[Scheme], reference: np.ndarray | None = None,
            margin: int = DEFAULT_MARGIN, memory_cap: int = DEFAULT_MEMORY_CAP) -> Comparison:
    """Runs every scheme plus one shared reference on the first probe."""
    for s in schemes:
        if s.kind == "ddf":
            build_boundary(sim, s)   # fail fast on missing models before the long reference run
    if reference is None:
        reference = reference_run(sim, margin, memory_cap).trace()
    ref_id = f"reference(pad={reference_pad(sim, margin)})"
    reports, traces, diags = {}, {}, {}
    for s in schemes:
        label, k = s.label, 2
        while label in reports:
            label, k = f"{s.label}{k}", k + 1
        rec, handler = run_scheme(sim, s)
        traces[label] = rec.trace()
        reports[label] = reflection_error(rec.trace(), reference, label, ref_id, sim.probe)
        diags[label] = handler.diagnostics() if hasattr(handler, "diagnostics") else ""
    return Comparison(reports, traces, reference, diags, sim.probe, sim.dt)


@dataclass
class RunManifest:
    """Resolved configuration, command and input-file hashes of one run."""

    command: str
    config_text: str
    hashes: dict[str, str] = field(default_factory=dict)
    version: str = __version__

    def to_text(self) -> str:
        lines = [f"manifest.version = {self.version}", f"manifest.command = {self.command}"]
        lines += [f"hash.{p} = {h}" for p, h in sorted(self.hashes.items())]
        return "\n".join(lines) + "\n" + self.config_text

    def write(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "RunManifest":
        command, version, hashes, rest = None, "", {}, []
        for raw in text.splitlines():
            key = raw.split("=", 1)[0].strip()
            value = raw.split("=", 1)[1].strip() if "=" in raw else ""
            if key == "manifest.command":
                command = value
            elif key == "manifest.version":
                version = value
            elif key.startswith("hash."):
                hashes[key[5:]] = value
            else:
                rest.append(raw)
        if command is None:
            raise ConfigError("manifest has no manifest.command line")
        return cls(command, "\n".join(rest) + "\n", hashes, version)

    @classmethod
    def read(cls, path) -> "RunManifest":
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"manifest not found: {p}")
        return cls.from_text(p.read_text())

    def verify(self) -> None:
        for path, digest in self.hashes.items():
            if not Path(path).is_file():
                raise ConfigError(f"manifest input missing: {path}")
            if file_hash(path) != digest:
                raise ConfigError(f"manifest input changed since the run: {path}")

    @staticmethod
    def hash_files(paths) -> dict[str, str]:
        return {str(p): file_hash(p) for p in paths if p}
