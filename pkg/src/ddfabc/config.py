"""Plain-text run configuration: ``section.key = value`` lines, strict keys."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .dataset import StencilSpec
from .errors import ConfigError
from .pml import PmlParams
from .scene import SimConfig
from .train import TrainConfig


def _opt_float(text: str):
    return None if text.lower() in ("", "none", "auto") else float(text)


def _opt_int(text: str):
    return None if text.lower() in ("", "none", "auto") else int(text)


def _text(text: str) -> str:
    return text


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key -> (parser, default as text)
SCHEMA: dict[str, tuple] = {
    "grid.sheet_width": (int, "100"),
    "grid.gap": (int, "3"),
    "grid.dx": (float, "1e-3"),
    "grid.dy": (float, "1e-3"),
    "grid.dt": (_opt_float, "auto"),
    "grid.n_steps": (int, "1500"),
    "source.tw": (float, "2.653e-11"),
    "source.t0": (_opt_float, "auto"),
    "source.amplitude": (float, "1.0"),
    "source.offset": (int, "2"),
    "source.i": (_opt_int, "auto"),
    "source.j": (_opt_int, "auto"),
    "probe.offset": (int, "2"),
    "probe.i": (_opt_int, "auto"),
    "probe.j": (_opt_int, "auto"),
    "pml.thickness": (int, "10"),
    "pml.m": (float, "4"),
    "pml.sigma_max_ratio": (float, "1.0"),
    "pml.kappa_max": (float, "1.0"),
    "pml.alpha": (float, "0.0"),
    "reference.margin": (int, "10"),
    "reference.memory_cap_mb": (float, "2048"),
    "ddf.model": (_text, ""),
    "ddf.corner_model": (_text, ""),
    "ddf.clamp": (_opt_float, "auto"),
    "dataset.scenarios": (int, "6"),
    "dataset.seed": (int, "3"),
    "dataset.stride": (int, "1"),
    "dataset.jitter": (_bool, "true"),
    "dataset.inward_depth": (int, "3"),
    "dataset.tangential_halfwidth": (int, "1"),
    "dataset.components": (_text, "ex,ey,hz"),
    "dataset.active_threshold": (float, "1e-3"),
    "dataset.quiet_ratio": (float, "1.0"),
    "train.loss": (_text, "mse"),
    "train.optimizer": (_text, "qhadam"),
    "train.lr": (float, "0.05"),
    "train.batch_size": (int, "256"),
    "train.epochs": (int, "40"),
    "train.seed": (int, "0"),
    "train.patience": (int, "10"),
    "train.huber_delta": (float, "1.0"),
    "train.l1": (float, "0.0"),
    "train.loss_composition": (_text, "ensemble"),
    "train.n_trees": (int, "16"),
    "train.depth": (int, "5"),
    "train.beta1": (_opt_float, "auto"),
    "train.beta2": (_opt_float, "auto"),
    "train.nu1": (float, "0.7"),
    "train.nu2": (float, "1.0"),
    "train.max_rows": (int, "40000"),
    "compare.schemes": (_text, "pec,cpml,ddf"),
}


def parse_lines(text: str, source: str = "<config>") -> dict[str, str]:
    """Raw ``key -> value`` text; ``#`` starts a comment; duplicate keys are errors."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


@dataclass
class RunConfig:
    """Fully resolved configuration; ``values`` holds every schema key."""

    values: dict[str, object] = field(default_factory=dict)

    @classmethod
    def from_mapping(cls, raw: dict[str, str], source: str = "<config>") -> "RunConfig":
        unknown = sorted(set(raw) - set(SCHEMA))
        if unknown:
            raise ConfigError(f"{source}: unknown key(s): {', '.join(unknown)}")
        values = {}
        for key, (parse, default) in SCHEMA.items():
            text = raw.get(key, default)
            try:
                values[key] = parse(text)
            except ValueError as exc:
                raise ConfigError(f"{source}: bad value for {key}: {text!r} ({exc})") from None
        cfg = cls(values)
        cfg.validate()
        return cfg

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        return cls.from_mapping(parse_lines(text, source), source)

    @classmethod
    def load(cls, path) -> "RunConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        return cls.from_text(p.read_text(), str(p))

    @classmethod
    def default(cls) -> "RunConfig":
        return cls.from_mapping({})

    def __getitem__(self, key: str):
        return self.values[key]

    def override(self, pairs: list[str]) -> "RunConfig":
        """Apply ``key=value`` command-line overrides."""
        raw = {k: _format(v) for k, v in self.values.items()}
        for pair in pairs:
            raw.update(parse_lines(pair, "<override>"))
        return RunConfig.from_mapping(raw, "<override>")

    def to_text(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.values.items())

    def validate(self) -> None:
        try:
            self.sim()
            self.pml()
            self.stencil()
            self.train_config()
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
        if self["reference.margin"] < 0:
            raise ConfigError("reference.margin must be >= 0")
        if self["dataset.scenarios"] < 1 or self["dataset.stride"] < 1:
            raise ConfigError("dataset.scenarios and dataset.stride must be >= 1")
        bad = [s for s in self.schemes() if s not in ("pec", "cpml", "ddf")]
        if bad:
            raise ConfigError(f"unknown scheme(s) in compare.schemes: {bad}")

    # -- builders ----------------------------------------------------------

    def sim(self) -> SimConfig:
        v = self.values
        src = probe = None
        if v["source.i"] is not None or v["source.j"] is not None:
            if v["source.i"] is None or v["source.j"] is None:
                raise ConfigError("source.i and source.j must be given together")
            src = (v["source.i"], v["source.j"])
        if v["probe.i"] is not None or v["probe.j"] is not None:
            if v["probe.i"] is None or v["probe.j"] is None:
                raise ConfigError("probe.i and probe.j must be given together")
            probe = (v["probe.i"], v["probe.j"])
        return SimConfig(sheet_width=v["grid.sheet_width"], gap=v["grid.gap"], dx=v["grid.dx"],
                         dy=v["grid.dy"], dt=v["grid.dt"], n_steps=v["grid.n_steps"],
                         t_w=v["source.tw"], t0=v["source.t0"], amplitude=v["source.amplitude"],
                         source_offset=v["source.offset"], probe_offset=v["probe.offset"],
                         source_pos=src, probe_pos=probe)

    def pml(self) -> PmlParams:
        v = self.values
        return PmlParams(thickness=v["pml.thickness"], m=v["pml.m"],
                         sigma_max_ratio=v["pml.sigma_max_ratio"], kappa_max=v["pml.kappa_max"],
                         alpha=v["pml.alpha"])

    def stencil(self) -> StencilSpec:
        comps = tuple(c.strip().lower() for c in self["dataset.components"].split(",") if c.strip())
        return StencilSpec(self["dataset.inward_depth"], self["dataset.tangential_halfwidth"], comps)

    def train_config(self) -> TrainConfig:
        kw = {k.split(".", 1)[1]: v for k, v in self.values.items() if k.startswith("train.")}
        return TrainConfig(**kw)

    def schemes(self) -> list[str]:
        return [s.strip() for s in self["compare.schemes"].split(",") if s.strip()]


def _format(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)
