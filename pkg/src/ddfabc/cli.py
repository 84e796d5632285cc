"""Command-line driver: ``ddfabc <command> [--config FILE] [--set key=value ...]``.

Exit status: 0 success, 2 configuration error, 3 numerical instability.
"""

from __future__ import annotations

import argparse
import logging
import shlex
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig
from .dataset import SampleSet, curate, extract_sweep, scenario_sweep, split
from .errors import ConfigError, InstabilityError, TrainingDiverged
from .fdtd import read_probe_csv, write_probe_csv
from .harness import (RunManifest, Scheme, compare, reference_pad, reference_run,
                      reflection_error, run_scheme)
from .learned import clamp_from_meta, file_hash, save_model
from .train import train

log = logging.getLogger("ddfabc")

EXIT_OK, EXIT_CONFIG, EXIT_UNSTABLE = 0, 2, 3


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig.default()
    return cfg.override(args.set) if args.set else cfg


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(args, cfg: RunConfig, out: Path, inputs=()) -> None:
    argv = [args.command, "--out", "{out}", *args.extra_argv]
    m = RunManifest(shlex.join(argv), cfg.to_text(), RunManifest.hash_files(inputs))
    m.write(out / f"{args.command}.manifest")


def _reference(args, cfg: RunConfig) -> np.ndarray:
    sim = cfg.sim()
    if getattr(args, "reference", None):
        _, ey = read_probe_csv(args.reference)
        if ey.size != sim.n_steps:
            raise ConfigError(f"reference CSV has {ey.size} steps, config wants {sim.n_steps}")
        return ey
    cap = int(cfg["reference.memory_cap_mb"] * 2**20)
    return reference_run(sim, cfg["reference.margin"], cap).trace()


def _scheme(kind: str, cfg: RunConfig, args=None) -> Scheme:
    model = (getattr(args, "model", None) or cfg["ddf.model"]) if kind == "ddf" else ""
    corner = (getattr(args, "corner_model", None) or cfg["ddf.corner_model"]) if kind == "ddf" else ""
    return Scheme(kind, cfg.pml(), model, corner, cfg["ddf.clamp"])


def cmd_reference(args, cfg: RunConfig) -> None:
    sim, out = cfg.sim(), _out(args)
    t = time.perf_counter()
    ey = _reference(args, cfg)
    write_probe_csv(out / "reference_probe.csv", ey, sim.dt)
    _manifest(args, cfg, out)
    print(f"reference: pad={reference_pad(sim, cfg['reference.margin'])} cells/side, "
          f"probe={sim.probe}, steps={sim.n_steps}, {time.perf_counter() - t:.1f}s")


def cmd_teacher(args, cfg: RunConfig) -> None:
    sim, out = cfg.sim(), _out(args)
    rec, _ = run_scheme(sim, _scheme("cpml", cfg))
    write_probe_csv(out / "teacher_probe.csv", rec.trace(), sim.dt)
    _manifest(args, cfg, out)
    print(f"teacher: cpml thickness={cfg['pml.thickness']} probe={sim.probe} steps={sim.n_steps}")


def cmd_dataset(args, cfg: RunConfig) -> None:
    out = _out(args)
    scenarios = scenario_sweep(cfg.sim(), cfg["dataset.scenarios"], cfg["dataset.seed"],
                               cfg["dataset.jitter"])
    data = extract_sweep(scenarios, cfg.pml(), cfg.stencil(), cfg["dataset.stride"],
                         cfg["dataset.seed"])
    data = curate(data, cfg["dataset.active_threshold"], cfg["dataset.quiet_ratio"],
                  cfg["dataset.seed"])
    for kind in ("edge", "corner"):
        part = data.kind(kind)
        if part.n_rows == 0:
            print(f"dataset: no {kind} rows")
            continue
        part.save(out / f"{kind}.ds")
        if args.csv:
            part.to_csv(out / f"{kind}.csv")
        print(f"dataset: {kind}.ds rows={part.n_rows} M={part.n_features}")
    _manifest(args, cfg, out)


def _train_one(path: Path, cfg: RunConfig, out: Path, name: str) -> Path:
    data = SampleSet.load(path)
    tcfg = cfg.train_config()
    tr, va, te = split(data, seed=tcfg.seed)
    forest, hist = train(None, tr, va, tcfg)
    pred = forest.predict(te.features)
    test_mse = float(np.mean(((pred - te.targets) / forest.y_std) ** 2))
    meta = {k: v for k, v in data.metadata.items() if k.startswith("stencil.")}
    meta.update({"max_abs_field": data.metadata.get("max_abs_field", "0.0"),
                 "clamp": repr(clamp_from_meta(data.metadata)),
                 "rows": data.metadata.get("rows", "all"), "dataset": str(path),
                 "dataset_sha256": file_hash(path), "best_epoch": str(hist["best_epoch"]),
                 "test_mse": repr(test_mse), "tool_version": __version__})
    meta.update({k: repr(v) if isinstance(v, float) else str(v)
                 for k, v in cfg.values.items() if k.startswith("train.")})
    model = out / f"{name}.ddf"
    save_model(forest, model, meta)
    print(f"train: {model} rows={tr.n_rows} best_epoch={hist['best_epoch']} "
          f"valid_mse={min(hist['valid_mse'], default=hist['initial_valid_loss']):.4e} "
          f"test_mse={test_mse:.4e}")
    return model


def cmd_train(args, cfg: RunConfig) -> None:
    out = _out(args)
    inputs = [Path(args.edge)]
    _train_one(Path(args.edge), cfg, out, "edge")
    if args.corner:
        inputs.append(Path(args.corner))
        _train_one(Path(args.corner), cfg, out, "corner")
    _manifest(args, cfg, out, inputs)


def cmd_eval(args, cfg: RunConfig) -> None:
    sim, out = cfg.sim(), _out(args)
    scheme = _scheme(args.scheme, cfg, args)
    ref = _reference(args, cfg)
    rec, handler = run_scheme(sim, scheme)
    rep = reflection_error(rec.trace(), ref, scheme.label, "reference", sim.probe)
    write_probe_csv(out / f"{scheme.label}_probe.csv", rec.trace(), sim.dt)
    _manifest(args, cfg, out, [*scheme.model_files(), *([args.reference] if args.reference else [])])
    print(f"probe (physical-region Ey index) = {sim.probe}")
    print(rep.summary())
    if hasattr(handler, "diagnostics"):
        print(handler.diagnostics())


def cmd_compare(args, cfg: RunConfig) -> None:
    sim, out = cfg.sim(), _out(args)
    kinds = args.schemes.split(",") if args.schemes else cfg.schemes()
    schemes = [_scheme(k.strip(), cfg, args) for k in kinds if k.strip()]
    ref = _reference(args, cfg) if args.reference else None
    result = compare(sim, schemes, ref, cfg["reference.margin"],
                     int(cfg["reference.memory_cap_mb"] * 2**20))
    write_probe_csv(out / "reference_probe.csv", result.reference, sim.dt)
    for label, trace in result.traces.items():
        write_probe_csv(out / f"{label}_probe.csv", trace, sim.dt)
    result.write_csv(out / "comparison.csv")
    result.write_svg(out / "comparison.svg")
    files = [f for s in schemes for f in s.model_files()]
    _manifest(args, cfg, out, files + ([args.reference] if args.reference else []))
    print(result.summary())


def cmd_replay(args, _cfg) -> int:
    m = RunManifest.read(args.manifest)
    m.verify()
    out = _out(args)
    cfg_path = out / "replay.cfg"
    cfg_path.write_text(m.config_text)
    argv = [a.replace("{out}", str(out)) for a in shlex.split(m.command)]
    return main([*argv, "--config", str(cfg_path)])


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ddfabc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"ddfabc {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, reference=False):
        sp.add_argument("--config", help="key = value configuration file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")
        sp.add_argument("--out", default="runs", help="output directory (default: runs)")
        if reference:
            sp.add_argument("--reference", help="reuse a reference probe CSV instead of rerunning")
        return sp

    common(sub.add_parser("reference", help="oversized-grid reference run"))
    common(sub.add_parser("teacher", help="CPML-truncated run and probe CSV"))
    sp = common(sub.add_parser("dataset", help="extract teacher samples"))
    sp.add_argument("--csv", action="store_true", help="also write CSV exports")
    sp = common(sub.add_parser("train", help="train forest models on extracted samples"))
    sp.add_argument("--edge", required=True, help="edge-row dataset file")
    sp.add_argument("--corner", help="corner-row dataset file")
    sp = common(sub.add_parser("eval", help="one scheme against the reference"), reference=True)
    sp.add_argument("--scheme", choices=("pec", "cpml", "ddf"), required=True)
    sp.add_argument("--model")
    sp.add_argument("--corner-model")
    sp = common(sub.add_parser("compare", help="compare schemes, write CSV and SVG"), reference=True)
    sp.add_argument("--schemes", help="comma list, overrides compare.schemes")
    sp.add_argument("--model")
    sp.add_argument("--corner-model")
    sp = sub.add_parser("replay", help="re-run a command from its manifest")
    sp.add_argument("manifest")
    sp.add_argument("--out", default="replay")
    return p


_HANDLERS = {"reference": cmd_reference, "teacher": cmd_teacher, "dataset": cmd_dataset,
             "train": cmd_train, "eval": cmd_eval, "compare": cmd_compare}


def _extra_argv(args) -> list[str]:
    """Command-specific arguments worth replaying (everything but config/out/set)."""
    out = []
    for name in ("edge", "corner", "scheme", "model", "corner_model", "schemes", "reference"):
        value = getattr(args, name, None)
        if value:
            out += [f"--{name.replace('_', '-')}", str(value)]
    if getattr(args, "csv", False):
        out.append("--csv")
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            return cmd_replay(args, None)
        cfg = _config(args)
        args.extra_argv = _extra_argv(args)
        _HANDLERS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InstabilityError as exc:
        print(f"numerical instability at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
