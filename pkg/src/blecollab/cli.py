"""Command-line front end.

Exit codes: 0 success, 2 usage error, 3 input/format error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import __version__
from .errors import (
    InsufficientAnchors,
    ModelFormatError,
    ModelIntegrityError,
    NumericalFailure,
    ScenarioError,
    TrainingDataError,
)
from .evaluation import (
    comparison_table,
    ecdf,
    ecdf_csv,
    errors_csv,
    metrics_csv,
    metrics_table,
    read_metrics_csv,
)
from .experiment import (
    build_training_set,
    evaluate_log,
    metrics_by_phase,
    profiles_for,
    read_registration,
    registration_path,
    write_registration,
)
from .lateration import Phase
from .mlp import ARCHITECTURES, architecture, atomic_write_text, evaluate, load_model, save_model, train_scg
from .pipeline import PipelineConfig
from .preprocessing import DEFAULT_THRESHOLD_DBM, DEFAULT_WINDOW_S, read_log_csv, write_log_csv
from .simulator import generate_log, load_scenario, office_obstacles, office_scenario, registered_profiles, scenario_to_dict

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_NUMERIC = 4

MIN_TRAINING_ROWS = 10


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _atomic_write_log(log, path: Path) -> int:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        n = write_log_csv(log, tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    return n


def _pipeline_config(args) -> PipelineConfig:
    return PipelineConfig(tw=args.tw, threshold=args.threshold)


def _paired(logs: Sequence[str], scenarios: Sequence[str]) -> list[tuple[Path, Path]]:
    if len(scenarios) == 1:
        scenarios = list(scenarios) * len(logs)
    if len(scenarios) != len(logs):
        raise CliError(f"{len(logs)} logs but {len(scenarios)} scenarios; give one scenario or one per log", EXIT_USAGE)
    return [(Path(lg), Path(sc)) for lg, sc in zip(logs, scenarios)]


def _load_inputs(log_path: Path, scen_path: Path):
    scenario = load_scenario(scen_path)
    try:
        log = read_log_csv(log_path)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    reg_path = registration_path(log_path)
    registration = read_registration(reg_path) if reg_path.exists() else {}
    return scenario, log, profiles_for(scenario, registration)


def cmd_office_scenario(args) -> int:
    obstacles = office_obstacles(args.attenuation) if args.obstacles == "office" else ()
    s = office_scenario(args.config, args.sigma, obstacles, args.duration, args.seed)
    atomic_write_text(Path(args.out), json.dumps(scenario_to_dict(s), indent=2) + "\n")
    print(f"wrote {s.name} scenario to {args.out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
    out = Path(args.out)
    n = _atomic_write_log(generate_log(scenario), out)
    reg = registration_path(out)
    tmp = reg.with_name(f".{reg.name}.tmp")
    write_registration(registered_profiles(scenario), tmp)
    os.replace(tmp, reg)
    print(f"wrote {n} samples to {out} (registration values in {reg})")
    return EXIT_OK


def cmd_train(args) -> int:
    if args.epochs < 1:
        raise CliError("--epochs must be >= 1", EXIT_USAGE)
    try:
        arch = architecture(args.arch, args.epochs)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    cfg = _pipeline_config(args)
    data = None
    for log_path, scen_path in _paired(args.logs, args.scenario):
        scenario, log, profiles = _load_inputs(log_path, scen_path)
        missing = sorted({d.id for d in scenario.devices} - set(profiles))
        if missing:
            print(f"warning: {log_path}: no registration value for {', '.join(missing)}", file=sys.stderr)
        part = build_training_set(log, scenario, profiles, cfg)
        data = part if data is None else data.concat(part)
    if data is None or len(data) < MIN_TRAINING_ROWS:
        raise CliError(f"insufficient training samples ({0 if data is None else len(data)}, need {MIN_TRAINING_ROWS})")
    train, val = data.split(args.train_fraction, args.seed)
    model, history = train_scg(arch, train, val, seed=args.seed)
    out = Path(args.out)
    save_model(model, out)
    curve = Path(args.curve) if args.curve else out.with_name(out.stem + ".curve.csv")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("epoch", "train_mse", "val_mse"))
    for epoch, tr, va in history.rows():
        w.writerow((epoch, repr(tr), "" if va is None else repr(va)))
    atomic_write_text(curve, buf.getvalue())
    msg = f"trained {args.arch.upper()} on {len(train)} rows ({len(val)} validation), best epoch {history.best_epoch}"
    if len(val):
        ev = evaluate(model, val)
        msg += f"; validation RMSE {ev.rmse:.3f} m, R {'n/a' if ev.r is None else f'{ev.r:.3f}'}"
    print(msg)
    print(f"model -> {out}, curve -> {curve}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _pipeline_config(args)
    model = load_model(args.model) if args.model else None
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    all_samples = []
    labels: list[str] = []
    for log_path, scen_path in _paired(args.logs, args.scenario):
        scenario, log, profiles = _load_inputs(log_path, scen_path)
        label = scenario.name if scenario.name not in labels else log_path.stem
        labels.append(label)
        samples, failures = evaluate_log(log, scenario, profiles, model, cfg, label)
        for dev, why in sorted(failures.items()):
            print(f"error: {label}/{dev}: {why}", file=sys.stderr)
        all_samples.extend(samples)
        per = metrics_by_phase(samples, args.p70)
        if per:
            atomic_write_text(outdir / f"metrics_{label}.csv", metrics_csv(per, args.p70))
            print(f"[{label}]")
            print(metrics_table(per), end="")
    if not all_samples:
        raise CliError("no device could be positioned in any window", EXIT_NUMERIC)
    atomic_write_text(outdir / "errors.csv", errors_csv(all_samples))
    pooled = metrics_by_phase(all_samples, args.p70)
    atomic_write_text(outdir / "metrics.csv", metrics_csv(pooled, args.p70))
    for phase in pooled:
        curve = ecdf([s.error for s in all_samples if s.phase == phase])
        text = ecdf_csv({phase: curve})
        # per-phase files carry only error_m,probability
        lines = ["error_m,probability"] + [",".join(l.split(",")[1:]) for l in text.splitlines()[1:]]
        atomic_write_text(outdir / f"ecdf_{phase}.csv", "\n".join(lines) + "\n")
    atomic_write_text(outdir / "ecdf.csv", ecdf_csv({p: ecdf([s.error for s in all_samples if s.phase == p]) for p in pooled}))
    print("[pooled]")
    print(metrics_table(pooled), end="")
    if Phase.LAT1.value in pooled and Phase.FUSED.value in pooled:
        print(comparison_table(pooled[Phase.LAT1.value], pooled[Phase.FUSED.value], "Lat1", "Fused"), end="")
    return EXIT_OK


def _pick(reports: dict, phase: str | None, path: str):
    if phase is not None:
        if phase not in reports:
            raise CliError(f"{path}: no row for phase {phase!r} (have {', '.join(reports)})")
        return {phase: reports[phase]}
    return reports


def cmd_compare(args) -> int:
    try:
        base = read_metrics_csv(args.baseline)
        prop = read_metrics_csv(args.proposed)
    except ValueError as exc:
        raise CliError(f"schema error: {exc}") from None
    base = _pick(base, args.baseline_phase, args.baseline)
    prop = _pick(prop, args.proposed_phase, args.proposed)
    if len(base) == 1 and len(prop) == 1:
        pairs = [(next(iter(base)), next(iter(prop)))]
    else:
        common = [p for p in base if p in prop]
        if not common:
            raise CliError("no phase appears in both files; use --baseline-phase/--proposed-phase")
        pairs = [(p, p) for p in common]
    for bp, pp in pairs:
        print(comparison_table(base[bp], prop[pp], f"{bp}", f"{pp}"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="blecollab", description="Collaborative BLE-RSS lateration toolkit")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def pipeline_flags(sp):
        sp.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD_DBM, help="strong-anchor RSS threshold (dBm)")
        sp.add_argument("--tw", type=float, default=DEFAULT_WINDOW_S, help="window length (s)")

    sp = sub.add_parser("office-scenario", help="write one of the seven office configurations as a scenario file")
    sp.add_argument("--config", type=int, required=True, choices=range(1, 8))
    sp.add_argument("--sigma", type=float, default=0.0, help="shadowing std (dB)")
    sp.add_argument("--obstacles", choices=("none", "office"), default="none")
    sp.add_argument("--attenuation", type=float, default=6.0, help="per-obstacle loss (dB)")
    sp.add_argument("--duration", type=float, default=60.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_office_scenario)

    sp = sub.add_parser("simulate", help="generate a measurement log from a scenario file")
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("train", help="train the distance MLP on simulated logs")
    sp.add_argument("--logs", nargs="+", required=True)
    sp.add_argument("--scenario", nargs="+", required=True, help="one scenario, or one per log")
    sp.add_argument("--arch", default="MLP1", help=f"one of {', '.join(ARCHITECTURES)}")
    sp.add_argument("--epochs", type=int, default=50)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--train-fraction", type=float, default=0.7)
    sp.add_argument("--out", required=True)
    sp.add_argument("--curve", default=None, help="epoch curve CSV (default: <out stem>.curve.csv)")
    pipeline_flags(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="run stand-alone, collaborative and fused positioning over logs")
    sp.add_argument("--logs", nargs="+", required=True)
    sp.add_argument("--scenario", nargs="+", required=True, help="one scenario, or one per log")
    sp.add_argument("--model", default=None, help="MLP model file; without it only Lat1 runs")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--p70", action="store_true", help="also report the 70th percentile")
    pipeline_flags(sp)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("compare", help="side-by-side metrics with signed percentage differences")
    sp.add_argument("--baseline", required=True)
    sp.add_argument("--proposed", required=True)
    sp.add_argument("--baseline-phase", default=None)
    sp.add_argument("--proposed-phase", default=None)
    sp.set_defaults(func=cmd_compare)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ScenarioError, ModelFormatError, ModelIntegrityError, TrainingDataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalFailure, InsufficientAnchors) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
