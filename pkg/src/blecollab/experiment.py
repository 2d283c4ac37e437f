"""End-to-end runs over measurement logs: training-set assembly, evaluation, simulated studies."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import InsufficientAnchors, NumericalFailure
from .evaluation import ErrorSample, MetricsReport, compute_metrics
from .geometry import DeviceProfile, Point2D, euclidean_distance
from .lateration import Phase, PositionEstimate
from .mlp import MlpArchitecture, MlpModel, TrainingHistory, TrainingSet, architecture, train_scg
from .pipeline import PipelineConfig, SharedState, feature_rows, run_round, standalone_position, summarize_window
from .preprocessing import MeasurementLog
from .simulator import (
    TEST_CONFIGS,
    TRAIN_CONFIGS,
    Scenario,
    generate_log,
    office_obstacles,
    office_scenario,
    registered_profiles,
)

REGISTRATION_HEADER = ("device", "rss_at_1m")


def window_ends(log: MeasurementLog, tw: float) -> list[float]:
    """End times tw, 2 tw, ... covering the whole log."""
    if len(log) == 0:
        return []
    t_max = float(log.t.max())
    n = int(math.floor(t_max / tw)) + 1
    return [tw * (k + 1) for k in range(n)]


def registration_path(log_path: str | Path) -> Path:
    p = Path(log_path)
    return p.with_name(p.stem + ".registration.csv")


def write_registration(profiles: Mapping[str, DeviceProfile], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REGISTRATION_HEADER)
        for dev_id in sorted(profiles):
            w.writerow((dev_id, repr(float(profiles[dev_id].rss_at_1m))))


def read_registration(path: str | Path) -> dict[str, float]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or any(c not in reader.fieldnames for c in REGISTRATION_HEADER):
            raise ValueError(f"{path}: expected header {','.join(REGISTRATION_HEADER)}")
        out = {}
        for lineno, row in enumerate(reader, start=2):
            try:
                out[row["device"]] = float(row["rss_at_1m"])
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return out


def profiles_for(scenario: Scenario, registration: Mapping[str, float]) -> dict[str, DeviceProfile]:
    """Scenario devices carrying their registered 1 m value; unregistered devices are left out."""
    return {d.id: replace(d, rss_at_1m=registration[d.id]) for d in scenario.devices if d.id in registration}


def _lat1_round(log, t_end, scenario, profiles, cfg) -> dict[str, PositionEstimate]:
    est = {}
    for dev_id, prof in profiles.items():
        try:
            est[dev_id] = standalone_position(log.window(dev_id, t_end, cfg.tw), scenario.anchors, prof, cfg)
        except (InsufficientAnchors, NumericalFailure):
            pass
    return est


def build_training_set(
    log: MeasurementLog,
    scenario: Scenario,
    profiles: Mapping[str, DeviceProfile],
    cfg: PipelineConfig | None = None,
) -> TrainingSet:
    """Pair aggregated device-to-device RSS (plus both Lat1 estimates) with the true distance.

    One row per (window, receiver, transmitter) where both devices obtained a
    stand-alone estimate in that window.
    """
    cfg = cfg or PipelineConfig()
    truth = scenario.truth()
    feats, targets = [], []
    for t_end in window_ends(log, cfg.tw):
        lat1 = _lat1_round(log, t_end, scenario, profiles, cfg)
        for rx_id, rx_est in lat1.items():
            peers = {k: v.position for k, v in lat1.items() if k != rx_id}
            agg = summarize_window(log.window(rx_id, t_end, cfg.tw), peers.keys())
            ids, X = feature_rows({a.tx: a.mean_rss for a in agg}, peers, rx_est.position, profiles[rx_id].rss_at_1m)
            feats.append(X)
            targets.extend(euclidean_distance(truth[rx_id], truth[tx]) for tx in ids)
    X = np.vstack(feats) if feats else np.zeros((0, 6))
    return TrainingSet(X, np.asarray(targets, dtype=float))


def evaluate_log(
    log: MeasurementLog,
    scenario: Scenario,
    profiles: Mapping[str, DeviceProfile],
    model: MlpModel | None,
    cfg: PipelineConfig | None = None,
    config_label: str = "",
) -> tuple[list[ErrorSample], dict[str, str]]:
    """Run every window through both phases; returns error samples and per-device failures."""
    cfg = cfg or PipelineConfig()
    truth = scenario.truth()
    samples: list[ErrorSample] = []
    failures: dict[str, str] = {}
    devices = [d.id for d in scenario.devices]
    for d in devices:
        if d not in profiles:
            failures[d] = "missing registration value"
    shared = SharedState()
    for k, t_end in enumerate(window_ends(log, cfg.tw)):
        windows = {d: log.window(d, t_end, cfg.tw) for d in devices if d in profiles}
        rounds = run_round(windows, scenario.anchors, profiles, model, cfg, shared)
        for dev_id, res in rounds.items():
            g = truth[dev_id]
            if res.lat1 is None:
                continue
            samples.append(ErrorSample(dev_id, k, Phase.LAT1.value, res.lat1.error_to(g), config_label))
            if res.lat2 is not None:
                samples.append(ErrorSample(dev_id, k, Phase.LAT2.value, res.lat2.error_to(g), config_label))
            samples.append(ErrorSample(dev_id, k, Phase.FUSED.value, res.fused.error_to(g), config_label))
    return samples, failures


def metrics_by_phase(samples: Sequence[ErrorSample], include_p70: bool = False) -> dict[str, MetricsReport]:
    out = {}
    for phase in (Phase.LAT1.value, Phase.LAT2.value, Phase.FUSED.value):
        errs = [s.error for s in samples if s.phase == phase]
        if errs:
            out[phase] = compute_metrics(errs, include_p70)
    return out


# -- simulated study ----------------------------------------------------------


# close to typical BLE receiver sensitivity, so the filter only drops links
# that would not decode anyway
STUDY_THRESHOLD_DBM = -105.0


@dataclass(frozen=True)
class StudyConfig:
    """Simulated office study: train on some configurations, test on others.

    The anchor-selection threshold is lowered from the library default
    because at -83 dBm the two weakest handsets rarely see three anchors in
    the simulated office, which leaves too few neighbors to collaborate.
    Results between -93 and -98 dBm are erratic; see the README.
    """

    train_configs: tuple[int, ...] = TRAIN_CONFIGS
    test_configs: tuple[int, ...] = TEST_CONFIGS
    shadowing_sigma: float = 4.0
    obstacle_attenuation_db: float = 6.0
    duration: float = 600.0
    arch_id: str = "MLP1"
    epochs: int = 50
    train_fraction: float = 0.7
    pipeline: PipelineConfig = field(default_factory=lambda: PipelineConfig(threshold=STUDY_THRESHOLD_DBM))


@dataclass
class StudyResult:
    seed: int
    samples: list[ErrorSample]
    history: TrainingHistory
    model: MlpModel

    def mean_error(self, phase: str) -> float:
        return float(np.mean([s.error for s in self.samples if s.phase == phase]))


def simulate_config(config_id: int, study: StudyConfig, seed: int) -> tuple[Scenario, MeasurementLog, dict[str, DeviceProfile]]:
    scenario = office_scenario(
        config_id,
        shadowing_sigma=study.shadowing_sigma,
        obstacles=office_obstacles(study.obstacle_attenuation_db),
        duration=study.duration,
        seed=seed * 1000 + config_id,
    )
    return scenario, generate_log(scenario), registered_profiles(scenario)


def run_study(seed: int, study: StudyConfig | None = None) -> StudyResult:
    study = study or StudyConfig()
    cfg = study.pipeline
    data = None
    for c in study.train_configs:
        scen, log, prof = simulate_config(c, study, seed)
        part = build_training_set(log, scen, prof, cfg)
        data = part if data is None else data.concat(part)
    train, val = data.split(study.train_fraction, seed)
    model, history = train_scg(architecture(study.arch_id, study.epochs), train, val, seed=seed)
    samples: list[ErrorSample] = []
    for c in study.test_configs:
        scen, log, prof = simulate_config(c, study, seed)
        s, _ = evaluate_log(log, scen, prof, model, cfg, f"config{c}")
        samples.extend(s)
    return StudyResult(seed, samples, history, model)
