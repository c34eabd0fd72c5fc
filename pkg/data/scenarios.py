# Copyright (c) 2024-present, capguard contributors.
# All rights reserved.
#
# This source code is licensed under the license found in the
# LICENSE file in the root directory of this source tree.
#####################################################################################
# Scenario grid (segments x maneuvers x degradations), batch simulation and the
# tabular dataset with its train / calibration / test split.
####################################################################################


import io
import os
import json
import math
import logging
from dataclasses import dataclass, asdict

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

from data.roads import generate_segments, segment_features
from sim.planner import plan_reference
from sim.tracking import SIM_VERSION, simulate_tracking
from sim.vehicle import (
    DEGRADATION_COLUMNS,
    DegradationState,
    ManeuverTemplate,
    ManeuverType,
    VehicleParams,
)
from utils.errors import (
    ConfigError,
    DatasetGenerationError,
    DomainError,
    ManeuverInfeasibleError,
    SimulationFaultError,
    SplitError,
)
from utils.misc import config_hash, mix64


__all__ = [
    "FEATURE_NAMES",
    "CSV_COLUMNS",
    "Scenario",
    "ScenarioConfig",
    "ScenarioSet",
    "Sample",
    "Dataset",
    "maneuver_grid",
    "sample_scenarios",
    "extract_features",
    "generate_dataset",
    "split_dataset",
    "check_feature_names",
]

logger = logging.getLogger(__name__)

# k_abs_max completes the 19 network inputs; w_min stays metadata only
FEATURE_NAMES = (
    ("r_q", "w_max", "k_min", "k_max", "v_q", "a_lat_max")
    + DEGRADATION_COLUMNS
    + ("k_abs_max",)
)
CSV_COLUMNS = (
    ("run_id", "r_q", "w_min", "w_max", "k_min", "k_max", "v_q", "a_lat_max")
    + DEGRADATION_COLUMNS
    + ("k_abs_max", "eps_lat_max", "clipped")
)
FLOAT_FORMAT = "%.9g"
MAX_FAULT_FRACTION = 0.01

# seed-stream tags keep degradation and split draws apart from per-run draws
_DEGRADATION_TAG = 0xDE6
_SPLIT_TAG = 0x5B17


@dataclass
class ScenarioConfig:
    n_segments: int = 222
    n_maneuvers: int = 15
    n_degradations: int = 10
    speed_range_kmh: tuple = (30.0, 50.0)
    accel_range: tuple = (2.5, 4.5)

    def __post_init__(self):
        for name in ("n_segments", "n_maneuvers", "n_degradations"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be >= 1")
        for name in ("speed_range_kmh", "accel_range"):
            value = tuple(float(v) for v in getattr(self, name))
            if len(value) != 2 or value[0] > value[1]:
                raise ConfigError(name, f"expected an ordered pair, got {value}")
            setattr(self, name, value)
        if self.speed_range_kmh[0] <= 0 or self.speed_range_kmh[1] > 70.0:
            raise ConfigError("speed_range_kmh", "speeds must lie in (0, 70] km/h")
        if self.accel_range[0] < 1.0 or self.accel_range[1] > 6.0:
            raise ConfigError("accel_range", "lateral accelerations must lie in [1, 6] m/s^2")

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass(frozen=True)
class Scenario:
    run_id: int
    segment: object  # RoadSegment
    maneuver: ManeuverTemplate
    degradation: DegradationState


@dataclass
class ScenarioSet:
    scenarios: list
    seed: int
    config: ScenarioConfig

    def __len__(self):
        return len(self.scenarios)

    def __iter__(self):
        return iter(self.scenarios)


@dataclass
class Sample:
    run_id: int
    features: dict  # feature name -> value, ordered as FEATURE_NAMES
    eps_lat_max: float
    clipped: bool
    w_min: float

    @property
    def x(self):
        return np.array([self.features[name] for name in FEATURE_NAMES], dtype=np.float64)

    def to_row(self):
        row = {"run_id": self.run_id, "w_min": self.w_min}
        row.update(self.features)
        row["eps_lat_max"] = self.eps_lat_max
        row["clipped"] = int(self.clipped)
        return row


def maneuver_grid(n_maneuvers, accel_range=(2.5, 4.5)):
    """(maneuver, direction, a_lat_max) triples: lane change left/right and lane follow per acceleration level."""
    levels = np.linspace(accel_range[0], accel_range[1], math.ceil(n_maneuvers / 3))
    kinds = ((ManeuverType.LANE_CHANGE, 1), (ManeuverType.LANE_CHANGE, -1), (ManeuverType.LANE_FOLLOW, 0))
    grid = [(kind, direction, float(a)) for a in levels for kind, direction in kinds]
    return grid[:n_maneuvers]


def _degradations(seed, seg_index, n_degradations):
    rng = np.random.default_rng(mix64(mix64(seed, _DEGRADATION_TAG), seg_index))
    states = [DegradationState.nominal()]
    for _ in range(n_degradations - 1):
        states.append(DegradationState.from_vector(rng.uniform(0.0, 1.0, size=12)))
    return states


def sample_scenarios(n_segments, n_maneuvers, n_degradations, seed, segments=None, config=None):
    """Full scenario grid; run_id = (segment * n_maneuvers + maneuver) * n_degradations + degradation."""
    cfg = config if config is not None else ScenarioConfig()
    for name, value in (("n_segments", n_segments), ("n_maneuvers", n_maneuvers),
                        ("n_degradations", n_degradations)):
        if value < 1:
            raise ConfigError(name, "must be >= 1")
    if segments is None:
        segments = generate_segments(n_segments, seed)
    elif len(segments) < n_segments:
        raise DomainError(f"{n_segments} segments requested but only {len(segments)} given")

    grid = maneuver_grid(n_maneuvers, cfg.accel_range)
    scenarios = []
    for si in range(n_segments):
        seg = segments[si]
        degradations = _degradations(seed, si, n_degradations)
        for mi, (kind, direction, a_lat) in enumerate(grid):
            for di, deg in enumerate(degradations):
                run_id = (si * n_maneuvers + mi) * n_degradations + di
                rng = np.random.default_rng(mix64(seed, run_id))
                speed = float(rng.uniform(*cfg.speed_range_kmh))
                template = ManeuverTemplate(kind, direction, speed, a_lat)
                scenarios.append(Scenario(run_id, seg, template, deg))
    cfg = ScenarioConfig(
        n_segments=n_segments, n_maneuvers=n_maneuvers, n_degradations=n_degradations,
        speed_range_kmh=cfg.speed_range_kmh, accel_range=cfg.accel_range,
    )
    return ScenarioSet(scenarios, seed, cfg)


def extract_features(scenario):
    """Feature values of a scenario; a pure function of (segment, maneuver, degradation)."""
    geo = segment_features(scenario.segment)
    m = scenario.maneuver
    features = {
        "r_q": m.direction,
        "w_max": geo.w_max,
        "k_min": geo.k_min,
        "k_max": geo.k_max,
        "v_q": m.target_speed,
        "a_lat_max": m.a_lat_max,
    }
    features.update(zip(DEGRADATION_COLUMNS, scenario.degradation.to_vector()))
    features["k_abs_max"] = geo.k_abs_max
    return features, geo.w_min


def _run_one(scenario, params):
    try:
        ref = plan_reference(scenario.segment, scenario.maneuver)
        outcome = simulate_tracking(scenario.segment, ref, scenario.degradation, params)
    except ManeuverInfeasibleError as exc:
        return {"run_id": scenario.run_id, "status": "infeasible", "reason": str(exc)}
    except SimulationFaultError as exc:
        return {"run_id": scenario.run_id, "status": "fault", "reason": str(exc)}
    features, w_min = extract_features(scenario)
    sample = Sample(scenario.run_id, features, outcome.eps_lat_max, outcome.clipped, w_min)
    return {"run_id": scenario.run_id, "status": "ok", "row": sample.to_row()}


def _checkpoint_header(scenarios, params):
    segments = {sc.segment.id: sc.segment.to_dict() for sc in scenarios}
    return {
        "base_seed": scenarios.seed,
        "config_hash": config_hash(scenarios.config.to_dict()),
        "segments_hash": config_hash([segments[k] for k in sorted(segments)]),
        "params_hash": config_hash(asdict(params)),
        "sim_version": SIM_VERSION,
    }


def _write_checkpoint(path, header, records):
    with open(path, "w") as f:
        f.write(json.dumps({"header": header}) + "\n")
        for record in records:
            f.write(json.dumps(record) + "\n")


def _read_checkpoint(path, header):
    """Finished runs recorded under ``header``; a checkpoint from other inputs is discarded."""
    done = {}
    if path is None:
        return done
    if not os.path.exists(path):
        _write_checkpoint(path, header, [])
        return done
    torn = False
    with open(path, "r") as f:
        first = f.readline()
        try:
            found = json.loads(first).get("header")
        except (ValueError, AttributeError):
            found = None
        if found != header:
            logger.warning(f"checkpoint {path} was written for other inputs ({found}); starting over")
            _write_checkpoint(path, header, [])
            return done
        for line in f:
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except ValueError:
                torn = True
                break
            done[record["run_id"]] = record
    if torn:
        # a partially written last line is dropped and its run redone
        logger.warning(f"discarding torn record in checkpoint {path}")
        _write_checkpoint(path, header, done.values())
    return done


def generate_dataset(scenarios, params=None, workers=1, checkpoint=None, chunk_size=500, progress=False):
    """Simulate every scenario and collect one sample per run.

    Runs are processed in chunks; with ``checkpoint`` set, finished runs are
    appended there as JSON lines so an interrupted generation resumes where
    it stopped. Simulation faults and infeasible maneuvers are excluded and
    logged; more than 1% faults abort the generation.
    """
    params = params if params is not None else VehicleParams()
    done = _read_checkpoint(checkpoint, _checkpoint_header(scenarios, params))
    if done:
        logger.info(f"resuming from checkpoint with {len(done)} finished runs")
    todo = [sc for sc in scenarios if sc.run_id not in done]

    pbar = tqdm(total=len(todo), ascii=True, disable=not progress)
    for start in range(0, len(todo), chunk_size):
        chunk = todo[start:start + chunk_size]
        if workers == 1:
            records = [_run_one(sc, params) for sc in chunk]
        else:
            records = Parallel(n_jobs=workers)(delayed(_run_one)(sc, params) for sc in chunk)
        if checkpoint is not None:
            with open(checkpoint, "a") as f:
                for record in records:
                    f.write(json.dumps(record) + "\n")
        for record in records:
            done[record["run_id"]] = record
        pbar.update(len(chunk))
    pbar.close()

    rows, excluded = [], {}
    n_faults = 0
    for run_id in sorted(done):
        record = done[run_id]
        if record["status"] == "ok":
            rows.append(record["row"])
            continue
        excluded[str(run_id)] = f"{record['status']}: {record['reason']}"
        n_faults += record["status"] == "fault"
        logger.warning(f"run {run_id} excluded ({record['status']}): {record['reason']}")

    n_total = len(done)
    if n_total and n_faults > MAX_FAULT_FRACTION * n_total:
        raise DatasetGenerationError(
            f"{n_faults} of {n_total} runs faulted (more than {MAX_FAULT_FRACTION:.0%})"
        )
    provenance = {
        "base_seed": scenarios.seed,
        "config_hash": config_hash(scenarios.config.to_dict()),
        "scenario_config": scenarios.config.to_dict(),
        "sim_version": SIM_VERSION,
        "n_scenarios": n_total,
        "excluded": excluded,
    }
    return Dataset(pd.DataFrame(rows, columns=list(CSV_COLUMNS)), provenance)


class Dataset(object):
    """Tabular samples ordered by run_id plus the provenance of their generation."""

    def __init__(self, frame, provenance):
        if not provenance:
            raise DomainError("dataset provenance must not be empty")
        frame = frame.sort_values("run_id", kind="mergesort").reset_index(drop=True)
        if frame["run_id"].duplicated().any():
            raise DomainError("duplicate run_id in dataset")
        self.frame = frame
        self.provenance = provenance

    def __len__(self):
        return len(self.frame)

    @property
    def run_ids(self):
        return self.frame["run_id"].to_numpy()

    @property
    def y(self):
        return self.frame["eps_lat_max"].to_numpy(dtype=np.float64)

    def X(self, feature_names=FEATURE_NAMES):
        return self.frame[list(feature_names)].to_numpy(dtype=np.float64)

    def samples(self):
        for rec in self.frame.to_dict("records"):
            features = {name: rec[name] for name in FEATURE_NAMES}
            yield Sample(int(rec["run_id"]), features, float(rec["eps_lat_max"]),
                         bool(rec["clipped"]), float(rec["w_min"]))

    def subset(self, run_ids):
        mask = self.frame["run_id"].isin(set(int(r) for r in run_ids))
        return Dataset(self.frame[mask], self.provenance)

    def to_csv(self):
        buf = io.StringIO()
        self.frame.to_csv(buf, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        return buf.getvalue()

    def save(self, csv_path, provenance_path):
        with open(csv_path, "w", newline="") as f:
            f.write(self.to_csv())
        with open(provenance_path, "w") as f:
            json.dump(self.provenance, f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, csv_path, provenance_path):
        frame = pd.read_csv(csv_path)
        if tuple(frame.columns) != CSV_COLUMNS:
            raise DomainError(f"{csv_path} does not carry the expected dataset header")
        with open(provenance_path, "r") as f:
            provenance = json.load(f)
        return cls(frame, provenance)


def check_feature_names(names):
    names = tuple(names)
    allowed = set(CSV_COLUMNS) - {"run_id", "w_min", "eps_lat_max", "clipped"}
    unknown = [n for n in names if n not in allowed]
    if unknown:
        raise ConfigError("feature_names", f"not usable as network inputs: {unknown}")
    if len(set(names)) != len(names):
        raise ConfigError("feature_names", "duplicate feature")
    return names


def split_dataset(ds, n_cal, n_test, seed):
    """Disjoint calibration and test draws without replacement; the remainder is training data."""
    n = len(ds)
    if n_cal < 0 or n_test < 0:
        raise SplitError("split sizes must be non-negative")
    if n_cal + n_test >= n:
        raise SplitError(f"n_cal + n_test = {n_cal + n_test} leaves no training data out of {n}")
    perm = np.random.default_rng(mix64(seed, _SPLIT_TAG)).permutation(n)
    ids = ds.run_ids
    cal_ids = ids[perm[:n_cal]]
    test_ids = ids[perm[n_cal:n_cal + n_test]]
    train_ids = ids[perm[n_cal + n_test:]]
    return ds.subset(train_ids), ds.subset(cal_ids), ds.subset(test_ids)
