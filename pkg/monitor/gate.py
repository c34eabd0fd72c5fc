# Copyright (c) 2024-present, capguard contributors.
# All rights reserved.
#
# This source code is licensed under the license found in the
# LICENSE file in the root directory of this source tree.
#####################################################################################
# Maneuver feasibility gate: each candidate lateral-acceleration limit is checked
# against the lateral clearance and the label cutoff using the calibrated upper
# bound; the most dynamic admissible candidate wins, otherwise MRM.
####################################################################################


import enum
import logging
import math
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from data.roads import segment_features
from data.scenarios import Scenario, extract_features
from sim.planner import plan_reference
from sim.tracking import CUTOFF, simulate_tracking, trace_to_frame
from sim.vehicle import ManeuverTemplate, ManeuverType, VehicleParams
from utils.errors import (
    CapguardError,
    DomainError,
    ManeuverInfeasibleError,
    SimulationFaultError,
    VehicleWiderThanLaneError,
)


__all__ = ["Verdict", "CandidateResult", "GateDecision", "clearance", "classify",
           "evaluate_candidates", "measure_candidates", "trace_chosen"]

logger = logging.getLogger(__name__)


class Verdict(enum.Enum):
    ADMIT = "Admit"
    REJECT_CLEARANCE = "RejectClearance"
    REJECT_CUTOFF = "RejectCutoff"
    REJECT_UNBOUNDED = "RejectUnbounded"
    REJECT_PREDICTOR_ERROR = "RejectPredictorError"


@dataclass(frozen=True)
class CandidateResult:
    maneuver: ManeuverTemplate
    eps_hat: float  # calibrated upper bound, inf when unbounded or the predictor failed
    verdict: Verdict
    reason: str = ""
    eps_measured: float = float("nan")

    def __post_init__(self):
        if not self.eps_hat >= 0.0:
            raise DomainError(f"upper bound must be non-negative, got {self.eps_hat}")


@dataclass
class GateDecision:
    candidates: list  # CandidateResult, ascending a_lat_max
    chosen: ManeuverTemplate
    clearance: float

    @property
    def is_mrm(self):
        return self.chosen.maneuver is ManeuverType.MRM

    def to_frame(self, measured=False):
        rows = []
        for c in self.candidates:
            row = {
                "a_max": c.maneuver.a_lat_max,
                "eps_hat": c.eps_hat,
                "verdict": c.verdict.value,
                "chosen": (not self.is_mrm) and c.maneuver == self.chosen,
            }
            if measured:
                row["eps_sim"] = c.eps_measured
            row["reason"] = c.reason
            rows.append(row)
        return pd.DataFrame(rows)


def clearance(w_min, w_veh):
    """Lateral deviation budget per side, 0.5 * (w_min - w_veh)."""
    if not w_min > w_veh:
        raise VehicleWiderThanLaneError(f"vehicle width {w_veh} m does not fit lane width {w_min} m")
    return 0.5 * (w_min - w_veh)


def classify(eps_hat, clear, cutoff=CUTOFF):
    if math.isinf(eps_hat):
        return Verdict.REJECT_UNBOUNDED
    if eps_hat >= cutoff:
        # clipped labels make predictions at the cutoff uninformative
        return Verdict.REJECT_CUTOFF
    if eps_hat > clear:
        return Verdict.REJECT_CLEARANCE
    return Verdict.ADMIT


def evaluate_candidates(seg, v_q, accels, deg, predictor, maneuver=ManeuverType.LANE_CHANGE,
                        direction=1, vehicle=None, cutoff=CUTOFF):
    """Gate decision over the candidate lateral accelerations ``accels``.

    ``predictor`` exposes ``interval(x)`` returning a PredictionInterval and a
    ``feature_names`` sequence; see stats.conformal.CalibratedPredictor.
    """
    accels = sorted(float(a) for a in accels)
    if not accels:
        raise DomainError("candidate acceleration set is empty")
    vehicle = vehicle if vehicle is not None else VehicleParams()
    clear = clearance(segment_features(seg).w_min, vehicle.width)
    if maneuver is ManeuverType.LANE_FOLLOW:
        direction = 0

    results = []
    for a in accels:
        template = ManeuverTemplate(maneuver, direction, float(v_q), a)
        features, _ = extract_features(Scenario(-1, seg, template, deg))
        x = np.array([features[name] for name in predictor.feature_names], dtype=np.float64)
        try:
            interval = predictor.interval(x)
        except (CapguardError, ValueError, RuntimeError) as exc:
            logger.warning(f"prediction failed for a_lat_max={a}: {exc}")
            results.append(CandidateResult(template, math.inf, Verdict.REJECT_PREDICTOR_ERROR, str(exc)))
            continue
        eps_hat = math.inf if interval.unbounded else max(0.0, float(interval.hi))
        results.append(CandidateResult(template, eps_hat, classify(eps_hat, clear, cutoff)))

    admitted = [c for c in results if c.verdict is Verdict.ADMIT]
    if admitted:
        chosen = max(admitted, key=lambda c: c.maneuver.a_lat_max).maneuver
    else:
        chosen = ManeuverTemplate.mrm(a_lat_max=accels[0])
        logger.info("no candidate admitted; falling back to MRM")
    return GateDecision(results, chosen, clear)


def measure_candidates(seg, decision, deg, params=None):
    """Attach the simulated maximum deviation to every candidate of a decision."""
    params = params if params is not None else VehicleParams()
    measured = []
    for c in decision.candidates:
        try:
            ref = plan_reference(seg, c.maneuver)
            eps = simulate_tracking(seg, ref, deg, params).eps_lat_max
        except (ManeuverInfeasibleError, SimulationFaultError) as exc:
            logger.warning(f"could not simulate a_lat_max={c.maneuver.a_lat_max}: {exc}")
            eps = float("nan")
        measured.append(replace(c, eps_measured=eps))
    return GateDecision(measured, decision.chosen, decision.clearance)


def trace_chosen(seg, decision, deg, v_q, params=None):
    """Recorded tracking trace of the chosen maneuver, or of the MRM stop from v_q; None if it cannot run."""
    params = params if params is not None else VehicleParams()
    try:
        ref = plan_reference(seg, decision.chosen, v_init_kmh=v_q if decision.is_mrm else None)
        result = simulate_tracking(seg, ref, deg, params, record_trace=True)
    except (ManeuverInfeasibleError, SimulationFaultError) as exc:
        logger.warning(f"no trace for the chosen maneuver: {exc}")
        return None
    return trace_to_frame(result.trace)
