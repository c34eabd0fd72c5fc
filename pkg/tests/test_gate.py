import math

import numpy as np
import pytest

from data.scenarios import FEATURE_NAMES
from monitor.gate import (
    CandidateResult,
    GateDecision,
    Verdict,
    classify,
    clearance,
    evaluate_candidates,
    measure_candidates,
    trace_chosen,
)
from sim.vehicle import DEGRADATION_PRESETS, ManeuverTemplate, ManeuverType
from stats.conformal import PredictionInterval
from utils.errors import CalibrationError, DomainError, VehicleWiderThanLaneError
from tests.helpers import make_segment

ACCELS = (2.5, 3.0, 3.5, 4.0, 4.5)
A_INDEX = FEATURE_NAMES.index("a_lat_max")


class TablePredictor(object):
    """Upper bounds looked up by the candidate's lateral acceleration."""

    feature_names = FEATURE_NAMES

    def __init__(self, upper, failing=()):
        self.upper = dict(upper)
        self.failing = set(failing)
        self.seen = []

    def interval(self, x):
        self.seen.append(np.asarray(x))
        a = float(x[A_INDEX])
        if a in self.failing:
            raise CalibrationError("group 1 was not seen during calibration")
        hi = self.upper[a]
        return PredictionInterval(0.0, hi, 0, math.isinf(hi))


def _decide(eps_hat, width=3.47, accels=ACCELS, **kwargs):
    predictor = TablePredictor(zip(accels, eps_hat), **kwargs)
    seg = make_segment(w=width)
    return evaluate_candidates(seg, 50.0, accels, DEGRADATION_PRESETS["D0"], predictor)


def _verdicts(decision):
    return [c.verdict for c in decision.candidates]


@pytest.mark.parametrize("w_min,expected", [(3.47, 0.755), (3.31, 0.675)])
def test_clearance(w_min, expected):
    assert clearance(w_min, 1.96) == pytest.approx(expected)


def test_vehicle_wider_than_lane():
    with pytest.raises(VehicleWiderThanLaneError):
        clearance(1.96, 1.96)


def test_classify_rules():
    assert classify(math.inf, 0.755) is Verdict.REJECT_UNBOUNDED
    assert classify(0.675, 0.755) is Verdict.REJECT_CUTOFF
    assert classify(0.70, 0.60) is Verdict.REJECT_CUTOFF
    assert classify(0.61, 0.60) is Verdict.REJECT_CLEARANCE
    assert classify(0.60, 0.60) is Verdict.ADMIT


def test_nominal_row_picks_most_dynamic():
    decision = _decide([0.23, 0.25, 0.28, 0.30, 0.32])
    assert _verdicts(decision) == [Verdict.ADMIT] * 5
    assert decision.chosen.a_lat_max == 4.5 and not decision.is_mrm
    assert decision.clearance == pytest.approx(0.755)


def test_mild_degradation_row():
    decision = _decide([0.22, 0.24, 0.26, 0.29, 0.31])
    assert decision.chosen.a_lat_max == 4.5


def test_severe_degradation_row_hits_cutoff():
    decision = _decide([0.45, 0.487, 0.49, 0.56, 0.87])
    assert _verdicts(decision) == [Verdict.ADMIT] * 4 + [Verdict.REJECT_CUTOFF]
    assert decision.chosen.a_lat_max == 4.0
    assert decision.chosen.maneuver is ManeuverType.LANE_CHANGE


def test_everything_rejected_falls_back_to_mrm():
    decision = _decide([0.9] * 5)
    assert all(v is Verdict.REJECT_CUTOFF for v in _verdicts(decision))
    assert decision.is_mrm
    assert decision.chosen.maneuver is ManeuverType.MRM
    assert decision.chosen.direction == 0 and decision.chosen.target_speed == 0.0
    assert not decision.to_frame()["chosen"].any()


def test_narrow_lane_rejects_by_clearance():
    decision = _decide([0.45, 0.60, 0.66, 0.70, 0.87], width=3.2)
    # clearance 0.62
    assert _verdicts(decision) == [Verdict.ADMIT, Verdict.ADMIT, Verdict.REJECT_CLEARANCE,
                                   Verdict.REJECT_CUTOFF, Verdict.REJECT_CUTOFF]
    assert decision.chosen.a_lat_max == 3.0


def test_raising_a_bound_never_admits(rng):
    for _ in range(200):
        eps = rng.uniform(0.0, 1.0, size=5)
        before = _verdicts(_decide(eps))
        j = int(rng.integers(0, 5))
        raised = eps.copy()
        raised[j] += rng.uniform(0.0, 0.5)
        after = _verdicts(_decide(raised))
        if before[j] is not Verdict.ADMIT:
            assert after[j] is not Verdict.ADMIT


def test_candidate_order_does_not_matter():
    eps = [0.45, 0.487, 0.49, 0.56, 0.87]
    a = _decide(eps)
    b = _decide(eps[::-1], accels=ACCELS[::-1])
    assert a.chosen == b.chosen
    assert [c.maneuver.a_lat_max for c in b.candidates] == list(ACCELS)


def test_unbounded_and_failing_candidates():
    decision = _decide([0.3, math.inf, 0.3, 0.3, 0.3], failing={4.5})
    verdicts = _verdicts(decision)
    assert verdicts[1] is Verdict.REJECT_UNBOUNDED
    assert verdicts[4] is Verdict.REJECT_PREDICTOR_ERROR
    assert "not seen" in decision.candidates[4].reason
    assert all(c.eps_hat >= 0.0 for c in decision.candidates)
    assert math.isinf(decision.candidates[4].eps_hat)
    assert math.isinf(decision.to_frame()["eps_hat"].iloc[4])
    assert decision.chosen.a_lat_max == 4.0


def test_features_follow_the_candidate():
    predictor = TablePredictor(zip(ACCELS, [0.3] * 5))
    seg = make_segment(w=3.47)
    evaluate_candidates(seg, 42.0, ACCELS, DEGRADATION_PRESETS["D2"], predictor, direction=-1)
    x = predictor.seen[0]
    assert len(x) == 19
    assert x[FEATURE_NAMES.index("v_q")] == 42.0
    assert x[FEATURE_NAMES.index("r_q")] == -1
    assert x[FEATURE_NAMES.index("d_fl")] == 0.32
    assert [s[A_INDEX] for s in predictor.seen] == list(ACCELS)


def test_empty_candidate_set():
    with pytest.raises(DomainError):
        _decide([], accels=())


def test_decision_frame_and_measurement():
    seg = make_segment(w=3.47)
    decision = _decide([0.23, 0.25, 0.28, 0.30, 0.32])
    frame = decision.to_frame()
    assert list(frame.columns) == ["a_max", "eps_hat", "verdict", "chosen", "reason"]
    assert len(frame) == 5 and frame["chosen"].sum() == 1
    assert frame.loc[frame["chosen"], "a_max"].item() == 4.5

    measured = measure_candidates(seg, decision, DEGRADATION_PRESETS["D0"])
    assert isinstance(measured, GateDecision)
    frame = measured.to_frame(measured=True)
    assert "eps_sim" in frame.columns
    assert frame["eps_sim"].between(0.0, 0.675).all()


def test_trace_of_chosen_maneuver():
    seg = make_segment(w=3.47)
    trace = trace_chosen(seg, _decide([0.23, 0.25, 0.28, 0.30, 0.32]), DEGRADATION_PRESETS["D0"], 50.0)
    assert {"t", "e_d", "delta_f", "delta_r"} <= set(trace.columns)
    assert trace["e_d"].abs().max() < 0.755

    mrm = _decide([0.9] * 5)
    trace = trace_chosen(seg, mrm, DEGRADATION_PRESETS["D0"], 50.0)
    assert trace["v"].iloc[-1] < 0.5
    assert trace_chosen(make_segment(length=20.0, w=3.47), mrm, DEGRADATION_PRESETS["D0"], 50.0) is None


@pytest.mark.parametrize("eps_hat", [-0.1, math.nan])
def test_candidate_bound_must_be_non_negative(eps_hat):
    template = ManeuverTemplate(ManeuverType.LANE_CHANGE, 1, 50.0, 2.5)
    with pytest.raises(DomainError):
        CandidateResult(template, eps_hat, Verdict.ADMIT)
