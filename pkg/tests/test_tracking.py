import numpy as np
import pytest

from data.scenarios import sample_scenarios
from sim.planner import plan_reference
from sim.tracking import CUTOFF, DT, TRACE_EVERY, simulate_tracking, trace_to_frame
from sim.vehicle import (
    DEGRADATION_PRESETS,
    DegradationState,
    ManeuverTemplate,
    ManeuverType,
    VehicleParams,
    effective_axle_limits,
)
from utils.errors import ManeuverInfeasibleError


def _run(seg, template, deg=None, record_trace=False):
    ref = plan_reference(seg, template)
    deg = deg if deg is not None else DegradationState.nominal()
    return simulate_tracking(seg, ref, deg, VehicleParams(), record_trace=record_trace)


def test_nominal_lane_follow_on_straight(straight_segment):
    out = _run(straight_segment, ManeuverTemplate(ManeuverType.LANE_FOLLOW, 0, 50.0, 3.0))
    assert out.eps_lat_max < 0.05
    assert out.completed and not out.clipped


def test_no_steering_authority_clips(straight_segment):
    deg = DegradationState(delta=(0.0, 0.0, 0.0, 0.0))
    out = _run(straight_segment, ManeuverTemplate(ManeuverType.LANE_CHANGE, 1, 40.0, 3.0), deg)
    assert out.clipped and not out.completed
    assert out.eps_lat_max == CUTOFF


def test_simulation_is_deterministic(curved_segment):
    template = ManeuverTemplate(ManeuverType.LANE_CHANGE, -1, 45.0, 4.0)
    a = _run(curved_segment, template, DEGRADATION_PRESETS["D1"], record_trace=True)
    b = _run(curved_segment, template, DEGRADATION_PRESETS["D1"], record_trace=True)
    assert a.eps_lat_max == b.eps_lat_max
    assert a.trace == b.trace


def test_labels_stay_in_range(curved_segment):
    for name, deg in DEGRADATION_PRESETS.items():
        for a in (2.5, 3.5, 4.5):
            out = _run(curved_segment, ManeuverTemplate(ManeuverType.LANE_CHANGE, 1, 40.0, a), deg)
            assert 0.0 <= out.eps_lat_max <= CUTOFF
            if out.clipped:
                assert out.eps_lat_max == CUTOFF


def test_uniform_degradation_never_helps():
    slightly = DegradationState.from_vector([0.9] * 12)
    # one degradation per maneuver: the nominal draw
    scenarios = sample_scenarios(10, 15, 1, seed=5)
    checked = 0
    for sc in scenarios:
        try:
            nominal = _run(sc.segment, sc.maneuver)
        except ManeuverInfeasibleError:
            continue
        degraded = _run(sc.segment, sc.maneuver, slightly)
        assert degraded.eps_lat_max >= nominal.eps_lat_max - 1e-9, sc.run_id
        checked += 1
    assert checked >= 100


def test_degraded_label_never_undercuts_the_nominal_run(straight_segment):
    # a frozen rear axle and slow front rate can both damp overshoot
    template = ManeuverTemplate(ManeuverType.LANE_CHANGE, 1, 45.0, 4.5)
    nominal = _run(straight_segment, template).eps_lat_max
    for vector in ([1.0] * 4 + [0.3] * 4 + [1.0] * 4, [1.0] * 6 + [0.0, 0.0] + [1.0] * 4):
        out = _run(straight_segment, template, DegradationState.from_vector(vector))
        assert out.eps_lat_max >= nominal - 1e-9


def test_trace_respects_actuator_limits(curved_segment):
    deg = DEGRADATION_PRESETS["D2"]
    lim = effective_axle_limits(deg, VehicleParams())
    out = _run(curved_segment, ManeuverTemplate(ManeuverType.LANE_CHANGE, 1, 50.0, 4.5), deg, record_trace=True)
    frame = trace_to_frame(out.trace)
    assert list(frame.columns) == ["t", "s", "e_d", "delta_f", "delta_r", "v"]
    assert np.all(np.diff(frame["t"]) > 0)
    assert np.all(np.abs(frame["delta_f"]) <= lim.front_angle + 1e-12)
    assert np.all(np.abs(frame["delta_r"]) <= lim.rear_angle + 1e-12)
    # consecutive records are at most TRACE_EVERY steps apart
    steps = np.round(np.diff(frame["t"]) / DT)
    assert np.all(steps <= TRACE_EVERY)
    assert np.all(np.abs(np.diff(frame["delta_f"])) <= lim.front_rate * DT * steps + 1e-12)
    assert np.all(np.abs(np.diff(frame["delta_r"])) <= lim.rear_rate * DT * steps + 1e-12)


def test_trace_is_optional(straight_segment):
    out = _run(straight_segment, ManeuverTemplate(ManeuverType.LANE_FOLLOW, 0, 40.0, 3.0))
    assert out.trace is None


@pytest.mark.parametrize("v_init", [30.0, 50.0])
def test_mrm_comes_to_rest(straight_segment, v_init):
    ref = plan_reference(straight_segment, ManeuverTemplate.mrm(), v_init_kmh=v_init)
    out = simulate_tracking(straight_segment, ref, DegradationState.nominal(), VehicleParams(), record_trace=True)
    assert out.completed
    assert out.eps_lat_max < 0.05
    assert trace_to_frame(out.trace)["v"].iloc[-1] < 0.5
