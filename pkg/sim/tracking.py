# Copyright (c) 2024-present, capguard contributors.
# All rights reserved.
#
# This source code is licensed under the license found in the
# LICENSE file in the root directory of this source tree.
#####################################################################################
# Closed-loop tracking of a reference trajectory with a linear single-track model
# (states beta, yaw rate, e_psi, e_d, delta_f, delta_r) under degraded actuator
# limits. Explicit Euler at 10 ms; the label is the clipped max |e_d|.
####################################################################################


import math
from collections import OrderedDict, namedtuple
from dataclasses import dataclass

import pandas as pd

from sim.vehicle import DegradationState, ManeuverType, effective_axle_limits
from utils.errors import SimulationFaultError


__all__ = ["SimOutcome", "TraceRecord", "simulate_tracking", "trace_to_frame", "CUTOFF", "DT"]

SIM_VERSION = "capguard-sim-2"

DT = 0.01  # s
CUTOFF = 0.675  # m, lateral clearance for a 3.31 m lane and a 1.96 m vehicle
TRACE_EVERY = 2  # 50 Hz trace
NOMINAL_CACHE_SIZE = 1024

# feedback gains; one controller for every degradation
K_D = 0.35  # rad/m
K_PSI = 1.2  # rad/rad
REAR_GAIN = 0.3
K_SPEED = 1.0  # 1/s

ROLL_DECEL = 0.1  # m/s^2
AIR_COEFF = 4e-4  # 1/m
KINEMATIC_SPEED = 3.0  # m/s, below this the dynamic model is replaced by a kinematic one
MIN_SPEED = 0.1  # m/s, guard against division by zero in reference heading terms

TraceRecord = namedtuple("TraceRecord", ["t", "s", "e_d", "delta_f", "delta_r", "v"])

# nominal-actuator peaks per (segment, maneuver, params, reference); per process
_NOMINAL_PEAKS = OrderedDict()


@dataclass
class SimOutcome:
    eps_lat_max: float
    clipped: bool
    completed: bool
    trace: list = None


def _clamp(x, lim):
    return lim if x > lim else (-lim if x < -lim else x)


def _steady_state(params, v, delta_f, delta_r):
    # beta and yaw rate of the linear single-track model in stationary cornering
    L = params.wheelbase
    lf, lr = params.cg_to_front, params.cg_to_rear
    r = v * (delta_f - delta_r) / (L + params.understeer_gradient * v * v)
    beta = delta_r + lr * r / v - lf * params.mass * v * r / (L * params.cornering_rear)
    return beta, r


def _kinematic(params, v, delta_f, delta_r):
    L = params.wheelbase
    beta = (params.cg_to_rear * delta_f + params.cg_to_front * delta_r) / L
    r = v * (delta_f - delta_r) / L
    return beta, r


def _nominal_peak(seg, ref, params):
    key = (seg, ref.maneuver, params, float(ref.v[0]), len(ref.t))
    peak = _NOMINAL_PEAKS.get(key)
    if peak is None:
        peak = _track(seg, ref, effective_axle_limits(DegradationState.nominal(), params), params)[0]
        if len(_NOMINAL_PEAKS) >= NOMINAL_CACHE_SIZE:
            _NOMINAL_PEAKS.popitem(last=False)
        _NOMINAL_PEAKS[key] = peak
    return peak


def simulate_tracking(seg, ref, deg, params, record_trace=False):
    """Track ``ref`` on ``seg`` with degraded actuators; deterministic for identical inputs.

    The label is floored at the peak deviation of the same reference tracked with
    nominal actuators: a tighter saturation box can damp the controller's own
    overshoot, and degradation is never credited with that.
    """
    peak, clipped, completed, trace = _track(seg, ref, effective_axle_limits(deg, params), params)
    if not deg.is_nominal() and not clipped:
        base = _nominal_peak(seg, ref, params)
        if base > peak:
            peak = base
            clipped = base >= CUTOFF
    return SimOutcome(
        eps_lat_max=CUTOFF if clipped else min(peak, CUTOFF),
        clipped=clipped,
        completed=completed,
        trace=trace if record_trace else None,
    )


def _track(seg, ref, lim, params):
    """Closed-loop run; returns (peak |e_d|, clipped, completed, trace)."""
    ra = ref.resample(DT)
    v_ref_a, a_ref_a = ra["v"], ra["a"]
    d_dot_a, d_ddot_a = ra["d_dot"], ra["d_ddot"]
    n_steps = len(v_ref_a) - 1
    stops = ref.maneuver.maneuver is ManeuverType.MRM

    L = params.wheelbase
    lf, lr = params.cg_to_front, params.cg_to_rear
    m, Iz = params.mass, params.yaw_inertia
    Cf, Cr = params.cornering_front, params.cornering_rear
    Kus = params.understeer_gradient
    rw = params.wheel_radius

    v = float(v_ref_a[0])
    s = 0.0
    k = seg.curvature_at(0.0)
    vv = max(v, MIN_SPEED)
    delta_f = _clamp((L + Kus * v * v) * (k + float(d_ddot_a[0]) / (vv * vv)), lim.front_angle)
    delta_r = 0.0
    if v >= KINEMATIC_SPEED:
        beta, r = _steady_state(params, v, delta_f, delta_r)
    else:
        beta, r = _kinematic(params, v, delta_f, delta_r)
    e_psi = 0.0
    e_d = 0.0

    max_dev = 0.0
    trace = [TraceRecord(0.0, s, e_d, delta_f, delta_r, v)]
    clipped = False
    completed = True

    for i in range(n_steps):
        t = i * DT
        v_ref = float(v_ref_a[i])
        d_dot_ref = float(d_dot_a[i])
        if v_ref > MIN_SPEED:
            theta_ref = d_dot_ref / v_ref
            theta_dot_ref = float(d_ddot_a[i]) / v_ref
        else:
            theta_ref = theta_dot_ref = 0.0
        k = seg.curvature_at(s)
        vv = max(v, MIN_SPEED)

        # steering: curvature feedforward plus state feedback; e_d, e_psi are
        # vehicle minus reference so the feedback enters negatively
        kappa_ref = k + theta_dot_ref / vv
        cmd_f = (L + Kus * v * v) * kappa_ref - K_D * e_d - K_PSI * e_psi
        cmd_r = -REAR_GAIN * (K_D * e_d + K_PSI * e_psi)

        # speed: proportional controller on top of acceleration feedforward
        resist = (ROLL_DECEL if v > 0.0 else 0.0) + AIR_COEFF * v * v
        torque = m * (float(a_ref_a[i]) + K_SPEED * (v_ref - v) + resist) * rw
        torque_f = _clamp(0.5 * torque, lim.front_torque)
        torque_r = _clamp(torque - torque_f, lim.rear_torque)
        v_dot = (torque_f + torque_r) / (rw * m) - resist

        if v >= KINEMATIC_SPEED:
            alpha_f = delta_f - beta - lf * r / v
            alpha_r = delta_r - beta + lr * r / v
            force_f = Cf * alpha_f
            force_r = Cr * alpha_r
            beta_dot = (force_f + force_r) / (m * v) - r
            r_dot = (lf * force_f - lr * force_r) / Iz
        else:
            beta_dot = r_dot = 0.0

        e_d_dot = v * (theta_ref + e_psi + beta) - d_dot_ref
        e_psi_dot = r - v * k - theta_dot_ref

        e_d += DT * e_d_dot
        e_psi += DT * e_psi_dot
        s += DT * v
        v = max(0.0, v + DT * v_dot)
        beta += DT * beta_dot
        r += DT * r_dot

        # rate- and angle-saturated steering actuators
        cmd_f = _clamp(cmd_f, lim.front_angle)
        cmd_r = _clamp(cmd_r, lim.rear_angle)
        delta_f = _clamp(delta_f + _clamp(cmd_f - delta_f, lim.front_rate * DT), lim.front_angle)
        delta_r = _clamp(delta_r + _clamp(cmd_r - delta_r, lim.rear_rate * DT), lim.rear_angle)

        if v < KINEMATIC_SPEED:
            beta, r = _kinematic(params, v, delta_f, delta_r)

        if not all(map(math.isfinite, (e_d, e_psi, beta, r, v, delta_f, delta_r))):
            raise SimulationFaultError(
                f"non-finite state at t={t + DT:.2f} s on segment {seg.id}", trace
            )

        dev = abs(e_d)
        if dev > max_dev:
            max_dev = dev
        if (i + 1) % TRACE_EVERY == 0 or dev >= CUTOFF:
            trace.append(TraceRecord(t + DT, s, e_d, delta_f, delta_r, v))
        if dev >= CUTOFF:
            clipped = True
            completed = False
            break
        if s >= seg.length or (stops and v == 0.0):
            break

    return max_dev, clipped, completed, trace


def trace_to_frame(trace):
    return pd.DataFrame(list(trace), columns=list(TraceRecord._fields))
