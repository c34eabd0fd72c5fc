# Copyright (c) 2024-present, capguard contributors.
# All rights reserved.
#
# This source code is licensed under the license found in the
# LICENSE file in the root directory of this source tree.
#####################################################################################
# Geometric reference planner: lane-relative lateral offset d(t) and speed v(t)
# sampled at 50 Hz. Lane changes use a minimum-jerk quintic.
####################################################################################


import math
from dataclasses import dataclass

import numpy as np

from sim.vehicle import ManeuverType
from utils.errors import DomainError, ManeuverInfeasibleError


__all__ = ["ReferenceTrajectory", "QuinticPolynomial", "plan_reference", "lane_change_duration"]

REF_DT = 0.02  # 50 Hz
MRM_DECEL = 2.0  # m/s^2
# peak |d''| of h*(10t^3 - 15t^4 + 6t^5) is (10/sqrt(3)) * h / T^2
QUINTIC_PEAK = 10.0 / math.sqrt(3.0)


class QuinticPolynomial(object):
    def __init__(self, xs, vxs, axs, xe, vxe, axe, time):
        self.a0 = xs
        self.a1 = vxs
        self.a2 = axs / 2.0

        A = np.array([[time ** 3, time ** 4, time ** 5],
                      [3 * time ** 2, 4 * time ** 3, 5 * time ** 4],
                      [6 * time, 12 * time ** 2, 20 * time ** 3]])
        b = np.array([xe - self.a0 - self.a1 * time - self.a2 * time ** 2,
                      vxe - self.a1 - 2 * self.a2 * time,
                      axe - 2 * self.a2])
        self.a3, self.a4, self.a5 = np.linalg.solve(A, b)

    def calc_point(self, t):
        return self.a0 + self.a1 * t + self.a2 * t ** 2 + self.a3 * t ** 3 + self.a4 * t ** 4 + self.a5 * t ** 5

    def calc_first_derivative(self, t):
        return self.a1 + 2 * self.a2 * t + 3 * self.a3 * t ** 2 + 4 * self.a4 * t ** 3 + 5 * self.a5 * t ** 4

    def calc_second_derivative(self, t):
        return 2 * self.a2 + 6 * self.a3 * t + 12 * self.a4 * t ** 2 + 20 * self.a5 * t ** 3


@dataclass
class ReferenceTrajectory:
    maneuver: object  # ManeuverTemplate
    t: np.ndarray  # [N]
    s: np.ndarray  # arc length along the lane [N]
    d: np.ndarray  # lateral offset from the current lane centerline [N]
    d_dot: np.ndarray
    d_ddot: np.ndarray
    v: np.ndarray  # [m/s]
    a: np.ndarray  # longitudinal acceleration [m/s^2]
    maneuver_duration: float = 0.0

    @property
    def duration(self):
        return float(self.t[-1])

    def resample(self, dt):
        """Linear resampling onto a finer grid for the tracking loop."""
        n = int(round(self.duration / dt))
        t = np.arange(n + 1) * dt
        return {
            name: np.interp(t, self.t, getattr(self, name))
            for name in ("s", "d", "d_dot", "d_ddot", "v", "a")
        }


def lane_change_duration(h, a_lat_max):
    """Duration T for which the quintic's peak lateral acceleration equals a_lat_max."""
    return math.sqrt(QUINTIC_PEAK * abs(h) / a_lat_max)


def _time_grid(duration):
    n = int(math.ceil(duration / REF_DT - 1e-9))
    return np.arange(n + 1) * REF_DT


def plan_reference(seg, m, v_init_kmh=None):
    """Reference trajectory for maneuver template m on segment seg."""
    if m.maneuver is ManeuverType.MRM:
        if v_init_kmh is None or v_init_kmh <= 0:
            raise DomainError("MRM needs the positive initial speed it decelerates from")
        v0 = v_init_kmh / 3.6
        t_stop = v0 / MRM_DECEL
        if v0 ** 2 / (2.0 * MRM_DECEL) > seg.length:
            raise ManeuverInfeasibleError(
                f"stopping distance exceeds segment {seg.id} length {seg.length:.1f} m"
            )
        t = _time_grid(t_stop)
        v = np.maximum(v0 - MRM_DECEL * t, 0.0)
        a = np.where(v > 0.0, -MRM_DECEL, 0.0)
        tc = np.minimum(t, t_stop)
        s = v0 * tc - 0.5 * MRM_DECEL * tc ** 2
        zeros = np.zeros_like(t)
        return ReferenceTrajectory(m, t, s, zeros, zeros.copy(), zeros.copy(), v, a, t_stop)

    v = m.target_speed / 3.6
    if v <= 0:
        raise ManeuverInfeasibleError(f"{m.maneuver.value} needs a positive target speed")
    traversal = seg.length / v
    t = _time_grid(traversal)
    s = v * t
    d = np.zeros_like(t)
    d_dot = np.zeros_like(t)
    d_ddot = np.zeros_like(t)
    duration = 0.0

    if m.maneuver is ManeuverType.LANE_CHANGE:
        # adjacent lane assumed to share the current lane's width and curvature
        h = m.direction * seg.width_at(0.0)
        duration = lane_change_duration(h, m.a_lat_max)
        if duration > traversal:
            raise ManeuverInfeasibleError(
                f"lane change needs {duration:.2f} s but segment {seg.id} is traversed in {traversal:.2f} s"
            )
        quintic = QuinticPolynomial(0.0, 0.0, 0.0, h, 0.0, 0.0, duration)
        active = t <= duration
        ta = t[active]
        d[active] = quintic.calc_point(ta)
        d_dot[active] = quintic.calc_first_derivative(ta)
        d_ddot[active] = quintic.calc_second_derivative(ta)
        d[~active] = h

    return ReferenceTrajectory(m, t, s, d, d_dot, d_ddot, np.full_like(t, v), np.zeros_like(t), duration)
