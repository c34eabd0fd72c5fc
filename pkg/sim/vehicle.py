# Copyright (c) 2024-present, capguard contributors.
# All rights reserved.
#
# This source code is licensed under the license found in the
# LICENSE file in the root directory of this source tree.


import enum
import math
from dataclasses import dataclass, asdict

from utils.errors import DomainError


__all__ = [
    "ManeuverType",
    "ManeuverTemplate",
    "DegradationState",
    "VehicleParams",
    "AxleLimits",
    "WHEELS",
    "DEGRADATION_COLUMNS",
    "DEGRADATION_PRESETS",
    "degradation_factor",
    "effective_axle_limits",
]

WHEELS = ("fl", "fr", "rl", "rr")
DEGRADATION_COLUMNS = (
    tuple(f"d_{w}" for w in WHEELS)
    + tuple(f"dr_{w}" for w in WHEELS)
    + tuple(f"t_{w}" for w in WHEELS)
)


class ManeuverType(enum.Enum):
    LANE_FOLLOW = "LaneFollow"
    LANE_CHANGE = "LaneChange"
    MRM = "MRM"


@dataclass(frozen=True)
class ManeuverTemplate:
    maneuver: ManeuverType
    direction: int  # r_q, +1 = left
    target_speed: float  # v_q [km/h]
    a_lat_max: float  # [m/s^2]

    def __post_init__(self):
        if self.maneuver in (ManeuverType.LANE_FOLLOW, ManeuverType.MRM):
            if self.direction != 0:
                raise DomainError(f"{self.maneuver.value} requires direction 0")
        elif self.direction not in (-1, 1):
            raise DomainError("LaneChange requires direction -1 or 1")
        if not 0.0 <= self.target_speed <= 70.0:
            raise DomainError(f"target speed {self.target_speed} km/h outside [0, 70]")
        if not 1.0 <= self.a_lat_max <= 6.0:
            raise DomainError(f"a_lat_max {self.a_lat_max} outside [1, 6] m/s^2")
        if self.maneuver is ManeuverType.MRM and self.target_speed != 0.0:
            raise DomainError("MRM has target speed 0")

    @classmethod
    def mrm(cls, a_lat_max=2.5):
        return cls(ManeuverType.MRM, 0, 0.0, a_lat_max)

    def to_dict(self):
        return {
            "maneuver": self.maneuver.value,
            "direction": self.direction,
            "target_speed": self.target_speed,
            "a_lat_max": self.a_lat_max,
        }


@dataclass(frozen=True)
class DegradationState:
    """Remaining-performance factors per wheel; 1 is nominal, 0 is a failed actuator."""

    delta: tuple = (1.0, 1.0, 1.0, 1.0)
    delta_rate: tuple = (1.0, 1.0, 1.0, 1.0)
    torque: tuple = (1.0, 1.0, 1.0, 1.0)

    def __post_init__(self):
        for name in ("delta", "delta_rate", "torque"):
            values = tuple(float(v) for v in getattr(self, name))
            if len(values) != 4:
                raise DomainError(f"{name} needs one factor per wheel {WHEELS}")
            if any(not 0.0 <= v <= 1.0 for v in values):
                raise DomainError(f"{name} factors must lie in [0, 1], got {values}")
            object.__setattr__(self, name, values)

    @classmethod
    def nominal(cls):
        return cls()

    @classmethod
    def from_vector(cls, values):
        values = [float(v) for v in values]
        if len(values) != 12:
            raise DomainError(f"expected 12 degradation factors, got {len(values)}")
        return cls(tuple(values[0:4]), tuple(values[4:8]), tuple(values[8:12]))

    def to_vector(self):
        return self.delta + self.delta_rate + self.torque

    def is_nominal(self):
        return all(v == 1.0 for v in self.to_vector())


# application-scenario degradations; torque factors nominal
DEGRADATION_PRESETS = {
    "D0": DegradationState(),
    "D1": DegradationState(
        delta=(0.54, 0.44, 0.70, 0.36), delta_rate=(0.87, 0.75, 0.50, 0.55)
    ),
    "D2": DegradationState(
        delta=(0.32, 0.15, 0.59, 0.08), delta_rate=(0.12, 0.02, 0.47, 0.25)
    ),
}


@dataclass(frozen=True)
class VehicleParams:
    wheelbase: float = 2.8  # m
    cg_to_front: float = 1.2  # m
    mass: float = 1600.0  # kg
    yaw_inertia: float = 2500.0  # kg m^2
    cornering_front: float = 1.2e5  # N/rad
    cornering_rear: float = 1.2e5  # N/rad
    delta_max: float = math.radians(30.0)  # rad
    delta_rate_max: float = math.radians(40.0)  # rad/s
    torque_max: float = 500.0  # N m per wheel
    wheel_radius: float = 0.32  # m
    width: float = 1.96  # m

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value > 0:
                raise DomainError(f"vehicle parameter {name} must be strictly positive")
        if self.cg_to_front >= self.wheelbase:
            raise DomainError("cg_to_front must be shorter than the wheelbase")

    @property
    def cg_to_rear(self):
        return self.wheelbase - self.cg_to_front

    @property
    def understeer_gradient(self):
        # rad per m/s^2
        lf, lr = self.cg_to_front, self.cg_to_rear
        return self.mass / self.wheelbase * (lr / self.cornering_front - lf / self.cornering_rear)


@dataclass(frozen=True)
class AxleLimits:
    front_angle: float
    rear_angle: float
    front_rate: float
    rear_rate: float
    front_torque: float
    rear_torque: float


def degradation_factor(nominal_limit, degraded_range):
    """Remaining fraction of a nominal actuator limit given the degraded value range [lo, hi]."""
    lo, hi = degraded_range
    if not nominal_limit > 0:
        raise DomainError(f"nominal limit must be positive, got {nominal_limit}")
    if lo > hi:
        raise DomainError(f"degraded range [{lo}, {hi}] is empty")
    return min(1.0, max(abs(lo), abs(hi)) / nominal_limit)


def effective_axle_limits(deg, params):
    # a stuck wheel constrains the whole axle; drive torque adds up
    d_fl, d_fr, d_rl, d_rr = deg.delta
    r_fl, r_fr, r_rl, r_rr = deg.delta_rate
    t_fl, t_fr, t_rl, t_rr = deg.torque
    return AxleLimits(
        front_angle=params.delta_max * min(d_fl, d_fr),
        rear_angle=params.delta_max * min(d_rl, d_rr),
        front_rate=params.delta_rate_max * min(r_fl, r_fr),
        rear_rate=params.delta_rate_max * min(r_rl, r_rr),
        front_torque=params.torque_max * (t_fl + t_fr),
        rear_torque=params.torque_max * (t_rl + t_rr),
    )
