# Copyright (c) 2024-present, capguard contributors.
# All rights reserved.
#
# This source code is licensed under the license found in the
# LICENSE file in the root directory of this source tree.
#####################################################################################
# Synthetic lane segments: piecewise-linear curvature and width profiles over arc
# length, plus the summary features the predictor consumes.
####################################################################################


import json
import math
import bisect
from dataclasses import dataclass, asdict

import numpy as np
from scipy.integrate import cumulative_trapezoid

from utils.errors import ConfigError, DomainError
from utils.misc import mix64


__all__ = [
    "RoadSegment",
    "SegmentFeatures",
    "SegmentGenConfig",
    "Pose",
    "generate_segments",
    "segment_features",
    "eval_geometry",
    "sample_centerline",
    "segments_to_json",
    "segments_from_json",
]

WIDTH_BOUNDS = (2.0, 6.0)
CURVATURE_BOUND = 0.05
INTEGRATION_STEP = 0.1  # m


def _interp(knots_s, knots_v, s):
    # scalar fast path used inside the simulation loop
    if s <= knots_s[0]:
        return knots_v[0]
    if s >= knots_s[-1]:
        return knots_v[-1]
    i = bisect.bisect_right(knots_s, s) - 1
    s0, s1 = knots_s[i], knots_s[i + 1]
    return knots_v[i] + (knots_v[i + 1] - knots_v[i]) * (s - s0) / (s1 - s0)


@dataclass(frozen=True)
class RoadSegment:
    id: int
    length: float
    curvature_knots: tuple  # ((s, k), ...)
    width_knots: tuple  # ((s, w), ...)

    def __post_init__(self):
        if not self.length > 0:
            raise DomainError(f"segment {self.id}: length must be positive")
        for name, knots in (("curvature", self.curvature_knots), ("width", self.width_knots)):
            s = [p[0] for p in knots]
            if len(s) < 2 or s[0] != 0.0 or s[-1] != self.length:
                raise DomainError(f"segment {self.id}: {name} knots must span [0, length]")
            if any(b <= a for a, b in zip(s, s[1:])):
                raise DomainError(f"segment {self.id}: {name} knot positions must increase")
        if any(not WIDTH_BOUNDS[0] <= w <= WIDTH_BOUNDS[1] for _, w in self.width_knots):
            raise DomainError(f"segment {self.id}: lane width outside {WIDTH_BOUNDS}")
        if any(abs(k) > CURVATURE_BOUND for _, k in self.curvature_knots):
            raise DomainError(f"segment {self.id}: |curvature| exceeds {CURVATURE_BOUND}/m")
        object.__setattr__(self, "_ks", tuple(p[0] for p in self.curvature_knots))
        object.__setattr__(self, "_kv", tuple(p[1] for p in self.curvature_knots))
        object.__setattr__(self, "_ws", tuple(p[0] for p in self.width_knots))
        object.__setattr__(self, "_wv", tuple(p[1] for p in self.width_knots))

    def curvature_at(self, s):
        return _interp(self._ks, self._kv, s)

    def width_at(self, s):
        return _interp(self._ws, self._wv, s)

    def to_dict(self):
        return {
            "id": self.id,
            "length_m": self.length,
            "curvature_knots": [[s, k] for s, k in self.curvature_knots],
            "width_knots": [[s, w] for s, w in self.width_knots],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            id=int(d["id"]),
            length=float(d["length_m"]),
            curvature_knots=tuple((float(s), float(k)) for s, k in d["curvature_knots"]),
            width_knots=tuple((float(s), float(w)) for s, w in d["width_knots"]),
        )

    def to_json(self):
        return json.dumps(self.to_dict(), separators=(",", ":"))


@dataclass(frozen=True)
class SegmentFeatures:
    w_min: float
    w_max: float
    k_min: float
    k_max: float
    k_abs_max: float


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: float


@dataclass
class SegmentGenConfig:
    length_range: tuple = (80.0, 300.0)
    knot_spacing_range: tuple = (20.0, 60.0)
    # per-segment curvature scale, drawn log-uniformly; the population of
    # k_abs_max straddles the 0.003/m grouping threshold
    curvature_scale_range: tuple = (5e-4, 2.5e-2)
    curvature_limit: float = 0.04
    width_range: tuple = (2.62, 5.67)
    width_base_range: tuple = (3.0, 3.7)
    width_jitter: float = 0.15
    width_knot_count_range: tuple = (1, 4)  # number of width intervals

    def __post_init__(self):
        for name in ("length_range", "knot_spacing_range", "curvature_scale_range",
                     "width_range", "width_base_range", "width_knot_count_range"):
            value = tuple(getattr(self, name))
            if len(value) != 2 or value[0] > value[1]:
                raise ConfigError(name, f"expected an ordered pair, got {value}")
            setattr(self, name, value)
        if self.length_range[0] <= 0:
            raise ConfigError("length_range", "lengths must be positive")
        if self.knot_spacing_range[0] <= 0:
            raise ConfigError("knot_spacing_range", "spacing must be positive")
        if math.ceil(self.length_range[0] / self.knot_spacing_range[1]) > math.floor(
            self.length_range[0] / self.knot_spacing_range[0]
        ):
            raise ConfigError("knot_spacing_range", "no knot count fits the shortest segment")
        if not 0 < self.curvature_limit <= CURVATURE_BOUND:
            raise ConfigError("curvature_limit", f"must lie in (0, {CURVATURE_BOUND}]")
        if self.curvature_scale_range[0] <= 0:
            raise ConfigError("curvature_scale_range", "scales must be positive")
        if not (WIDTH_BOUNDS[0] <= self.width_range[0] and self.width_range[1] <= WIDTH_BOUNDS[1]):
            raise ConfigError("width_range", f"must lie within {WIDTH_BOUNDS}")
        if not (self.width_range[0] <= self.width_base_range[0]
                and self.width_base_range[1] <= self.width_range[1]):
            raise ConfigError("width_base_range", "must lie within width_range")
        if self.width_jitter < 0:
            raise ConfigError("width_jitter", "must be non-negative")
        if self.width_knot_count_range[0] < 1:
            raise ConfigError("width_knot_count_range", "at least one width interval")

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def _generate_one(seg_id, rng, cfg):
    length = float(rng.uniform(*cfg.length_range))
    n_lo = math.ceil(length / cfg.knot_spacing_range[1])
    n_hi = math.floor(length / cfg.knot_spacing_range[0])
    n_int = int(rng.integers(n_lo, n_hi + 1))
    s_knots = [length * i / n_int for i in range(n_int)] + [length]

    lo, hi = np.log(cfg.curvature_scale_range)
    scale = float(np.exp(rng.uniform(lo, hi)))
    k_vals = np.clip(scale * rng.uniform(-1.0, 1.0, size=n_int + 1),
                     -cfg.curvature_limit, cfg.curvature_limit)

    n_w = int(rng.integers(cfg.width_knot_count_range[0], cfg.width_knot_count_range[1] + 1))
    w_s = [length * i / n_w for i in range(n_w)] + [length]
    base = rng.uniform(*cfg.width_base_range)
    w_vals = np.clip(base + rng.uniform(-cfg.width_jitter, cfg.width_jitter, size=n_w + 1),
                     *cfg.width_range)

    return RoadSegment(
        id=seg_id,
        length=length,
        curvature_knots=tuple((float(s), float(k)) for s, k in zip(s_knots, k_vals)),
        width_knots=tuple((float(s), float(w)) for s, w in zip(w_s, w_vals)),
    )


def generate_segments(count, seed, ranges=None):
    """Seeded synthetic lane segments; segment i depends only on (seed, i, ranges)."""
    if count < 1:
        raise ConfigError("count", "at least one segment")
    cfg = ranges if ranges is not None else SegmentGenConfig()
    return [_generate_one(i, np.random.default_rng(mix64(seed, i)), cfg) for i in range(count)]


def segment_features(seg):
    # piecewise-linear profiles attain their extremes at knots
    widths = [w for _, w in seg.width_knots]
    curvs = [k for _, k in seg.curvature_knots]
    k_min, k_max = min(curvs), max(curvs)
    return SegmentFeatures(
        w_min=min(widths),
        w_max=max(widths),
        k_min=k_min,
        k_max=k_max,
        k_abs_max=max(abs(k_min), abs(k_max)),
    )


def _integrate(seg, s_end, step=INTEGRATION_STEP):
    n = max(1, int(math.ceil(s_end / step)))
    s = np.linspace(0.0, s_end, n + 1)
    k = np.interp(s, seg._ks, seg._kv)
    heading = cumulative_trapezoid(k, s, initial=0.0)
    x = cumulative_trapezoid(np.cos(heading), s, initial=0.0)
    y = cumulative_trapezoid(np.sin(heading), s, initial=0.0)
    return s, x, y, heading


def eval_geometry(seg, s):
    """Curvature, lane width and centerline pose at arc length s."""
    if not 0.0 <= s <= seg.length:
        raise DomainError(f"s={s} outside [0, {seg.length}] for segment {seg.id}")
    _, x, y, heading = _integrate(seg, s)
    return seg.curvature_at(s), seg.width_at(s), Pose(float(x[-1]), float(y[-1]), float(heading[-1]))


def sample_centerline(seg, step=0.5):
    """Centerline poses on a regular grid, for plotting and path-length checks."""
    s, x, y, heading = _integrate(seg, seg.length, step=min(step, INTEGRATION_STEP))
    stride = max(1, int(round(step / (s[1] - s[0]))))
    idx = np.unique(np.r_[np.arange(0, len(s), stride), len(s) - 1])
    w = np.interp(s[idx], seg._ws, seg._wv)
    return s[idx], x[idx], y[idx], heading[idx], w


def segments_to_json(segments):
    return json.dumps([seg.to_dict() for seg in segments], separators=(",", ":"))


def segments_from_json(text):
    return [RoadSegment.from_dict(d) for d in json.loads(text)]
