# Copyright (c) 2024-present, capguard contributors.
# All rights reserved.
#
# This source code is licensed under the license found in the
# LICENSE file in the root directory of this source tree.
#####################################################################################
# Split conformalized quantile regression with marginal or group-wise
# (equalized coverage) calibration, coverage reports and model selection.
####################################################################################


import json
import math
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from data.scenarios import FEATURE_NAMES
from models.quantile_net import QuantileModel, predict
from stats.diagnostics import GroupingSpec, assign_group
from utils.errors import CalibrationError, DomainError


__all__ = [
    "CalibrationResult",
    "PredictionInterval",
    "CoverageReport",
    "CalibratedPredictor",
    "conformity_score",
    "conformal_quantile",
    "calibrate",
    "predict_interval",
    "predict_intervals",
    "evaluate",
    "select_model",
    "length_histogram",
]

logger = logging.getLogger(__name__)

MIN_GROUP_SIZE = 20
PERCENTILES = (10, 25, 50, 75, 90, 95)


def conformity_score(q_lo, q_hi, y):
    """max(q_lo - y, y - q_hi); negative inside the raw interval."""
    q_lo, q_hi, y = np.asarray(q_lo), np.asarray(q_hi), np.asarray(y)
    if np.any(q_lo > q_hi):
        raise DomainError("lower quantile above upper quantile")
    s = np.maximum(q_lo - y, y - q_hi)
    return float(s) if s.ndim == 0 else s


def conformal_quantile(scores, alpha):
    """The ceil((n+1)(1-alpha))-th smallest score, or inf when that index exceeds n."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    scores = np.sort(np.asarray(scores, dtype=np.float64).ravel())
    n = len(scores)
    if n == 0:
        raise CalibrationError("no conformity scores to calibrate on")
    # the tolerance absorbs products such as 20 * 0.9 landing just above an integer
    m = max(1, math.ceil((n + 1) * (1.0 - alpha) - 1e-9))
    if m > n:
        return math.inf
    return float(scores[m - 1])


def _raw_quantiles(model, X):
    if isinstance(model, QuantileModel):
        return predict(model, X)
    q_lo, q_hi = model(X)
    return np.asarray(q_lo, dtype=np.float64), np.asarray(q_hi, dtype=np.float64)


def _groups(X, grouping, feature_names):
    if grouping is None:
        return np.zeros(len(X), dtype=int)
    return np.atleast_1d(assign_group(X, grouping, feature_names))


@dataclass
class CalibrationResult:
    alpha: float
    mode: str  # marginal | equalized
    grouping: GroupingSpec
    offsets: dict  # group -> Q_g; marginal stores group 0 only
    counts: dict  # group -> n_g

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise DomainError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.mode not in ("marginal", "equalized"):
            raise DomainError(f"unknown calibration mode {self.mode!r}")
        if any(n < 1 for n in self.counts.values()):
            raise CalibrationError("every calibrated group needs at least one sample")

    def offset(self, group):
        if self.mode == "marginal":
            return self.offsets[0]
        if group not in self.offsets:
            raise CalibrationError(f"group {group} was not seen during calibration")
        return self.offsets[group]

    def is_unbounded(self, group):
        return math.isinf(self.offset(group))

    def to_dict(self):
        return {
            "alpha": self.alpha,
            "mode": self.mode,
            "grouping": self.grouping.to_dict(),
            "offsets": {str(g): (None if math.isinf(q) else q) for g, q in self.offsets.items()},
            "unbounded": [g for g, q in self.offsets.items() if math.isinf(q)],
            "counts": {str(g): n for g, n in self.counts.items()},
        }

    @classmethod
    def from_dict(cls, d):
        offsets = {int(g): (math.inf if q is None else float(q)) for g, q in d["offsets"].items()}
        counts = {int(g): int(n) for g, n in d["counts"].items()}
        return cls(float(d["alpha"]), d["mode"], GroupingSpec.from_dict(d["grouping"]), offsets, counts)

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, "r") as f:
            return cls.from_dict(json.load(f))


@dataclass(frozen=True)
class PredictionInterval:
    lo: float
    hi: float  # inf when unbounded
    group: int
    unbounded: bool = False


def calibrate(model, X, y, alpha, grouping=None, mode=None, feature_names=FEATURE_NAMES,
              min_group_size=MIN_GROUP_SIZE):
    """Split-conformal offsets from the calibration set.

    Without a grouping (or kind none) one offset is computed from all scores.
    With a grouping the default is equalized calibration, one offset per group
    from that group's scores only; ``mode="marginal"`` keeps the grouping for
    reporting but calibrates a single pooled offset.
    """
    grouping = grouping if grouping is not None else GroupingSpec("none")
    if mode is None:
        mode = "marginal" if grouping.kind == "none" else "equalized"
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(y) == 0:
        raise CalibrationError("calibration set is empty")
    q_lo, q_hi = _raw_quantiles(model, X)
    scores = conformity_score(np.atleast_1d(q_lo), np.atleast_1d(q_hi), y)

    if mode == "marginal":
        offsets = {0: conformal_quantile(scores, alpha)}
        counts = {0: len(scores)}
    else:
        groups = _groups(X, grouping, feature_names)
        offsets, counts = {}, {}
        for g in grouping.groups:
            sc = scores[groups == g]
            if len(sc) == 0:
                raise CalibrationError(f"group {g} has no calibration samples under {grouping}")
            if len(sc) < min_group_size:
                logger.warning(f"group {g} has only {len(sc)} calibration samples; offset may be unbounded")
            offsets[g] = conformal_quantile(sc, alpha)
            counts[g] = len(sc)
    for g, q in offsets.items():
        if math.isinf(q):
            logger.warning(f"group {g}: {counts[g]} samples are too few for alpha={alpha}; interval unbounded")
    return CalibrationResult(float(alpha), mode, grouping, offsets, counts)


def predict_intervals(model, calib, X, feature_names=FEATURE_NAMES):
    """Calibrated bounds for a [N, F] matrix; returns (lo, hi, groups) with hi = inf where unbounded."""
    X = np.asarray(X, dtype=np.float64)
    q_lo, q_hi = _raw_quantiles(model, X)
    groups = _groups(X, calib.grouping, feature_names)
    Q = np.array([calib.offset(int(g)) for g in groups], dtype=np.float64)
    lo = np.where(np.isinf(Q), 0.0, np.maximum(0.0, q_lo - Q))
    # a negative offset can push the upper bound below the floored lower one
    hi = np.maximum(q_hi + Q, lo)
    return lo, hi, groups


def predict_interval(model, calib, x, feature_names=FEATURE_NAMES):
    lo, hi, groups = predict_intervals(model, calib, np.asarray(x, dtype=np.float64)[None, :], feature_names)
    unbounded = bool(np.isinf(hi[0]))
    return PredictionInterval(float(lo[0]), float(hi[0]), int(groups[0]), unbounded)


class CalibratedPredictor(object):
    """A trained quantile model bound to its calibration; what the gate queries."""

    def __init__(self, model, calib, feature_names=FEATURE_NAMES):
        self.model = model
        self.calib = calib
        self.feature_names = tuple(feature_names)

    def interval(self, x):
        return predict_interval(self.model, self.calib, x, self.feature_names)

    def intervals(self, X):
        return predict_intervals(self.model, self.calib, X, self.feature_names)


@dataclass
class CoverageReport:
    n: int
    marginal: float
    per_group: dict
    n_per_group: dict
    length_percentiles: dict = field(default_factory=dict)  # percentile -> length
    mean_length: float = float("nan")
    n_unbounded: int = 0

    @property
    def p90(self):
        return self.length_percentiles.get(90, float("nan"))

    def to_frame(self):
        rows = [("n", "all", self.n), ("coverage", "all", self.marginal)]
        for g in sorted(self.per_group):
            rows.append(("n", str(g), self.n_per_group[g]))
            rows.append(("coverage", str(g), self.per_group[g]))
        for p in sorted(self.length_percentiles):
            rows.append((f"length_p{p}", "all", self.length_percentiles[p]))
        rows.append(("mean_length", "all", self.mean_length))
        rows.append(("n_unbounded", "all", self.n_unbounded))
        return pd.DataFrame(rows, columns=["metric", "group", "value"])


def evaluate(model, calib, X, y, feature_names=FEATURE_NAMES, return_lengths=False):
    """Empirical coverage (marginal and per group) and interval-length statistics on a test set."""
    y = np.asarray(y, dtype=np.float64)
    if len(y) == 0:
        raise DomainError("test set is empty")
    lo, hi, groups = predict_intervals(model, calib, X, feature_names)
    covered = (y >= lo) & (y <= hi)
    per_group, n_per_group = {}, {}
    for g in calib.grouping.groups:
        mask = groups == g
        n_per_group[g] = int(mask.sum())
        per_group[g] = float(covered[mask].mean()) if mask.any() else float("nan")

    finite = np.isfinite(hi)
    lengths = (hi - lo)[finite]
    if len(lengths):
        pct = dict(zip(PERCENTILES, np.percentile(lengths, PERCENTILES).tolist()))
        mean_length = float(lengths.mean())
    else:
        pct = {p: float("nan") for p in PERCENTILES}
        mean_length = float("nan")
    report = CoverageReport(
        n=len(y),
        marginal=float(covered.mean()),
        per_group=per_group,
        n_per_group=n_per_group,
        length_percentiles=pct,
        mean_length=mean_length,
        n_unbounded=int((~finite).sum()),
    )
    if return_lengths:
        return report, lengths
    return report


def select_model(candidates, target, tolerance=0.01):
    """Index of the conformant candidate with the shortest 90th-percentile interval.

    ``candidates`` holds CoverageReports or (model, CoverageReport) pairs.
    Returns (index, conformant); when no candidate lies within ``tolerance`` of
    ``target`` the one with coverage closest to it is returned, flagged False.
    """
    if not candidates:
        raise DomainError("no candidates to select from")
    reports = [c[1] if isinstance(c, tuple) else c for c in candidates]
    survivors = [i for i, r in enumerate(reports) if abs(r.marginal - target) <= tolerance + 1e-12]
    if survivors:
        def p90(i):
            v = reports[i].p90
            return math.inf if math.isnan(v) else v

        return min(survivors, key=lambda i: (p90(i), i)), True
    best = min(range(len(reports)), key=lambda i: (abs(reports[i].marginal - target), i))
    logger.warning(f"no candidate within {tolerance} of coverage {target}; falling back to candidate {best}")
    return best, False


def length_histogram(lengths, bins=30):
    """Shared-bin histogram of interval lengths.

    Args:
        - lengths: dict label -> array of finite interval lengths
    """
    pooled = np.concatenate([np.asarray(v, dtype=np.float64) for v in lengths.values()])
    if len(pooled) == 0:
        raise DomainError("no finite interval lengths to histogram")
    edges = np.histogram_bin_edges(pooled, bins=bins)
    frame = pd.DataFrame({"bin_lo": edges[:-1], "bin_hi": edges[1:]})
    for label, values in lengths.items():
        frame[label] = np.histogram(values, bins=edges)[0]
    return frame
