# Copyright (c) 2024-present, capguard contributors.
# All rights reserved.
#
# This source code is licensed under the license found in the
# LICENSE file in the root directory of this source tree.
#####################################################################################
# Grouping-variable diagnostics: plug-in mutual information, mRMR (MID) ranking,
# Breusch-Pagan F-test, Brown-Forsythe, degradation dummies and group assignment.
####################################################################################


import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
import scipy.linalg
from scipy import stats
from sklearn.metrics import mutual_info_score

from data.scenarios import FEATURE_NAMES
from sim.vehicle import DEGRADATION_COLUMNS
from utils.errors import ConfigError, DomainError, RankDeficiencyError


__all__ = [
    "GroupingSpec",
    "DiagnosticsReport",
    "discretize",
    "mutual_information",
    "mrmr_rank",
    "ranks_from_order",
    "breusch_pagan",
    "brown_forsythe",
    "make_dummy",
    "assign_group",
    "threshold_table",
    "diagnose",
]

logger = logging.getLogger(__name__)

DEFAULT_BINS = 16
RIDGE = 1e-10
# steering angle and steering rate factors; torque factors do not enter the dummies
DUMMY_COLUMNS = DEGRADATION_COLUMNS[:8]
DEFAULT_DUMMIES = ((2, 0.1), (2, 0.2))
DEFAULT_THRESHOLDS = (0.001, 0.002, 0.003, 0.005, 0.01)


@dataclass(frozen=True)
class GroupingSpec:
    kind: str = "none"  # none | curvature | dummy
    threshold: float = 0.003  # 1/m
    n_w: int = 2
    ell_d: float = 0.1
    column: str = "k_abs_max"

    def __post_init__(self):
        if self.kind not in ("none", "curvature", "dummy"):
            raise ConfigError("grouping", f"unknown grouping kind {self.kind!r}")
        if self.kind == "curvature" and not self.threshold > 0:
            raise ConfigError("grouping", "curvature threshold must be > 0")
        if self.kind == "dummy":
            if not 1 <= self.n_w <= 12:
                raise ConfigError("grouping", "dummy count N_W must lie in [1, 12]")
            if not 0.0 < self.ell_d < 1.0:
                raise ConfigError("grouping", "dummy level must lie in (0, 1)")

    @classmethod
    def parse(cls, text):
        """``none``, ``curvature:K`` or ``dummy:N,L``."""
        text = (text or "none").strip()
        kind, _, arg = text.partition(":")
        try:
            if kind == "none" and not arg:
                return cls("none")
            if kind == "curvature":
                return cls("curvature", threshold=float(arg))
            if kind == "dummy":
                n_w, ell_d = arg.split(",")
                return cls("dummy", n_w=int(n_w), ell_d=float(ell_d))
        except ValueError:
            pass
        raise ConfigError("grouping", f"cannot parse {text!r}; use none, curvature:K or dummy:N,L")

    @property
    def groups(self):
        return (0,) if self.kind == "none" else (0, 1)

    def __str__(self):
        if self.kind == "curvature":
            return f"curvature:{self.threshold:g}"
        if self.kind == "dummy":
            return f"dummy:{self.n_w},{self.ell_d:g}"
        return "none"

    def to_dict(self):
        return {"kind": self.kind, "threshold": self.threshold, "n_w": self.n_w,
                "ell_d": self.ell_d, "column": self.column}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], float(d["threshold"]), int(d["n_w"]), float(d["ell_d"]),
                   d.get("column", "k_abs_max"))


def discretize(x, bins):
    """Equal-frequency bin codes; columns with at most ``bins`` distinct values keep their categories."""
    x = np.asarray(x, dtype=np.float64)
    uniq = np.unique(x)
    if len(uniq) <= bins:
        return np.searchsorted(uniq, x)
    edges = np.unique(np.quantile(x, np.linspace(0.0, 1.0, bins + 1)[1:-1]))
    return np.searchsorted(edges, x, side="right")


def _check_mi_args(x, y, bins):
    if bins < 2:
        raise DomainError("need at least 2 bins")
    if len(x) != len(y):
        raise DomainError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 10 * bins:
        raise DomainError(f"need at least {10 * bins} samples for {bins} bins, got {len(x)}")


def _mi_codes(cx, cy):
    return max(0.0, float(mutual_info_score(cx, cy)))


def mutual_information(x, y, bins=DEFAULT_BINS):
    """Plug-in MI in nats; returns (mi, degenerate) where degenerate flags a constant column."""
    x, y = np.asarray(x), np.asarray(y)
    _check_mi_args(x, y, bins)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return 0.0, True
    return _mi_codes(discretize(x, bins), discretize(y, bins)), False


def mrmr_rank(X, y, bins=DEFAULT_BINS):
    """Greedy MID mRMR; returns the 0-based selection order of all columns."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    _check_mi_args(X[:, 0], y, bins)
    n_features = X.shape[1]
    codes = [discretize(X[:, j], bins) for j in range(n_features)]
    cy = discretize(y, bins)
    relevance = np.array([_mi_codes(c, cy) for c in codes])

    pair = {}

    def redundancy(a, b):
        key = (min(a, b), max(a, b))
        if key not in pair:
            pair[key] = _mi_codes(codes[key[0]], codes[key[1]])
        return pair[key]

    order = [int(np.argmax(relevance))]
    remaining = [j for j in range(n_features) if j != order[0]]
    while remaining:
        scores = [relevance[j] - np.mean([redundancy(j, s) for s in order]) for j in remaining]
        # argmax takes the first maximum, i.e. the lowest remaining index
        pick = remaining[int(np.argmax(scores))]
        order.append(pick)
        remaining.remove(pick)
    return order


def ranks_from_order(order):
    ranks = np.empty(len(order), dtype=int)
    ranks[np.asarray(order)] = np.arange(1, len(order) + 1)
    return ranks


def _ols(Z, t):
    G = Z.T @ Z
    jitter = np.full(Z.shape[1], RIDGE)
    jitter[0] = 0.0  # intercept unpenalized
    return np.linalg.solve(G + np.diag(jitter), Z.T @ t)


def _check_rank(Z, names):
    _, R, piv = scipy.linalg.qr(Z, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(Z.shape) * np.finfo(float).eps * diag[0]
    rank = int(np.sum(diag > tol))
    if rank < Z.shape[1]:
        raise RankDeficiencyError([names[i] for i in sorted(piv[rank:])])


def breusch_pagan(X, y, names=None):
    """Breusch-Pagan heteroscedasticity test, F version.

    Fits y ~ [1, X], regresses the squared residuals on [1, X] and returns
    (F, p) with F = (R2/k) / ((1 - R2)/(n - k - 1)).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n, k = X.shape
    if n <= k + 2:
        raise DomainError(f"need more than {k + 2} samples, got {n}")
    names = list(names) if names is not None else [f"x{j}" for j in range(k)]
    Z = np.column_stack([np.ones(n), X])
    _check_rank(Z, ["intercept"] + names)

    e2 = (y - Z @ _ols(Z, y)) ** 2
    sst = np.sum((e2 - e2.mean()) ** 2)
    if sst <= (1e-9 * max(e2.mean(), np.finfo(float).tiny)) ** 2 * n:
        return 0.0, 1.0
    resid = e2 - Z @ _ols(Z, e2)
    r2 = min(max(1.0 - np.sum(resid ** 2) / sst, 0.0), 1.0)
    df2 = n - k - 1
    if r2 >= 1.0:
        return float("inf"), 0.0
    F = (r2 / k) / ((1.0 - r2) / df2)
    return float(F), float(stats.f.sf(F, k, df2))


def _split_groups(x):
    x = np.asarray(x, dtype=np.float64)
    uniq = np.unique(x)
    if len(uniq) <= 2:
        return (x == uniq[-1]).astype(int)
    return (x > np.median(x)).astype(int)


def brown_forsythe(y, groups):
    """Median-centred Levene F across groups; nan when fewer than two groups are populated."""
    y = np.asarray(y, dtype=np.float64)
    groups = np.asarray(groups)
    parts = [y[groups == g] for g in np.unique(groups)]
    parts = [p for p in parts if len(p) >= 2]
    if len(parts) < 2:
        return float("nan")
    return float(stats.levene(*parts, center="median").statistic)


def make_dummy(deg, n_w, ell_d):
    """1 where at least n_w steering angle/rate factors are <= ell_d.

    Args:
        - deg: [N, 12] or [12] degradation factors in DEGRADATION_COLUMNS order
    """
    if not 1 <= n_w <= 12:
        raise DomainError("n_w must lie in [1, 12]")
    if not 0.0 < ell_d < 1.0:
        raise DomainError("ell_d must lie in (0, 1)")
    deg = np.asarray(deg, dtype=np.float64)
    count = np.sum(deg[..., :len(DUMMY_COLUMNS)] <= ell_d, axis=-1)
    return (count >= n_w).astype(int)


def assign_group(x, spec, feature_names=FEATURE_NAMES):
    """Group id in {0, 1} for one feature vector, or an array of ids for a [N, F] matrix."""
    x = np.asarray(x, dtype=np.float64)
    names = list(feature_names)
    if spec is None or spec.kind == "none":
        g = np.zeros(x.shape[:-1], dtype=int)
    elif spec.kind == "curvature":
        if spec.column not in names:
            raise ConfigError("grouping", f"column {spec.column!r} is not among the features")
        g = (x[..., names.index(spec.column)] > spec.threshold).astype(int)
    else:
        missing = [c for c in DEGRADATION_COLUMNS if c not in names]
        if missing:
            raise ConfigError("grouping", f"dummy grouping needs degradation features {missing}")
        deg = x[..., [names.index(c) for c in DEGRADATION_COLUMNS]]
        g = make_dummy(deg, spec.n_w, spec.ell_d)
    return int(g) if g.ndim == 0 else g


def dummy_name(n_w, ell_d):
    return f"D_ge{n_w}_{ell_d:g}"


@dataclass
class DiagnosticsReport:
    features: list
    mi: np.ndarray
    degenerate: np.ndarray
    mrmr_rank: np.ndarray
    bp_F: np.ndarray
    bp_p: np.ndarray
    bf_F: np.ndarray
    bins: int
    dummies: tuple
    variant: str = "MID"

    def to_frame(self):
        return pd.DataFrame({
            "feature": self.features,
            "mi_nats": self.mi,
            "mrmr_rank": self.mrmr_rank,
            "bp_F": self.bp_F,
            "bp_p": self.bp_p,
            "bf_F": self.bf_F,
        })


def threshold_table(k_col, y, thresholds=DEFAULT_THRESHOLDS):
    """Group sizes, label variance per group and Brown-Forsythe F for candidate curvature thresholds."""
    k_col = np.asarray(k_col, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    rows = []
    for thr in thresholds:
        g = (k_col > thr).astype(int)
        y0, y1 = y[g == 0], y[g == 1]
        rows.append({
            "threshold": thr,
            "n_0": len(y0),
            "n_1": len(y1),
            "var_0": float(np.var(y0)) if len(y0) else float("nan"),
            "var_1": float(np.var(y1)) if len(y1) else float("nan"),
            "bf_F": brown_forsythe(y, g),
        })
    return pd.DataFrame(rows)


def diagnose(X, y, feature_names=FEATURE_NAMES, bins=DEFAULT_BINS, dummies=DEFAULT_DUMMIES):
    """Per-feature MI, mRMR rank, single-column Breusch-Pagan and Brown-Forsythe.

    Configured degradation dummies are appended as extra candidate columns.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    names = list(feature_names)
    if dummies:
        missing = [c for c in DEGRADATION_COLUMNS if c not in names]
        if missing:
            raise ConfigError("dummies", f"dummy columns need degradation features {missing}")
        deg = X[:, [names.index(c) for c in DEGRADATION_COLUMNS]]
        extra = [make_dummy(deg, n_w, ell_d) for n_w, ell_d in dummies]
        X = np.column_stack([X] + extra)
        names += [dummy_name(n_w, ell_d) for n_w, ell_d in dummies]

    n_features = X.shape[1]
    mi = np.zeros(n_features)
    degenerate = np.zeros(n_features, dtype=bool)
    bp_F = np.full(n_features, np.nan)
    bp_p = np.full(n_features, np.nan)
    bf_F = np.full(n_features, np.nan)
    for j, name in enumerate(names):
        mi[j], degenerate[j] = mutual_information(X[:, j], y, bins)
        if degenerate[j]:
            logger.warning(f"feature {name} is constant; MI reported as 0")
            continue
        try:
            bp_F[j], bp_p[j] = breusch_pagan(X[:, j], y, names=[name])
        except RankDeficiencyError as exc:
            logger.warning(f"Breusch-Pagan skipped for {name}: {exc}")
        bf_F[j] = brown_forsythe(y, _split_groups(X[:, j]))

    ranks = ranks_from_order(mrmr_rank(X, y, bins))
    return DiagnosticsReport(
        features=names, mi=mi, degenerate=degenerate, mrmr_rank=ranks,
        bp_F=bp_F, bp_p=bp_p, bf_F=bf_F, bins=bins, dummies=tuple(dummies or ()),
    )
