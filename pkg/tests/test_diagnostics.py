import math

import numpy as np
import pytest
from statsmodels.stats.diagnostic import het_breuschpagan

from data.scenarios import FEATURE_NAMES
from stats.diagnostics import (
    GroupingSpec,
    assign_group,
    breusch_pagan,
    brown_forsythe,
    diagnose,
    discretize,
    make_dummy,
    mrmr_rank,
    mutual_information,
    ranks_from_order,
    threshold_table,
)
from utils.errors import ConfigError, DomainError, RankDeficiencyError


def test_mi_of_identity_is_entropy(rng):
    x = rng.integers(0, 8, size=100_000)
    mi, degenerate = mutual_information(x, x, bins=16)
    assert not degenerate
    assert abs(mi - math.log(8)) < 0.05


def test_mi_of_independent_columns(rng):
    x = rng.uniform(size=100_000)
    y = rng.uniform(size=100_000)
    mi, _ = mutual_information(x, y, bins=16)
    assert 0.0 <= mi < 0.02


def test_mi_matches_plug_in_table():
    table = np.array([[20, 5, 0, 0], [5, 20, 5, 0], [0, 5, 20, 5], [0, 0, 5, 20]], dtype=float)
    xs, ys = [], []
    for i in range(4):
        for j in range(4):
            xs += [i] * int(table[i, j])
            ys += [j] * int(table[i, j])
    p = table / table.sum()
    px, py = p.sum(axis=1), p.sum(axis=0)
    nz = p > 0
    expected = np.sum(p[nz] * np.log(p[nz] / np.outer(px, py)[nz]))
    mi, _ = mutual_information(np.array(xs), np.array(ys), bins=4)
    assert mi == pytest.approx(expected, abs=1e-12)


def test_mi_is_symmetric_and_non_negative(rng):
    x = rng.normal(size=2000)
    y = x ** 2 + rng.normal(size=2000)
    a, _ = mutual_information(x, y)
    b, _ = mutual_information(y, x)
    assert abs(a - b) < 1e-12
    assert a >= 0.0


def test_mi_degenerate_and_invalid(rng):
    mi, degenerate = mutual_information(np.ones(500), rng.normal(size=500))
    assert mi == 0.0 and degenerate
    with pytest.raises(DomainError):
        mutual_information(np.arange(100), np.arange(100), bins=16)
    with pytest.raises(DomainError):
        mutual_information(np.arange(500), np.arange(400))
    with pytest.raises(DomainError):
        mutual_information(np.arange(500), np.arange(500), bins=1)


def test_discretize_is_equal_frequency(rng):
    codes = discretize(rng.uniform(size=1600), 16)
    counts = np.bincount(codes)
    assert len(counts) == 16
    assert counts.min() >= 90 and counts.max() <= 110
    np.testing.assert_array_equal(discretize([0.5, 0.1, 0.5], 16), [1, 0, 1])


def test_mrmr_prefers_relevant_feature(rng):
    y = rng.normal(size=3000)
    X = np.column_stack([rng.normal(size=3000), y + 0.3 * rng.normal(size=3000)])
    assert mrmr_rank(X, y)[0] == 1


def test_mrmr_penalizes_redundant_copy(rng):
    y = rng.normal(size=3000)
    f = y + 0.2 * rng.normal(size=3000)
    g = rng.normal(size=3000)
    order = mrmr_rank(np.column_stack([f, f.copy(), g]), y)
    assert order == [0, 2, 1]
    np.testing.assert_array_equal(ranks_from_order(order), [1, 3, 2])


def test_mrmr_single_feature(rng):
    y = rng.normal(size=500)
    assert mrmr_rank(y[:, None] + 1.0, y) == [0]


def test_breusch_pagan_matches_statsmodels(rng):
    n = 2000
    X = np.column_stack([rng.uniform(0.5, 2.0, n), rng.normal(size=n)])
    y = 1.0 + X[:, 0] - 0.5 * X[:, 1] + X[:, 0] * rng.normal(size=n)
    F, p = breusch_pagan(X, y)
    Z = np.column_stack([np.ones(n), X])
    resid = y - Z @ np.linalg.lstsq(Z, y, rcond=None)[0]
    _, _, f_ref, p_ref = het_breuschpagan(resid, Z)
    assert F == pytest.approx(f_ref, rel=1e-6)
    assert p == pytest.approx(p_ref, rel=1e-5, abs=1e-12)
    assert p < 0.01


def test_breusch_pagan_size_under_null():
    rejections = 0
    trials = 200
    for seed in range(trials):
        r = np.random.default_rng(seed)
        x = r.normal(size=(300, 2))
        y = x @ [1.0, -2.0] + r.normal(size=300)
        _, p = breusch_pagan(x, y)
        assert 0.0 <= p <= 1.0
        rejections += p < 0.05
    assert 0.02 <= rejections / trials <= 0.09


def test_breusch_pagan_shift_invariance(rng):
    x = rng.uniform(1.0, 3.0, size=(1000, 1))
    y = x[:, 0] * rng.normal(size=1000)
    F0, p0 = breusch_pagan(x, y)
    F1, p1 = breusch_pagan(x, y + 5.0)
    assert F1 == pytest.approx(F0, rel=1e-9, abs=1e-9)
    assert p1 == pytest.approx(p0, rel=1e-9, abs=1e-9)


def test_breusch_pagan_constant_squared_residuals():
    x = np.repeat(np.arange(1.0, 51.0), 2)
    signs = np.tile([1.0, -1.0], 50)
    F, p = breusch_pagan(x, 2.0 * x + signs)
    assert F == 0.0 and p == 1.0


def test_breusch_pagan_rank_deficiency(rng):
    a = rng.normal(size=100)
    with pytest.raises(RankDeficiencyError) as info:
        breusch_pagan(np.column_stack([a, 2.0 * a]), rng.normal(size=100), names=["a", "a2"])
    assert set(info.value.columns) & {"a", "a2"}


def test_brown_forsythe(rng):
    y = np.r_[rng.normal(scale=1.0, size=500), rng.normal(scale=3.0, size=500)]
    groups = np.r_[np.zeros(500), np.ones(500)]
    assert brown_forsythe(y, groups) > 50.0
    assert math.isnan(brown_forsythe(y, np.zeros(1000)))


def test_make_dummy():
    assert make_dummy(np.ones(12), 2, 0.1) == 0
    deg = np.ones(12)
    deg[[0, 5]] = 0.05
    assert make_dummy(deg, 2, 0.1) == 1
    deg = np.ones(12)
    deg[3] = 0.2
    assert make_dummy(deg, 1, 0.2) == 1
    # torque factors are not counted
    deg = np.ones(12)
    deg[8:] = 0.0
    assert make_dummy(deg, 1, 0.1) == 0
    np.testing.assert_array_equal(make_dummy(np.vstack([np.ones(12), np.zeros(12)]), 2, 0.1), [0, 1])


def test_assign_group():
    x = np.ones(len(FEATURE_NAMES))
    k = FEATURE_NAMES.index("k_abs_max")
    spec = GroupingSpec("curvature", 0.003)
    x[k] = 0.004
    assert assign_group(x, spec) == 1
    x[k] = 0.003
    assert assign_group(x, spec) == 0
    assert assign_group(x, None) == 0
    assert assign_group(x, GroupingSpec()) == 0
    np.testing.assert_array_equal(assign_group(np.vstack([x, x]), GroupingSpec()), [0, 0])
    x[:14] = 0.0
    assert assign_group(x, GroupingSpec("dummy", n_w=2, ell_d=0.1)) == 1


def test_grouping_spec_parse():
    assert GroupingSpec.parse("curvature:0.003") == GroupingSpec("curvature", 0.003)
    assert GroupingSpec.parse("dummy:2,0.1") == GroupingSpec("dummy", n_w=2, ell_d=0.1)
    assert GroupingSpec.parse(None).kind == "none"
    assert str(GroupingSpec.parse("curvature:0.003")) == "curvature:0.003"
    spec = GroupingSpec("dummy", n_w=3, ell_d=0.2)
    assert GroupingSpec.from_dict(spec.to_dict()) == spec
    for bad in ("curvature:-1", "dummy:13,0.1", "dummy:2,1.5", "banana", "curvature:x"):
        with pytest.raises(ConfigError):
            GroupingSpec.parse(bad)


def test_threshold_table(rng):
    k = rng.uniform(0.0, 0.01, size=1000)
    y = np.where(k > 0.003, rng.normal(scale=2.0, size=1000), rng.normal(scale=0.5, size=1000))
    table = threshold_table(k, y, thresholds=(0.003, 0.02))
    row = table.iloc[0]
    assert row["n_0"] + row["n_1"] == 1000
    assert row["var_1"] > row["var_0"]
    assert table.iloc[1]["n_1"] == 0 and math.isnan(table.iloc[1]["bf_F"])


def test_diagnose_report(rng):
    n = 600
    X = rng.uniform(size=(n, len(FEATURE_NAMES)))
    k = FEATURE_NAMES.index("k_abs_max")
    y = X[:, k] + X[:, k] * rng.normal(size=n)
    report = diagnose(X, y, FEATURE_NAMES, bins=8)
    frame = report.to_frame()
    assert list(frame.columns) == ["feature", "mi_nats", "mrmr_rank", "bp_F", "bp_p", "bf_F"]
    assert len(frame) == len(FEATURE_NAMES) + 2
    assert sorted(frame["mrmr_rank"]) == list(range(1, len(frame) + 1))
    assert (frame["mi_nats"] >= 0).all()
    assert frame.loc[frame["feature"] == "k_abs_max", "bp_p"].item() < 0.01
    assert report.variant == "MID"
