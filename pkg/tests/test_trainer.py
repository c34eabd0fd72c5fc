import numpy as np
import pandas as pd
import pytest

from models.quantile_net import predict, save
from models.trainer import TrainConfig, train, write_train_log
from utils.errors import ConfigError, DomainError, TrainingDivergedError


def test_config_validation():
    assert TrainConfig().quantiles == (0.05, 0.95)
    assert TrainConfig.for_alpha(0.2).quantiles == pytest.approx((0.1, 0.9))
    for kwargs in ({"batch_size": 0}, {"lr": 0.0}, {"val_fraction": 0.6},
                   {"quantiles": (0.5, 0.4)}, {"hidden_widths": ()}, {"activation": "ELU"}):
        with pytest.raises(ConfigError):
            TrainConfig(**kwargs)
    assert TrainConfig().to_dict()["hidden_widths"] == [380, 380]


def test_too_few_samples():
    with pytest.raises(DomainError):
        train(np.zeros((100, 3)), np.zeros(100), TrainConfig(batch_size=64))


def test_non_finite_labels_diverge(rng):
    X = rng.uniform(size=(64, 2))
    y = rng.uniform(size=64)
    y[3] = np.nan
    cfg = TrainConfig(batch_size=16, hidden_widths=(4,), max_epochs=3)
    with pytest.raises(TrainingDivergedError) as info:
        train(X, y, cfg)
    assert info.value.epoch == 1


def test_constant_labels(rng):
    X = rng.normal(size=(1024, 3))
    y = np.full(1024, 0.3)
    cfg = TrainConfig(batch_size=128, lr=2e-4, max_epochs=200, patience=40, hidden_widths=(16, 16))
    model = train(X, y, cfg)
    assert model.metadata["final_val_loss"] < 1e-3
    q_lo, q_hi = predict(model, rng.normal(size=(200, 3)))
    np.testing.assert_allclose(q_lo, 0.3, atol=1e-2)
    np.testing.assert_allclose(q_hi, 0.3, atol=1e-2)


def test_learns_noiseless_identity(rng):
    X = rng.uniform(size=(5000, 3))
    y = X[:, 0].copy()
    cfg = TrainConfig(batch_size=128, lr=1e-3, max_epochs=300, patience=40, hidden_widths=(64, 64))
    model = train(X, y, cfg)
    X_new = rng.uniform(size=(1000, 3))
    q_lo, q_hi = predict(model, X_new)
    assert np.mean(np.abs(q_lo - X_new[:, 0])) < 0.02
    assert np.mean(np.abs(q_hi - X_new[:, 0])) < 0.02


def test_upper_head_is_roughly_calibrated(rng):
    n = 4000
    X = rng.uniform(size=(n, 2))
    y = 1.0 + X[:, 0] + 0.1 * rng.normal(size=n)
    cfg = TrainConfig(batch_size=128, lr=1e-3, max_epochs=150, patience=30, hidden_widths=(32, 32))
    model = train(X, y, cfg)
    X_new = rng.uniform(size=(2000, 2))
    y_new = 1.0 + X_new[:, 0] + 0.1 * rng.normal(size=2000)
    q_lo, q_hi = predict(model, X_new)
    assert 0.90 <= np.mean(y_new <= q_hi) <= 1.0
    assert 0.0 <= np.mean(y_new < q_lo) <= 0.10


def test_training_is_deterministic(tmp_path, rng):
    X = rng.uniform(size=(512, 3))
    y = X[:, 1] ** 2
    cfg = TrainConfig(batch_size=64, max_epochs=5, hidden_widths=(8,), seed=11)
    a, b = train(X, y, cfg), train(X, y, cfg)
    save(a, str(tmp_path / "a.json"))
    save(b, str(tmp_path / "b.json"))
    assert (tmp_path / "a.json").read_text() == (tmp_path / "b.json").read_text()


def test_history_and_log(tmp_path, rng):
    X = rng.uniform(size=(512, 3))
    y = X[:, 2]
    cfg = TrainConfig(batch_size=64, max_epochs=30, patience=3, hidden_widths=(8,))
    model = train(X, y, cfg, feature_names=["a", "b", "c"])
    assert model.feature_names == ["a", "b", "c"]
    assert model.metadata["epochs_run"] == len(model.history) <= 30
    assert 1 <= model.metadata["best_epoch"] <= model.metadata["epochs_run"]
    assert model.metadata["final_val_loss"] == min(v for _, _, v in model.history)
    path = str(tmp_path / "train_log.csv")
    write_train_log(model.history, path)
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["epoch", "train_loss", "val_loss"]
    assert len(frame) == len(model.history)
