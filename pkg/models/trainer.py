# Copyright (c) 2024-present, capguard contributors.
# All rights reserved.
#
# This source code is licensed under the license found in the
# LICENSE file in the root directory of this source tree.


import copy
import math
import logging
from dataclasses import dataclass, asdict

import numpy as np
import pandas as pd
import torch
from tqdm import tqdm

from models.quantile_net import QuantileModel, quantile_loss
from utils.errors import ConfigError, DomainError, TrainingDivergedError
from utils.log import RunningAverage


__all__ = ["TrainConfig", "train", "write_train_log"]

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 128
    lr: float = 5e-4
    max_epochs: int = 1200
    patience: int = 50
    val_fraction: float = 0.1
    seed: int = 0
    quantiles: tuple = (0.05, 0.95)
    hidden_widths: tuple = (380, 380)
    activation: str = "ReLU"
    bn_momentum: float = 0.1
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    num_threads: int = 1

    def __post_init__(self):
        self.quantiles = tuple(float(q) for q in self.quantiles)
        self.hidden_widths = tuple(int(w) for w in self.hidden_widths)
        self.betas = tuple(float(b) for b in self.betas)
        if self.batch_size < 1:
            raise ConfigError("batch_size", "must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr", "must be > 0")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs", "must be >= 1")
        if self.patience < 1:
            raise ConfigError("patience", "must be >= 1")
        if not 0.0 < self.val_fraction <= 0.5:
            raise ConfigError("val_fraction", "must lie in (0, 0.5]")
        if len(self.quantiles) != 2 or not 0.0 < self.quantiles[0] < self.quantiles[1] < 1.0:
            raise ConfigError("quantiles", "need 0 < lo < hi < 1")
        if not self.hidden_widths or min(self.hidden_widths) < 1:
            raise ConfigError("hidden_widths", "need at least one positive width")
        if self.activation != "ReLU":
            raise ConfigError("activation", "only ReLU is supported")

    @classmethod
    def for_alpha(cls, alpha, **kwargs):
        return cls(quantiles=(alpha / 2.0, 1.0 - alpha / 2.0), **kwargs)

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def train(X, y, cfg, feature_names=None, progress=False):
    """Fit both quantile heads with Adam and early stopping; returns the best-validation snapshot."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    if n < 2 * cfg.batch_size:
        raise DomainError(f"need at least {2 * cfg.batch_size} samples, got {n}")

    torch.set_num_threads(cfg.num_threads)
    torch.manual_seed(cfg.seed)
    generator = torch.Generator().manual_seed(cfg.seed)

    perm = torch.randperm(n, generator=generator).numpy()
    n_val = max(1, int(round(cfg.val_fraction * n)))
    val_idx, tr_idx = perm[:n_val], perm[n_val:]
    Xt, yt = torch.as_tensor(X[tr_idx]), torch.as_tensor(y[tr_idx])
    Xv, yv = torch.as_tensor(X[val_idx]), torch.as_tensor(y[val_idx])

    model = QuantileModel(
        dim_in=X.shape[1],
        hidden_widths=cfg.hidden_widths,
        quantiles=cfg.quantiles,
        activation_type=cfg.activation,
        bn_momentum=cfg.bn_momentum,
        feature_names=feature_names,
    )
    model.set_standardization(X[tr_idx].mean(0), X[tr_idx].std(0))
    # start both heads at the unconditional label quantiles, just above the ReLU kink
    model.init_heads(*(np.quantile(y[tr_idx], cfg.quantiles) + 1e-2))

    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=cfg.betas, eps=cfg.eps)
    ravg = RunningAverage("train_loss")
    history = []
    best_loss, best_state, best_epoch, bad_epochs = math.inf, None, 0, 0
    n_train = len(tr_idx)

    epochs = tqdm(range(1, cfg.max_epochs + 1), ascii=True, disable=not progress)
    for epoch in epochs:
        model.train()
        ravg.reset()
        order = torch.randperm(n_train, generator=generator)
        for start in range(0, n_train, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            if len(batch) < 2:
                # batch norm needs two samples for batch statistics
                continue
            optimizer.zero_grad()
            loss = quantile_loss(model(Xt[batch]), yt[batch], cfg.quantiles)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(epoch, loss.item())
            loss.backward()
            optimizer.step()
            ravg.update("train_loss", loss, n=len(batch))

        model.eval()
        with torch.no_grad():
            val_loss = quantile_loss(model(Xv), yv, cfg.quantiles).item()
        if not math.isfinite(val_loss):
            raise TrainingDivergedError(epoch, val_loss)
        train_loss = ravg.get("train_loss")
        history.append((epoch, train_loss, val_loss))

        if val_loss < best_loss:
            best_loss, best_epoch, bad_epochs = val_loss, epoch, 0
            best_state = copy.deepcopy(model.state_dict())
        else:
            bad_epochs += 1
        if epoch % 50 == 0:
            logger.info(f"epoch {epoch} {ravg.info()} val_loss {val_loss:.5f}")
        if bad_epochs >= cfg.patience:
            logger.info(f"early stopping at epoch {epoch}; best epoch {best_epoch} (val {best_loss:.5f})")
            break

    model.load_state_dict(best_state)
    model.eval()
    model.metadata = {
        "seed": cfg.seed,
        "epochs_run": len(history),
        "best_epoch": best_epoch,
        "final_val_loss": best_loss,
        "config": cfg.to_dict(),
    }
    model.history = history
    return model


def write_train_log(history, path):
    frame = pd.DataFrame(history, columns=["epoch", "train_loss", "val_loss"])
    frame.to_csv(path, index=False, float_format="%.9g")
