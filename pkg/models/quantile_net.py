# Copyright (c) 2024-present, capguard contributors.
# All rights reserved.
#
# This source code is licensed under the license found in the
# LICENSE file in the root directory of this source tree.


import json

import numpy as np
import torch
import torch.nn as nn

from models.modules import build_mlp
from utils.errors import DomainError, ModelLoadError, SchemaVersionError


__all__ = ["SCHEMA", "QuantileModel", "pinball_loss", "quantile_loss", "predict", "save", "load"]

SCHEMA = "capguard-qnet-v1"


def pinball_loss(tau, y, y_hat):
    u = y - y_hat
    return tau * u if u >= 0 else (tau - 1.0) * u


def quantile_loss(out, y, quantiles):
    """Mean over samples of the summed pinball losses of both heads.

    Args:
        - out: [B, 2] raw head outputs
        - y: [B]
    """
    u = y.unsqueeze(-1) - out  # [B, 2]
    tau = torch.as_tensor(quantiles, dtype=out.dtype, device=out.device)
    return torch.maximum(tau * u, (tau - 1.0) * u).sum(-1).mean()


class QuantileModel(nn.Module):
    def __init__(
        self,
        dim_in=19,
        hidden_widths=(380, 380),
        quantiles=(0.05, 0.95),
        activation_type="ReLU",
        bn_momentum=0.1,
        feature_names=None,
    ):
        super(QuantileModel, self).__init__()
        tau_lo, tau_hi = quantiles
        if not 0.0 < tau_lo < tau_hi < 1.0:
            raise DomainError(f"quantile levels must satisfy 0 < lo < hi < 1, got {quantiles}")
        self.dim_in = dim_in
        self.hidden_widths = tuple(int(w) for w in hidden_widths)
        self.quantiles = (float(tau_lo), float(tau_hi))
        self.activation_type = activation_type
        self.bn_momentum = bn_momentum
        self.feature_names = list(feature_names) if feature_names is not None else None
        self.metadata = {}

        # ReLU on the output keeps predictions in the non-negative deviation domain
        self.mlp = build_mlp(
            dim_in, self.hidden_widths, 2, activation_type=activation_type,
            batch_norm=True, bn_momentum=bn_momentum, out_activation=True,
        )
        self.register_buffer("x_mean", torch.zeros(dim_in))
        self.register_buffer("x_std", torch.ones(dim_in))
        self.double()

    def set_standardization(self, mean, std):
        std = np.where(np.asarray(std) > 1e-12, std, 1.0)
        self.x_mean.copy_(torch.as_tensor(mean, dtype=self.x_mean.dtype))
        self.x_std.copy_(torch.as_tensor(std, dtype=self.x_std.dtype))

    def init_heads(self, lo, hi):
        head = [mod for mod in self.mlp if isinstance(mod, nn.Linear)][-1]
        with torch.no_grad():
            head.bias.copy_(torch.tensor([lo, hi], dtype=head.bias.dtype))

    def forward(self, x):
        return self.mlp((x - self.x_mean) / self.x_std)


def predict(model, x):
    """Sorted (q_lo, q_hi) for one feature vector or a [N, F] batch."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[-1] != model.dim_in:
        raise DomainError(f"expected {model.dim_in} features, got {x.shape[-1]}")
    if not np.all(np.isfinite(x)):
        raise DomainError("non-finite feature value")
    model.eval()
    with torch.no_grad():
        out = model(torch.as_tensor(x)).numpy()
    # crossing heads are resolved by sorting
    q_lo, q_hi = out.min(-1), out.max(-1)
    if single:
        return float(q_lo[0]), float(q_hi[0])
    return q_lo, q_hi


def save(model, path):
    state = {
        name: {"shape": list(t.shape), "data": t.reshape(-1).tolist()}
        for name, t in model.state_dict().items()
    }
    doc = {
        "schema": SCHEMA,
        "dims": {"input": model.dim_in, "hidden": list(model.hidden_widths), "output": 2},
        "activation": model.activation_type,
        "bn_momentum": model.bn_momentum,
        "quantiles": list(model.quantiles),
        "feature_names": model.feature_names,
        "standardization": {"mean": model.x_mean.tolist(), "std": model.x_std.tolist()},
        "state": state,
        "metadata": model.metadata,
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load(path):
    try:
        with open(path, "r") as f:
            doc = json.load(f)
    except (OSError, ValueError) as exc:
        raise ModelLoadError(f"cannot read model file {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ModelLoadError(f"{path} is not a model document")
    if doc.get("schema") != SCHEMA:
        raise SchemaVersionError(doc.get("schema"), SCHEMA)
    try:
        model = QuantileModel(
            dim_in=doc["dims"]["input"],
            hidden_widths=doc["dims"]["hidden"],
            quantiles=tuple(doc["quantiles"]),
            activation_type=doc["activation"],
            bn_momentum=doc["bn_momentum"],
            feature_names=doc.get("feature_names"),
        )
        reference = model.state_dict()
        state = {}
        for name, ref in reference.items():
            entry = doc["state"][name]
            state[name] = torch.tensor(entry["data"], dtype=ref.dtype).reshape(entry["shape"])
        model.load_state_dict(state)
    except (KeyError, TypeError, RuntimeError) as exc:
        raise ModelLoadError(f"malformed model file {path}: {exc}") from exc
    model.metadata = doc.get("metadata", {})
    model.eval()
    return model
