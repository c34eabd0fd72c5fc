# Copyright (c) 2024-present, capguard contributors.
# All rights reserved.
#
# This source code is licensed under the license found in the
# LICENSE file in the root directory of this source tree.


import torch.nn as nn


def get_activation(activation_type):
    if activation_type == "ReLU":
        return nn.ReLU
    else:
        raise NotImplementedError(activation_type)


def build_mlp(dim_in, hidden_widths, dim_out, activation_type="ReLU", batch_norm=True,
              bn_momentum=0.1, out_activation=True):
    """Linear -> [BatchNorm] -> activation per hidden layer, then a linear head."""
    activation = get_activation(activation_type)
    modules = []
    dim_prev = dim_in
    for width in hidden_widths:
        modules.append(nn.Linear(dim_prev, width))
        if batch_norm:
            modules.append(nn.BatchNorm1d(width, momentum=bn_momentum))
        modules.append(activation())
        dim_prev = width
    modules.append(nn.Linear(dim_prev, dim_out))
    if out_activation:
        modules.append(activation())
    return nn.Sequential(*modules)
