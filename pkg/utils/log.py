# Copyright (c) 2024-present, capguard contributors.
# All rights reserved.
#
# This source code is licensed under the license found in the
# LICENSE file in the root directory of this source tree.


import time
import logging
from collections import OrderedDict

import torch


LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def get_logger(filename, mode="a", level=logging.INFO):
    logging.basicConfig(level=level, format=LOG_FORMAT)
    logger = logging.getLogger()
    for hdlr in list(logger.handlers):
        logger.removeHandler(hdlr)
    formatter = logging.Formatter(LOG_FORMAT)
    for hdlr in (logging.FileHandler(filename, mode=mode), logging.StreamHandler()):
        hdlr.setFormatter(formatter)
        logger.addHandler(hdlr)
    logger.setLevel(level)
    return logger


class RunningAverage(object):
    """Sample-weighted running means, e.g. per-epoch pinball loss over mini-batches."""

    def __init__(self, *keys):
        self.sum = OrderedDict()
        self.cnt = OrderedDict()
        self.clock = time.time()
        for key in keys:
            self.sum[key] = 0.0
            self.cnt[key] = 0

    def update(self, key, val, n=1):
        if isinstance(val, torch.Tensor):
            val = val.item()
        if key not in self.sum:
            self.sum[key] = 0.0
            self.cnt[key] = 0
        self.sum[key] += float(val) * n
        self.cnt[key] += n

    def reset(self):
        for key in self.sum.keys():
            self.sum[key] = 0.0
            self.cnt[key] = 0
        self.clock = time.time()

    def keys(self):
        return self.sum.keys()

    def get(self, key):
        if not self.cnt.get(key):
            raise KeyError(f"no values recorded for {key!r}")
        return self.sum[key] / self.cnt[key]

    def as_dict(self):
        return OrderedDict((key, self.get(key)) for key in self.sum if self.cnt[key])

    def info(self, show_et=True):
        line = " ".join(f"{key} {val:.5f}" for key, val in self.as_dict().items())
        if show_et:
            line += f" ({time.time() - self.clock:.3f} secs)"
        return line
