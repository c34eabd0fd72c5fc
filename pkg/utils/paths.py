# Copyright (c) 2024-present, capguard contributors.
# All rights reserved.
#
# This source code is licensed under the license found in the
# LICENSE file in the root directory of this source tree.


import os

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

configs_path = os.path.join(ROOT, "configs")
results_path = os.path.join(ROOT, "results")
default_config = os.path.join(configs_path, "capguard.yaml")

# artifact file names shared by the subcommands
ROADS = "roads.json"
DATASET = "dataset.csv"
PROVENANCE = "dataset.provenance.json"
SPLITS = "splits.json"
DIAGNOSTICS = "diagnostics.csv"
THRESHOLDS = "thresholds.csv"
MODEL = "model.json"
TRAIN_LOG = "train_log.csv"
CALIBRATION = "calibration.json"
REPORT = "report.csv"
LENGTHS = "interval_lengths.csv"
LENGTHS_SVG = "interval_lengths.svg"
SELECTION = "selection.csv"
COMPARISON = "comparison.csv"
DECISION = "decision.csv"
DECISION_SVG = "decision.svg"
TRACE = "trace.csv"
TRACE_SVG = "trace.svg"


def manifest_name(command):
    return f"manifest_{command.replace('-', '_')}.json"
