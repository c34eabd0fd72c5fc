# Copyright (c) 2024-present, capguard contributors.
# All rights reserved.
#
# This source code is licensed under the license found in the
# LICENSE file in the root directory of this source tree.
#####################################################################################
# Pipeline driver: synthetic roads -> simulated dataset -> diagnostics -> quantile
# network -> conformal calibration -> evaluation / model selection -> maneuver gate.
####################################################################################


import os
import os.path as osp
import sys
import json
import logging
import argparse
from dataclasses import replace

import numpy as np
import pandas as pd

from data.roads import generate_segments, segments_from_json, segments_to_json
from data.scenarios import FLOAT_FORMAT, Dataset, generate_dataset, sample_scenarios, split_dataset
from models.quantile_net import load, save
from models.trainer import train, write_train_log
from monitor.gate import evaluate_candidates, measure_candidates, trace_chosen
from sim.vehicle import DEGRADATION_PRESETS, ManeuverType
from stats.conformal import (
    CalibratedPredictor,
    CalibrationResult,
    calibrate,
    evaluate,
    length_histogram,
    select_model,
)
from stats.diagnostics import diagnose, threshold_table
from utils import paths
from utils.config import load_config
from utils.errors import CapguardError, ConfigError, MissingArtifactError
from utils.log import get_logger
from utils.misc import write_json, write_manifest
from utils.plots import plot_decision, plot_interval_lengths, plot_trace

logger = logging.getLogger("capguard")

COMMANDS = ("gen-roads", "gen-data", "diagnose", "train", "calibrate", "evaluate", "select", "gate", "report")


class ArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser():
    common = ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", type=str, default=None)
    common.add_argument("--workers", type=int, default=None)
    common.add_argument("--alpha", type=float, default=None)
    common.add_argument("--grouping", type=str, default=None)
    common.add_argument("--select-on", dest="select_on", choices=["holdout", "test"], default=None)

    parser = ArgumentParser(prog="capguard.py")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name, parents=[common])
        if name == "gate":
            cmd.add_argument("--accels", type=str, default=None)
            cmd.add_argument("--degradation", choices=sorted(DEGRADATION_PRESETS), default=None)
            cmd.add_argument("--segment", type=int, default=None)
            cmd.add_argument("--v-q", dest="v_q", type=float, default=None)
            cmd.add_argument("--simulate", action="store_true")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = {
        "seed": args.seed,
        "out": args.out,
        "workers": args.workers,
        "alpha": args.alpha,
        "grouping": args.grouping,
        "select_on": args.select_on,
    }
    try:
        cfg = load_config(args.config, overrides)
        os.makedirs(cfg.out, exist_ok=True)
        get_logger(osp.join(cfg.out, f"{args.command.replace('-', '_')}.log"), mode="w")
        for key, val in overrides.items():
            if val is not None:
                logger.info(f"Overriding argument {key}: {val}")

        if args.command == "gen-roads":
            gen_roads(cfg)
        elif args.command == "gen-data":
            gen_data(cfg)
        elif args.command == "diagnose":
            run_diagnose(cfg)
        elif args.command == "train":
            run_train(cfg)
        elif args.command == "calibrate":
            run_calibrate(cfg)
        elif args.command == "evaluate":
            run_evaluate(cfg)
        elif args.command == "select":
            run_select(cfg)
        elif args.command == "gate":
            run_gate(args, cfg)
        elif args.command == "report":
            run_report(cfg)
    except CapguardError as exc:
        logger.error(str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


def _out(cfg, name):
    return osp.join(cfg.out, name)


def _require(cfg, name, command):
    path = _out(cfg, name)
    if not osp.isfile(path):
        raise MissingArtifactError(path, command)
    return path


def _write_csv(frame, path):
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def _manifest(cfg, command, inputs, outputs):
    # output location and worker count do not change any artifact
    config = {k: v for k, v in cfg.to_dict().items() if k not in ("out", "workers")}
    write_manifest(_out(cfg, paths.manifest_name(command)), command, config, inputs, outputs, cfg.seed)


def _load_segments(cfg):
    path = _require(cfg, paths.ROADS, "gen-roads")
    with open(path, "r") as f:
        return segments_from_json(f.read()), path


def _load_dataset(cfg):
    csv_path = _require(cfg, paths.DATASET, "gen-data")
    prov_path = _require(cfg, paths.PROVENANCE, "gen-data")
    return Dataset.load(csv_path, prov_path), [csv_path, prov_path]


def _load_splits(cfg):
    ds, inputs = _load_dataset(cfg)
    path = _require(cfg, paths.SPLITS, "train")
    with open(path, "r") as f:
        ids = json.load(f)
    return {name: ds.subset(ids[name]) for name in ("train", "cal", "test")}, inputs + [path]


def _load_model(cfg):
    path = _require(cfg, paths.MODEL, "train")
    model = load(path)
    return model, tuple(model.feature_names or cfg.feature_names), path


def _load_calibration(cfg):
    path = _require(cfg, paths.CALIBRATION, "calibrate")
    return CalibrationResult.load(path), path


def gen_roads(cfg):
    segments = generate_segments(cfg.scenarios.n_segments, cfg.seed, cfg.roads)
    path = _out(cfg, paths.ROADS)
    with open(path, "w") as f:
        f.write(segments_to_json(segments))
    logger.info(f"wrote {len(segments)} segments to {path}")
    _manifest(cfg, "gen-roads", [], [path])


def gen_data(cfg):
    segments, roads_path = _load_segments(cfg)
    sc = cfg.scenarios
    scenarios = sample_scenarios(sc.n_segments, sc.n_maneuvers, sc.n_degradations, cfg.seed,
                                 segments=segments, config=sc)
    logger.info(f"simulating {len(scenarios)} scenarios with {cfg.workers} workers")
    checkpoint = _out(cfg, "gen_data.ckpt.jsonl")
    ds = generate_dataset(scenarios, workers=cfg.workers, checkpoint=checkpoint, progress=True)
    csv_path, prov_path = _out(cfg, paths.DATASET), _out(cfg, paths.PROVENANCE)
    ds.save(csv_path, prov_path)
    if osp.exists(checkpoint):
        os.remove(checkpoint)
    logger.info(f"wrote {len(ds)} samples ({len(ds.provenance['excluded'])} excluded) to {csv_path}")
    _manifest(cfg, "gen-data", [roads_path], [csv_path, prov_path])


def run_diagnose(cfg):
    ds, inputs = _load_dataset(cfg)
    report = diagnose(ds.X(cfg.feature_names), ds.y, cfg.feature_names, bins=cfg.bins, dummies=cfg.dummies)
    diag_path, thr_path = _out(cfg, paths.DIAGNOSTICS), _out(cfg, paths.THRESHOLDS)
    _write_csv(report.to_frame(), diag_path)
    _write_csv(threshold_table(ds.frame["k_abs_max"], ds.y, cfg.thresholds), thr_path)
    top = report.features[int(np.argmin(report.mrmr_rank))]
    logger.info(f"mRMR ({report.variant}) first pick: {top}")
    _manifest(cfg, "diagnose", inputs, [diag_path, thr_path])


def _fit(cfg, train_cfg, ds, tag=""):
    logger.info(f"training{tag} on {len(ds)} samples: hidden {train_cfg.hidden_widths}, lr {train_cfg.lr}")
    return train(ds.X(cfg.feature_names), ds.y, train_cfg, feature_names=cfg.feature_names, progress=True)


def run_train(cfg):
    ds, inputs = _load_dataset(cfg)
    sp = cfg.split
    train_ds, cal_ds, test_ds = split_dataset(ds, sp.n_cal, sp.n_test, sp.seed)
    splits_path = _out(cfg, paths.SPLITS)
    write_json(splits_path, {
        "seed": sp.seed,
        "train": train_ds.run_ids.tolist(),
        "cal": cal_ds.run_ids.tolist(),
        "test": test_ds.run_ids.tolist(),
    })
    model = _fit(cfg, cfg.train, train_ds)
    model_path, log_path = _out(cfg, paths.MODEL), _out(cfg, paths.TRAIN_LOG)
    save(model, model_path)
    write_train_log(model.history, log_path)
    logger.info(f"best epoch {model.metadata['best_epoch']}, val loss {model.metadata['final_val_loss']:.5f}")
    _manifest(cfg, "train", inputs, [splits_path, model_path, log_path])


def run_calibrate(cfg):
    splits, inputs = _load_splits(cfg)
    model, names, model_path = _load_model(cfg)
    cal = splits["cal"]
    calib = calibrate(model, cal.X(names), cal.y, cfg.alpha, cfg.grouping_spec, feature_names=names)
    path = _out(cfg, paths.CALIBRATION)
    calib.save(path)
    logger.info(f"{calib.mode} calibration offsets {calib.offsets} (counts {calib.counts})")
    _manifest(cfg, "calibrate", inputs + [model_path], [path])


def run_evaluate(cfg):
    splits, inputs = _load_splits(cfg)
    model, names, model_path = _load_model(cfg)
    calib, calib_path = _load_calibration(cfg)
    test = splits["test"]
    report, lengths = evaluate(model, calib, test.X(names), test.y, names, return_lengths=True)
    report_path, lengths_path = _out(cfg, paths.REPORT), _out(cfg, paths.LENGTHS)
    _write_csv(report.to_frame(), report_path)
    _write_csv(length_histogram({calib.mode: lengths}), lengths_path)
    logger.info(f"coverage {report.marginal:.4f} per group {report.per_group}, p90 length {report.p90:.4f}")
    _manifest(cfg, "evaluate", inputs + [model_path, calib_path], [report_path, lengths_path])


def run_select(cfg):
    splits, inputs = _load_splits(cfg)
    names = cfg.feature_names
    fit_ds, cal = splits["train"], splits["cal"]
    if cfg.select_on == "holdout":
        fit_ds, sel, _ = split_dataset(fit_ds, cfg.split.n_holdout, 0, cfg.split.seed + 1)
    else:
        logger.warning("selecting on the test set; reported test coverage of the winner is optimistic")
        sel = splits["test"]

    rows, models, reports, calibs = [], [], [], []
    for i, point in enumerate(cfg.grid):
        train_cfg = replace(cfg.train, **point)
        model = _fit(cfg, train_cfg, fit_ds, tag=f" grid point {i}")
        calib = calibrate(model, cal.X(names), cal.y, cfg.alpha, cfg.grouping_spec, feature_names=names)
        report = evaluate(model, calib, sel.X(names), sel.y, names)
        row = {"index": i, "hidden_widths": "x".join(map(str, train_cfg.hidden_widths)), "lr": train_cfg.lr,
               "coverage": report.marginal, "p90_length": report.p90, "mean_length": report.mean_length}
        row.update({f"coverage_g{g}": c for g, c in report.per_group.items()})
        rows.append(row)
        models.append(model)
        reports.append(report)
        calibs.append(calib)

    best, conformant = select_model(reports, cfg.target_coverage, cfg.tolerance)
    frame = pd.DataFrame(rows)
    frame["conformant"] = (frame["coverage"] - cfg.target_coverage).abs() <= cfg.tolerance
    frame["selected"] = frame["index"] == best
    sel_path, model_path, calib_path = _out(cfg, paths.SELECTION), _out(cfg, paths.MODEL), _out(cfg, paths.CALIBRATION)
    log_path = _out(cfg, paths.TRAIN_LOG)
    _write_csv(frame, sel_path)
    save(models[best], model_path)
    write_train_log(models[best].history, log_path)
    calibs[best].save(calib_path)
    logger.info(f"selected grid point {best} (conformant: {conformant}) on the {cfg.select_on} set")
    _manifest(cfg, "select", inputs, [sel_path, model_path, log_path, calib_path])


def _parse_accels(text):
    try:
        accels = [float(a) for a in text.split(",") if a.strip()]
    except ValueError as exc:
        raise ConfigError("accels", f"cannot parse {text!r}") from exc
    if not accels:
        raise ConfigError("accels", "at least one candidate")
    return accels


def run_gate(args, cfg):
    segments, roads_path = _load_segments(cfg)
    model, names, model_path = _load_model(cfg)
    calib, calib_path = _load_calibration(cfg)
    gc = cfg.gate
    seg_index = args.segment if args.segment is not None else gc.segment
    if not 0 <= seg_index < len(segments):
        raise ConfigError("segment", f"index {seg_index} outside [0, {len(segments)})")
    seg = segments[seg_index]
    accels = _parse_accels(args.accels) if args.accels else list(gc.accels)
    preset = args.degradation or gc.degradation
    v_q = args.v_q if args.v_q is not None else gc.v_q

    predictor = CalibratedPredictor(model, calib, names)
    decision = evaluate_candidates(seg, v_q, accels, DEGRADATION_PRESETS[preset], predictor,
                                   maneuver=ManeuverType(gc.maneuver), direction=gc.direction)
    if args.simulate:
        decision = measure_candidates(seg, decision, DEGRADATION_PRESETS[preset])
    table_path, svg_path = _out(cfg, paths.DECISION), _out(cfg, paths.DECISION_SVG)
    _write_csv(decision.to_frame(measured=args.simulate), table_path)
    plot_decision(seg, decision, svg_path)
    chosen = "MRM" if decision.is_mrm else f"a_lat_max={decision.chosen.a_lat_max:g}"
    logger.info(f"segment {seg.id}, {preset}: clearance {decision.clearance:.3f} m, chosen {chosen}")
    outputs = [table_path, svg_path]
    if args.simulate:
        trace = trace_chosen(seg, decision, DEGRADATION_PRESETS[preset], v_q)
        if trace is not None:
            trace_path, trace_svg = _out(cfg, paths.TRACE), _out(cfg, paths.TRACE_SVG)
            _write_csv(trace, trace_path)
            plot_trace(trace, trace_svg)
            outputs += [trace_path, trace_svg]
    _manifest(cfg, "gate", [roads_path, model_path, calib_path], outputs)


def run_report(cfg):
    splits, inputs = _load_splits(cfg)
    model, names, model_path = _load_model(cfg)
    cal, test = splits["cal"], splits["test"]
    spec = cfg.grouping_spec
    frames, lengths = {}, {}
    for label, mode in (("naive", "marginal"), ("equalized", None)):
        calib = calibrate(model, cal.X(names), cal.y, cfg.alpha, spec, mode=mode, feature_names=names)
        report, lengths[label] = evaluate(model, calib, test.X(names), test.y, names, return_lengths=True)
        frames[label] = report.to_frame().rename(columns={"value": label})
        logger.info(f"{label}: coverage {report.marginal:.4f}, per group {report.per_group}")
    comparison = frames["naive"].merge(frames["equalized"], on=["metric", "group"], how="outer", sort=False)
    cmp_path, lengths_path, svg_path = _out(cfg, paths.COMPARISON), _out(cfg, paths.LENGTHS), _out(cfg, paths.LENGTHS_SVG)
    _write_csv(comparison, cmp_path)
    _write_csv(length_histogram(lengths), lengths_path)
    plot_interval_lengths(lengths, svg_path)
    _manifest(cfg, "report", inputs + [model_path], [cmp_path, lengths_path, svg_path])


if __name__ == "__main__":
    sys.exit(main())
