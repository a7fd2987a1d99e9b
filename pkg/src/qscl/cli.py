"""Command line for the augmentation, training and evaluation pipeline."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import config as config_mod
from .augmentation import augment_batch, stack_views, write_audit_csv
from .data import save_matrix
from .encoders import Network
from .evaluation import evaluate_predictions, sweep
from .pipeline import (MODEL, PRETRAINED, build_network, load_dataset, predictions_from_checkpoint, prepare,
                       read_predictions_csv, run_evaluate, run_experiment, run_finetune, run_pretrain,
                       save_model, write_history, write_manifest, write_predictions_csv)
from .theorems import check_theorems

log = logging.getLogger("qscl")


class CommandFailed(RuntimeError):
    """Work finished but the outcome is a failure (e.g. a theorem check or sweep cell failed)."""


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_augment(cfg, args) -> dict:
    prep = prepare(cfg, load_dataset(cfg), use_split=False)
    aug = replace(cfg.augment, seed=cfg.seed)
    pairs = augment_batch(prep.matrix, aug, key=(0,))
    strong, weak = stack_views(pairs)
    save_matrix(os.path.join(args.out, "strong.bin"), strong, {"view": "strong", **prep.meta()}, name="strong")
    save_matrix(os.path.join(args.out, "weak.bin"), weak, {"view": "weak", **prep.meta()}, name="weak")
    rows = write_audit_csv(os.path.join(args.out, "audit.csv"), pairs)
    max_delta = max(float(np.abs(p.per_ap_delta).max()) for p in pairs)
    return {"rows": int(strong.shape[0]), "aps": int(strong.shape[1]), "audit_rows": rows,
            "max_abs_delta": max_delta}


def cmd_pretrain(cfg, args) -> dict:
    prep = prepare(cfg, load_dataset(cfg))
    net, history = run_pretrain(cfg, prep)
    write_history(args.out, "pretrain_history.csv", history)
    save_model(os.path.join(args.out, PRETRAINED), net, prep)
    return {"epochs": len(history), "final_L_STC": history[-1]["L_STC"]}


def cmd_finetune(cfg, args) -> dict:
    prep = prepare(cfg, load_dataset(cfg))
    net = build_network(cfg, prep)
    if args.checkpoint:
        pretrained, meta = Network.load(args.checkpoint)
        if meta.get("kept_aps") != prep.meta()["kept_aps"]:
            raise ValueError("checkpoint was trained on a different AP selection than this config produces")
        net.load_state_dict(pretrained.state_dict(), prefixes=("conv1.", "conv2.", "staa.", "proj."))
    history, scaler = run_finetune(cfg, prep, net)
    write_history(args.out, "finetune_history.csv", history)
    save_model(os.path.join(args.out, MODEL), net, prep, scaler)
    report = run_evaluate(cfg, prep, net, scaler)
    report.write(os.path.join(args.out, "report.json"), os.path.join(args.out, "cdf.csv"))
    return {"epochs": len(history), "mean_location_error": report.mean_location_error}


def cmd_evaluate(cfg, args) -> dict:
    if bool(args.checkpoint) == bool(args.predictions):
        raise ValueError("evaluate needs exactly one of --checkpoint or --predictions")
    if args.checkpoint:
        pred, truth = predictions_from_checkpoint(args.checkpoint, cfg)
        write_predictions_csv(os.path.join(args.out, "predictions.csv"), pred, truth)
    else:
        pred, truth = read_predictions_csv(args.predictions)
    report = evaluate_predictions(*pred, *truth, config=cfg.to_flat(), seed=cfg.seed)
    report.write(os.path.join(args.out, "report.json"), os.path.join(args.out, "cdf.csv"))
    return {"building_accuracy": report.building_accuracy, "floor_accuracy": report.floor_accuracy,
            "mean_location_error": report.mean_location_error}


def cmd_sweep(cfg, args) -> dict:
    if not cfg.sweep:
        raise ValueError("no sweep grid configured; set sweep: {dotted.key: [values, ...]}")
    base = cfg.to_flat()

    def run_cell(coords, seed):
        cell = config_mod.from_flat({**base, **coords, "seed": seed, "sweep": {}})
        return run_experiment(cell, pretrain_encoder=not args.no_pretrain)[0]

    result = sweep(cfg.sweep, run_cell, base_seed=cfg.seed)
    result.write_csv(os.path.join(args.out, "sweep.csv"))
    with open(os.path.join(args.out, "sweep.json"), "w") as fh:
        fh.write(result.to_json() + "\n")
    summary = {"cells": len(result.rows), "failed": len(result.failed)}
    if result.failed:
        raise CommandFailed(json.dumps({"error": "SweepCellFailed", **summary}))
    return summary


def cmd_check_theorems(cfg, args) -> dict:
    report = check_theorems(cfg.augment, seed=cfg.seed)
    _write_json(os.path.join(args.out, "theorems.json"), report)
    print(json.dumps({name: c["status"] for name, c in report["checks"].items()}, sort_keys=True))
    if not report["ok"]:
        failed = [n for n, c in report["checks"].items() if c["status"] == "fail"]
        raise CommandFailed(json.dumps({"error": "TheoremCheckFailed", "failed": failed}))
    return {"ok": True}


COMMANDS = {
    "augment": cmd_augment,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "check-theorems": cmd_check_theorems,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file of dotted config keys")
    common.add_argument("--seed", type=int, help="run seed (overrides the config)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key; repeatable")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="qscl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("augment", parents=[common], help="write strong/weak views and the per-AP audit")
    sub.add_parser("pretrain", parents=[common], help="contrastive pretraining on the unlabeled pool")
    p = sub.add_parser("finetune", parents=[common], help="supervised fine-tuning, then test-set report")
    p.add_argument("--checkpoint", help="pretrained checkpoint; omit to start from random init")
    p = sub.add_parser("evaluate", parents=[common], help="score a checkpoint or a predictions CSV")
    p.add_argument("--checkpoint")
    p.add_argument("--predictions", help="CSV with pred_*/true_* columns")
    p = sub.add_parser("sweep", parents=[common], help="grid over config keys, one full run per cell")
    p.add_argument("--no-pretrain", action="store_true", help="fine-tune every cell from random init")
    sub.add_parser("check-theorems", parents=[common], help="numerical checks of the augmentation guarantees")
    return parser


def resolve_config(args):
    overrides = dict(config_mod.parse_override(s) for s in args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    return config_mod.load(args.config, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.time()
    try:
        cfg = resolve_config(args)
        args.out = cfg.out
        os.makedirs(args.out, exist_ok=True)
        summary = COMMANDS[args.command](cfg, args)
    except CommandFailed as exc:
        print(str(exc), file=sys.stderr)
        if "cfg" in locals():
            write_manifest(args.out, args.command, cfg, started, {"status": "failed"})
        return 1
    except Exception as exc:  # noqa: BLE001 - every error becomes one JSON line
        log.debug("command failed", exc_info=True)
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "command": args.command}),
              file=sys.stderr)
        return 2
    write_manifest(args.out, args.command, cfg, started, {"status": "ok", "summary": summary})
    return 0


if __name__ == "__main__":
    sys.exit(main())
