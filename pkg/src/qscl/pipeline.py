"""End-to-end runs: load, split, select APs, preprocess, pretrain, fine-tune, evaluate.

Every artifact that should be reproducible (checkpoints, reports) depends only
on the config and seed; wall-clock figures go to the run manifest.
"""

from __future__ import annotations

import csv
import json
import os
import platform
import time
from dataclasses import dataclass, replace

import numpy as np

from . import __version__
from .config import RunConfig
from .data import (RssiDataset, RssiPreprocessor, Schema, Split, load_csv, preprocess, select_aps, split,
                   synthetic_dataset)
from .encoders import Network
from .evaluation import EvalReport, evaluate_predictions
from .training import PositionScaler, finetune, predict, pretrain, write_history_csv

PRETRAINED = "pretrained.ckpt"
MODEL = "model.ckpt"


def load_dataset(cfg: RunConfig) -> RssiDataset:
    d = cfg.dataset
    if d.csv is not None:
        ds = load_csv(d.csv, Schema.from_file(d.schema))
    else:
        ds = synthetic_dataset(d.synthetic_samples, d.synthetic_aps, d.synthetic_buildings,
                               d.synthetic_floors, seed=d.synthetic_seed)
    if d.max_rows is not None and d.max_rows < len(ds):
        ds = ds.subset(np.arange(d.max_rows))
    return ds


@dataclass
class Prepared:
    """Model-ready matrix plus everything needed to rebuild it at inference time."""

    dataset: RssiDataset
    matrix: np.ndarray
    split: Split
    kept_aps: np.ndarray
    preprocessor: RssiPreprocessor

    def meta(self) -> dict:
        m = self.dataset.meta
        return {
            "kept_aps": self.kept_aps.tolist(),
            "ap_names": [m.ap_names[i] for i in self.kept_aps] if m.ap_names else [],
            "preprocessor": self.preprocessor.state(),
            "floor_labels": [_jsonable(v) for v in m.floor_labels],
            "building_labels": [_jsonable(v) for v in m.building_labels],
        }


def _jsonable(v):
    return v.item() if isinstance(v, np.generic) else v


def prepare(cfg: RunConfig, dataset: RssiDataset, use_split: bool = True) -> Prepared:
    """Split rows, then fit AP selection and scaling on the training pool only.

    With ``use_split=False`` every row is treated as pool (augmentation only
    needs the scaled matrix).
    """
    if use_split:
        sp = split(dataset, cfg.dataset.labeled_fraction, cfg.seed)
    else:
        every = np.arange(len(dataset))
        sp = Split(pool=every, labeled=every[:0], test=every[:0])
    _, kept = select_aps(dataset.rssi, cfg.selection, fit_rows=sp.pool)
    meta = replace(dataset.meta, n_aps=int(kept.size))
    reduced = RssiDataset(dataset.rssi[:, kept], dataset.positions, dataset.floors, dataset.buildings, meta,
                          dataset.split)
    matrix, _, pre = preprocess(reduced, sp.pool, floor_dbm=cfg.dataset.floor_dbm)
    return Prepared(dataset, matrix, sp, kept, pre)


def build_network(cfg: RunConfig, prep: Prepared) -> Network:
    m = prep.dataset.meta
    return Network(cfg.encoder_config(prep.matrix.shape[1], m.n_floors, m.n_buildings))


def run_pretrain(cfg: RunConfig, prep: Prepared, net: Network | None = None) -> tuple[Network, list[dict]]:
    net = net or build_network(cfg, prep)
    history = pretrain(prep.matrix[prep.split.pool], net, cfg.train_config())
    return net, history


def run_finetune(cfg: RunConfig, prep: Prepared, net: Network) -> tuple[list[dict], PositionScaler]:
    ds, idx = prep.dataset, prep.split.labeled
    return finetune(prep.matrix[idx], ds.positions[idx], ds.floors[idx], ds.buildings[idx], net,
                    cfg.train_config(), cfg.loss)


def run_evaluate(cfg: RunConfig, prep: Prepared, net: Network, scaler: PositionScaler) -> EvalReport:
    ds, idx = prep.dataset, prep.split.test
    pos, fl, bl = predict(net, prep.matrix[idx], scaler)
    return evaluate_predictions(pos, fl, bl, ds.positions[idx], ds.floors[idx], ds.buildings[idx],
                                config=cfg.to_flat(), seed=cfg.seed)


def run_experiment(cfg: RunConfig, pretrain_encoder: bool = True) -> tuple[EvalReport, Network, PositionScaler]:
    """Full pipeline in memory; ``pretrain_encoder=False`` fine-tunes from random init."""
    prep = prepare(cfg, load_dataset(cfg))
    net = build_network(cfg, prep)
    if pretrain_encoder:
        run_pretrain(cfg, prep, net)
    _, scaler = run_finetune(cfg, prep, net)
    return run_evaluate(cfg, prep, net, scaler), net, scaler


# -- artifacts ---------------------------------------------------------------

def save_model(path, net: Network, prep: Prepared, scaler: PositionScaler | None = None) -> None:
    meta = prep.meta()
    if scaler is not None:
        meta["position_scaler"] = scaler.to_dict()
    net.save(path, meta)


def predictions_from_checkpoint(path, cfg: RunConfig):
    """Predict on the configured test rows with a fine-tuned checkpoint.

    The checkpoint's own AP list and preprocessor are applied, so evaluation
    does not refit anything.
    """
    net, meta = Network.load(path)
    if "position_scaler" not in meta:
        raise ValueError(f"{path} has no position scaler; fine-tune before evaluating")
    ds = load_dataset(cfg)
    sp = split(ds, cfg.dataset.labeled_fraction, cfg.seed)
    kept = np.asarray(meta["kept_aps"], dtype=np.intp)
    if kept.size and kept.max() >= ds.rssi.shape[1]:
        raise ValueError("checkpoint references AP columns the dataset does not have")
    matrix = RssiPreprocessor.from_state(meta["preprocessor"]).transform(ds.rssi[:, kept])
    pos, fl, bl = predict(net, matrix[sp.test], PositionScaler.from_dict(meta["position_scaler"]))
    truth = (ds.positions[sp.test], ds.floors[sp.test], ds.buildings[sp.test])
    return (pos, fl, bl), truth


PREDICTION_COLUMNS = ("pred_x", "pred_y", "pred_floor", "pred_building",
                      "true_x", "true_y", "true_floor", "true_building")


def write_predictions_csv(path, pred, truth) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PREDICTION_COLUMNS)
        for i in range(pred[0].shape[0]):
            w.writerow([repr(float(pred[0][i, 0])), repr(float(pred[0][i, 1])), int(pred[1][i]), int(pred[2][i]),
                        repr(float(truth[0][i, 0])), repr(float(truth[0][i, 1])), int(truth[1][i]),
                        int(truth[2][i])])


def read_predictions_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(PREDICTION_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: no prediction rows")
    col = lambda k, t=float: np.array([t(r[k]) for r in rows])  # noqa: E731
    pred = (np.column_stack([col("pred_x"), col("pred_y")]), col("pred_floor", int), col("pred_building", int))
    truth = (np.column_stack([col("true_x"), col("true_y")]), col("true_floor", int), col("true_building", int))
    return pred, truth


def write_manifest(out_dir, command: str, cfg: RunConfig, started: float, extra: dict | None = None) -> str:
    import numpy
    import sklearn

    manifest = {
        "command": command,
        "config": cfg.to_flat(),
        "seed": cfg.seed,
        "versions": {"qscl": __version__, "python": platform.python_version(),
                     "numpy": numpy.__version__, "scikit-learn": sklearn.__version__},
        "wall_clock_seconds": time.time() - started,
        **(extra or {}),
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return path


def write_history(out_dir, name: str, history: list[dict]) -> str:
    path = os.path.join(out_dir, name)
    write_history_csv(path, history)
    return path
