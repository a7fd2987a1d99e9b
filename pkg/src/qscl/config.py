"""Run configuration: one YAML file of flat dotted keys, overridable from the command line."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Mapping

import yaml

from .augmentation import AugmentConfig
from .data import ApSelection
from .encoders import EncoderConfig
from .losses import LossConfig
from .quantum import NoiseSpec
from .training import TrainConfig


class RunConfigError(ValueError):
    pass


# Encoder fields fixed by the data rather than by the user.
DERIVED_ENCODER_FIELDS = ("input_dim", "n_floors", "n_buildings", "seed")


@dataclass(frozen=True)
class DatasetConfig:
    """Where fingerprints come from: a CSV plus schema, or the synthetic generator."""

    csv: str | None = None
    schema: str | None = None
    synthetic_samples: int = 200
    synthetic_aps: int = 16
    synthetic_buildings: int = 2
    synthetic_floors: int = 3
    synthetic_seed: int = 0
    floor_dbm: float = -90.0
    labeled_fraction: float = 0.1
    max_rows: int | None = None

    def __post_init__(self):
        if (self.csv is None) != (self.schema is None):
            raise RunConfigError("dataset.csv and dataset.schema must be given together")
        if not 0 < self.labeled_fraction <= 1:
            raise RunConfigError(f"dataset.labeled_fraction must be in (0, 1], got {self.labeled_fraction}")


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    encoder: dict = field(default_factory=dict)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    selection: ApSelection = field(default_factory=ApSelection)
    sweep: dict = field(default_factory=dict)
    out: str = "runs/default"
    seed: int = 0

    def encoder_config(self, input_dim: int, n_floors: int, n_buildings: int) -> EncoderConfig:
        return EncoderConfig(input_dim=input_dim, n_floors=n_floors, n_buildings=n_buildings,
                             seed=self.seed, **self.encoder)

    def train_config(self) -> TrainConfig:
        """Training settings with the run seed and augmentation folded in."""
        return replace(self.train, seed=self.seed, tau=self.loss.tau,
                       augment=replace(self.augment, seed=self.seed))

    def to_flat(self) -> dict:
        """Dotted-key view that :func:`from_flat` accepts back."""
        d = asdict(self)
        for k in ("augment", "seed", "tau"):
            d["train"].pop(k)
        return flatten(d)


def flatten(d: Mapping, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, Mapping) and v and key != "sweep":
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _nest(flat: Mapping[str, Any]) -> dict:
    nested: dict = {}
    for key, value in flat.items():
        if not isinstance(key, str) or not key:
            raise RunConfigError(f"config keys must be non-empty strings, got {key!r}")
        head, _, rest = key.partition(".")
        if not rest:
            nested[head] = value
            continue
        section = nested.setdefault(head, {})
        if not isinstance(section, dict):
            raise RunConfigError(f"{head!r} is both a value and a section")
        # noise.p_depolarizing and friends nest one level deeper
        sub, _, leaf = rest.partition(".")
        if leaf:
            section.setdefault(sub, {})[leaf] = value
        else:
            section[rest] = value
    return nested


def _build(cls, values: Mapping, section: str):
    names = {f.name for f in fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise RunConfigError(f"unknown {section} keys: {sorted(f'{section}.{k}' for k in unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise RunConfigError(f"invalid {section} config: {exc}") from exc


def from_flat(flat: Mapping[str, Any]) -> RunConfig:
    """Build a validated RunConfig from ``{"augment.n_shots": 10, ...}``."""
    nested = _nest(flat)
    sections = {"dataset", "augment", "encoder", "loss", "train", "selection", "sweep", "out", "seed"}
    unknown = set(nested) - sections
    if unknown:
        raise RunConfigError(f"unknown config keys: {sorted(unknown)}")

    aug = dict(nested.get("augment", {}))
    if "noise" in aug:
        aug["noise"] = _build(NoiseSpec, aug["noise"], "augment.noise")
    enc = dict(nested.get("encoder", {}))
    bad = (set(enc) & set(DERIVED_ENCODER_FIELDS)) | (set(enc) - {f.name for f in fields(EncoderConfig)})
    if bad:
        raise RunConfigError(f"encoder keys not settable from config: {sorted(bad)}")
    train = dict(nested.get("train", {}))
    if "augment" in train or "seed" in train or "tau" in train:
        raise RunConfigError("set augmentation, seed and temperature via augment.*, seed and loss.tau")
    sweep = nested.get("sweep", {})
    if not isinstance(sweep, Mapping) or any(not isinstance(v, list) for v in sweep.values()):
        raise RunConfigError("sweep entries must map a dotted key to a list of values")

    cfg = RunConfig(
        dataset=_build(DatasetConfig, nested.get("dataset", {}), "dataset"),
        augment=_build(AugmentConfig, aug, "augment"),
        encoder=enc,
        loss=_build(LossConfig, nested.get("loss", {}), "loss"),
        train=_build(TrainConfig, train, "train"),
        selection=_build(ApSelection, nested.get("selection", {}), "selection"),
        sweep=dict(sweep),
        out=str(nested.get("out", "runs/default")),
        seed=int(nested.get("seed", 0)),
    )
    # surface encoder errors now rather than after data loading
    try:
        cfg.encoder_config(1, 1, 1)
    except ValueError as exc:
        raise RunConfigError(f"invalid encoder config: {exc}") from exc
    return cfg


def parse_override(text: str) -> tuple[str, Any]:
    """``"train.epochs=5"`` -> ``("train.epochs", 5)``; values are parsed as YAML scalars."""
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise RunConfigError(f"override must look like key=value, got {text!r}")
    return key.strip(), yaml.safe_load(raw)


def load(path=None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    flat: dict = {}
    if path is not None:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, Mapping):
            raise RunConfigError(f"{path}: top level must be a mapping")
        flat.update(flatten(data))
        base = os.path.dirname(os.path.abspath(path))
        # relative data paths are relative to the config file
        for key in ("dataset.csv", "dataset.schema"):
            if isinstance(flat.get(key), str) and not os.path.isabs(flat[key]):
                flat[key] = os.path.join(base, flat[key])
    flat.update(overrides or {})
    return from_flat(flat)
