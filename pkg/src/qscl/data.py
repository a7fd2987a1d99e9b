"""Loading, preprocessing, AP selection and splitting of RSSI fingerprint tables."""

from __future__ import annotations

import csv
import json
import math
import os
import warnings
from dataclasses import asdict, dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np
import yaml
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .autodiff import checkpoint

EARTH_RADIUS_M = 6_371_000.0


class SchemaError(ValueError):
    pass


class CsvFormatError(ValueError):
    pass


class SelectionError(ValueError):
    pass


@dataclass(frozen=True)
class Schema:
    """Column mapping for a fingerprint CSV.

    Either ``rssi_columns`` or ``rssi_prefix`` names the AP columns.
    ``split_column`` optionally marks rows as ``train_value`` / ``test_value``.
    """

    x_column: str
    y_column: str
    floor_column: str
    building_column: str | None = None
    rssi_columns: tuple[str, ...] = ()
    rssi_prefix: str | None = None
    missing_sentinel: float = 100.0
    coordinate_units: str = "meters"
    project_to_meters: bool = False
    split_column: str | None = None
    train_value: str = "train"
    test_value: str = "test"

    def __post_init__(self):
        if not self.rssi_columns and not self.rssi_prefix:
            raise SchemaError("schema must give rssi_columns or rssi_prefix")
        if self.coordinate_units not in ("meters", "lonlat"):
            raise SchemaError(f"coordinate_units must be 'meters' or 'lonlat', got {self.coordinate_units!r}")
        object.__setattr__(self, "rssi_columns", tuple(self.rssi_columns))

    @classmethod
    def from_mapping(cls, d: Mapping) -> "Schema":
        allowed = set(cls.__dataclass_fields__)
        unknown = set(d) - allowed
        if unknown:
            raise SchemaError(f"unknown schema keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "Schema":
        with open(path) as fh:
            return cls.from_mapping(yaml.safe_load(fh) or {})


@dataclass
class DatasetMeta:
    n_aps: int
    n_floors: int
    n_buildings: int
    missing_sentinel: float
    coordinate_units: str
    floor_labels: list = field(default_factory=list)
    building_labels: list = field(default_factory=list)
    ap_names: list = field(default_factory=list)
    rssi_min: float | None = None
    rssi_max: float | None = None

    def __post_init__(self):
        if self.n_aps < 1:
            raise SchemaError("a dataset needs at least one AP column")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RssiRecord:
    rssi: np.ndarray
    position: tuple[float, float]
    floor_id: int
    building_id: int


@dataclass
class RssiDataset:
    """Columnar fingerprint table. Missing readings are NaN in ``rssi``."""

    rssi: np.ndarray
    positions: np.ndarray
    floors: np.ndarray
    buildings: np.ndarray
    meta: DatasetMeta
    split: np.ndarray | None = None

    def __len__(self) -> int:
        return self.rssi.shape[0]

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.rssi)

    @property
    def records(self) -> Iterator[RssiRecord]:
        for i in range(len(self)):
            yield RssiRecord(self.rssi[i], tuple(self.positions[i]), int(self.floors[i]),
                             int(self.buildings[i]))

    def subset(self, idx) -> "RssiDataset":
        idx = np.asarray(idx, dtype=np.intp)
        return RssiDataset(self.rssi[idx], self.positions[idx], self.floors[idx], self.buildings[idx],
                           self.meta, None if self.split is None else self.split[idx])

    def targets(self) -> np.ndarray:
        """(N, 4) array: x, y, floor index, building index."""
        return np.column_stack([self.positions, self.floors, self.buildings]).astype(float)


def _parse_float(raw: str, row: int, column: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise CsvFormatError(f"row {row}, column {column!r}: cannot parse {raw!r} as a number") from None
    if not math.isfinite(value):
        raise CsvFormatError(f"row {row}, column {column!r}: non-finite value {raw!r}")
    return value


def project_lonlat(lon: np.ndarray, lat: np.ndarray) -> np.ndarray:
    """Local equirectangular projection to meters around the mean coordinate."""
    lon0, lat0 = np.radians(lon.mean()), np.radians(lat.mean())
    x = EARTH_RADIUS_M * (np.radians(lon) - lon0) * np.cos(lat0)
    y = EARTH_RADIUS_M * (np.radians(lat) - lat0)
    return np.column_stack([x, y])


def load_csv(path, schema: Schema) -> RssiDataset:
    """Parse a header-row CSV according to ``schema``.

    Row numbers in errors are 1-based data rows (the header is row 0).
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        col = {name: i for i, name in enumerate(header)}
        ap_names = list(schema.rssi_columns) or [h for h in header if h.startswith(schema.rssi_prefix)]
        if not ap_names:
            raise SchemaError(f"no columns start with prefix {schema.rssi_prefix!r}")
        needed = [*ap_names, schema.x_column, schema.y_column, schema.floor_column]
        for opt in (schema.building_column, schema.split_column):
            if opt:
                needed.append(opt)
        unknown = [n for n in needed if n not in col]
        if unknown:
            raise SchemaError(f"columns not found in CSV header: {unknown}")
        ap_idx = [col[n] for n in ap_names]
        rssi, pos, floors, buildings, split = [], [], [], [], []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise CsvFormatError(f"row {row_no}: expected {len(header)} fields, got {len(row)}")
            values = [_parse_float(row[i], row_no, header[i]) for i in ap_idx]
            rssi.append([np.nan if v == schema.missing_sentinel else v for v in values])
            pos.append([_parse_float(row[col[schema.x_column]], row_no, schema.x_column),
                        _parse_float(row[col[schema.y_column]], row_no, schema.y_column)])
            floors.append(_parse_float(row[col[schema.floor_column]], row_no, schema.floor_column))
            if schema.building_column:
                buildings.append(_parse_float(row[col[schema.building_column]], row_no,
                                              schema.building_column))
            else:
                buildings.append(0.0)
            if schema.split_column:
                tag = row[col[schema.split_column]].strip()
                if tag not in (schema.train_value, schema.test_value):
                    raise CsvFormatError(f"row {row_no}, column {schema.split_column!r}: "
                                         f"unknown split tag {tag!r}")
                split.append(tag == schema.test_value)
    if not rssi:
        raise CsvFormatError(f"{path}: no data rows")
    rssi_arr = np.array(rssi, dtype=float)
    positions = np.array(pos, dtype=float)
    if schema.coordinate_units == "lonlat" and schema.project_to_meters:
        positions = project_lonlat(positions[:, 0], positions[:, 1])
    floor_labels, floor_idx = np.unique(np.array(floors), return_inverse=True)
    building_labels, building_idx = np.unique(np.array(buildings), return_inverse=True)
    observed = rssi_arr[~np.isnan(rssi_arr)]
    meta = DatasetMeta(
        n_aps=len(ap_names), n_floors=len(floor_labels), n_buildings=len(building_labels),
        missing_sentinel=schema.missing_sentinel,
        coordinate_units="meters" if schema.project_to_meters else schema.coordinate_units,
        floor_labels=[_as_label(v) for v in floor_labels],
        building_labels=[_as_label(v) for v in building_labels],
        ap_names=ap_names,
        rssi_min=float(observed.min()) if observed.size else None,
        rssi_max=float(observed.max()) if observed.size else None,
    )
    return RssiDataset(rssi_arr, positions, floor_idx.astype(np.intp), building_idx.astype(np.intp),
                       meta, np.array(split, dtype=bool) if schema.split_column else None)


def _as_label(v: float):
    return int(v) if float(v).is_integer() else float(v)


# -- preprocessing -----------------------------------------------------------

class RssiPreprocessor(TransformerMixin, BaseEstimator):
    """Weak-signal filtering, mean imputation and min-max scaling to [0, 1].

    Readings below ``floor_dbm`` count as missing. Imputation means and
    scaling bounds come from the data passed to ``fit`` only; transformed
    values outside the fitted range are clipped.

    Parameters
    ----------
    floor_dbm : float, default=-90
    clip : bool, default=True
    """

    def __init__(self, floor_dbm=-90.0, clip=True):
        self.floor_dbm = floor_dbm
        self.clip = clip

    def _filter(self, X):
        X = check_array(X, dtype=np.float64, ensure_all_finite="allow-nan")
        with np.errstate(invalid="ignore"):
            return np.where(X < self.floor_dbm, np.nan, X)

    def fit(self, X, y=None):
        X = self._filter(X)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            means = np.nanmean(X, axis=0)
        empty = np.isnan(means)
        if empty.any():
            fallback = float(np.nanmean(X)) if np.isfinite(X).any() else float(self.floor_dbm)
            warnings.warn(f"{int(empty.sum())} AP column(s) have no usable training readings; "
                          f"imputing with global mean {fallback:.3f}", RuntimeWarning, stacklevel=2)
            means = np.where(empty, fallback, means)
        imputed = np.where(np.isnan(X), means, X)
        self.impute_values_ = means
        self.data_min_ = imputed.min(axis=0)
        self.data_max_ = imputed.max(axis=0)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "impute_values_")
        X = self._filter(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        imputed = np.where(np.isnan(X), self.impute_values_, X)
        span = self.data_max_ - self.data_min_
        scaled = (imputed - self.data_min_) / np.where(span > 0, span, 1.0)
        scaled = np.where(span > 0, scaled, 0.0)
        return np.clip(scaled, 0.0, 1.0) if self.clip else scaled

    def state(self) -> dict:
        return {"impute_values": self.impute_values_.tolist(), "data_min": self.data_min_.tolist(),
                "data_max": self.data_max_.tolist(), "floor_dbm": self.floor_dbm}

    @classmethod
    def from_state(cls, state: Mapping) -> "RssiPreprocessor":
        pre = cls(floor_dbm=state["floor_dbm"])
        pre.impute_values_ = np.asarray(state["impute_values"], dtype=float)
        pre.data_min_ = np.asarray(state["data_min"], dtype=float)
        pre.data_max_ = np.asarray(state["data_max"], dtype=float)
        pre.n_features_in_ = pre.impute_values_.size
        return pre


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.intp)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


@dataclass
class Targets:
    positions: np.ndarray
    floors: np.ndarray
    buildings: np.ndarray
    floor_onehot: np.ndarray
    building_onehot: np.ndarray


def preprocess(dataset: RssiDataset, train_idx=None, floor_dbm: float = -90.0):
    """Fit the preprocessor on ``train_idx`` rows and transform the whole dataset.

    Returns ``(matrix, targets, preprocessor)``.
    """
    if len(dataset) == 0:
        raise ValueError("cannot preprocess an empty dataset")
    train_idx = np.arange(len(dataset)) if train_idx is None else np.asarray(train_idx)
    pre = RssiPreprocessor(floor_dbm=floor_dbm).fit(dataset.rssi[train_idx])
    matrix = pre.transform(dataset.rssi)
    targets = Targets(
        positions=dataset.positions.copy(), floors=dataset.floors.copy(),
        buildings=dataset.buildings.copy(),
        floor_onehot=one_hot(dataset.floors, dataset.meta.n_floors),
        building_onehot=one_hot(dataset.buildings, dataset.meta.n_buildings),
    )
    return matrix, targets, pre


# -- AP selection ------------------------------------------------------------

@dataclass(frozen=True)
class ApSelection:
    strategy: str = "ranked"
    keep_fraction: float = 1.0
    threshold_dbm: float = -90.0
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in ("ranked", "threshold", "random"):
            raise SelectionError(f"unknown AP selection strategy {self.strategy!r}")
        if not 0 < self.keep_fraction <= 1:
            raise SelectionError(f"keep_fraction must be in (0, 1], got {self.keep_fraction}")


class APSelector(TransformerMixin, BaseEstimator):
    """Keep a fraction of AP columns, scored on the training rows only.

    ``ranked`` orders APs by the variance of their observed readings (a
    stand-in for a learned selector), ``threshold`` by how often the AP is
    heard at or above ``threshold_dbm``, ``random`` draws a uniform subset.
    Fit on raw dBm readings with NaN for missing.
    """

    def __init__(self, strategy="ranked", keep_fraction=1.0, threshold_dbm=-90.0, seed=0):
        self.strategy = strategy
        self.keep_fraction = keep_fraction
        self.threshold_dbm = threshold_dbm
        self.seed = seed

    def fit(self, X, y=None):
        sel = ApSelection(self.strategy, self.keep_fraction, self.threshold_dbm, self.seed)
        X = check_array(X, dtype=np.float64, ensure_all_finite="allow-nan")
        n = X.shape[1]
        k = int(math.floor(sel.keep_fraction * n + 0.5))
        if k < 1:
            raise SelectionError(f"keep_fraction {sel.keep_fraction} keeps no AP out of {n}")
        if sel.strategy == "random":
            ranking = np.random.default_rng(sel.seed).permutation(n)
            self.scores_ = np.zeros(n)
        else:
            if sel.strategy == "ranked":
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    scores = np.nanvar(X, axis=0)
                scores = np.where(np.isnan(scores), 0.0, scores)
            else:
                with np.errstate(invalid="ignore"):
                    scores = (~np.isnan(X) & (X >= sel.threshold_dbm)).mean(axis=0)
            # stable: ties keep column order
            ranking = np.argsort(-scores, kind="stable")
            self.scores_ = scores
        self.ranking_ = ranking
        self.support_ = np.sort(ranking[:k])
        self.n_features_in_ = n
        if sel.strategy == "threshold":
            self.threshold_ = float(self.scores_[ranking[k - 1]])
        return self

    def transform(self, X):
        check_is_fitted(self, "support_")
        X = check_array(X, dtype=np.float64, ensure_all_finite="allow-nan")
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X[:, self.support_]


def select_aps(matrix, selection: ApSelection, fit_rows=None):
    """Return ``(matrix[:, kept], kept)``, scoring APs on ``fit_rows`` only."""
    matrix = np.asarray(matrix, dtype=float)
    rows = matrix if fit_rows is None else matrix[np.asarray(fit_rows)]
    selector = APSelector(selection.strategy, selection.keep_fraction, selection.threshold_dbm,
                          selection.seed).fit(rows)
    return selector.transform(matrix), selector.support_.copy()


# -- splitting ---------------------------------------------------------------

@dataclass(frozen=True)
class Split:
    """Row indices. ``pool`` is the full training partition, used without labels."""

    pool: np.ndarray
    labeled: np.ndarray
    test: np.ndarray


def split(n_or_dataset, labeled_fraction: float, seed: int, test_mask=None) -> Split:
    """Train/test partition plus a labeled subset of the training rows.

    The test rows come from ``test_mask`` (or the dataset's split column)
    when given, otherwise from a seeded 50/50 permutation.
    """
    if isinstance(n_or_dataset, RssiDataset):
        n = len(n_or_dataset)
        if test_mask is None:
            test_mask = n_or_dataset.split
    else:
        n = int(n_or_dataset)
    if not 0 < labeled_fraction <= 1:
        raise SelectionError(f"labeled_fraction must be in (0, 1], got {labeled_fraction}")
    rng = np.random.default_rng(seed)
    if test_mask is not None:
        test_mask = np.asarray(test_mask, dtype=bool)
        test, pool = np.flatnonzero(test_mask), np.flatnonzero(~test_mask)
    else:
        perm = rng.permutation(n)
        test, pool = np.sort(perm[: n // 2]), np.sort(perm[n // 2:])
    n_labeled = int(math.floor(labeled_fraction * pool.size + 0.5))
    if n_labeled < 1:
        raise SelectionError(f"labeled_fraction {labeled_fraction} of {pool.size} rows leaves no labels")
    labeled = np.sort(rng.choice(pool, size=n_labeled, replace=False))
    return Split(pool=pool, labeled=labeled, test=test)


# -- matrix cache ------------------------------------------------------------

def save_matrix(path, matrix: np.ndarray, meta: Mapping | None = None, name: str = "matrix") -> None:
    """Write a matrix in the tensor-archive format plus a ``.json`` meta sidecar."""
    checkpoint.save(path, {name: np.asarray(matrix, dtype=float)}, {"kind": name})
    with open(os.fspath(path) + ".json", "w") as fh:
        json.dump(dict(meta or {}), fh, indent=2, sort_keys=True)


def load_matrix(path, name: str = "matrix") -> tuple[np.ndarray, dict]:
    arrays, _ = checkpoint.load(path)
    sidecar = os.fspath(path) + ".json"
    meta = {}
    if os.path.exists(sidecar):
        with open(sidecar) as fh:
            meta = json.load(fh)
    return arrays[name], meta


def synthetic_dataset(n_samples: int = 200, n_aps: int = 16, n_buildings: int = 2, n_floors: int = 3,
                      seed: int = 0, area: float = 60.0, noise_db: float = 3.0,
                      missing_dbm: float = -100.0) -> RssiDataset:
    """Fingerprints from a log-distance path-loss model with planted geometry.

    APs sit at random positions in each building, one height per floor.
    Signals lose 6 dB per floor and 15 dB crossing into another building.
    Readings below ``missing_dbm`` are dropped to NaN, the way a scanner
    would fail to hear them.
    """
    rng = np.random.default_rng(seed)
    building_origin = np.column_stack([np.arange(n_buildings) * area * 1.5, np.zeros(n_buildings)])
    ap_building = rng.integers(0, n_buildings, n_aps)
    ap_xy = building_origin[ap_building] + rng.uniform(0, area, (n_aps, 2))
    ap_floor = rng.integers(0, n_floors, n_aps)
    buildings = rng.integers(0, n_buildings, n_samples)
    floors = rng.integers(0, n_floors, n_samples)
    xy = building_origin[buildings] + rng.uniform(0, area, (n_samples, 2))
    floor_height = 4.0
    dist = np.sqrt(((xy[:, None, :] - ap_xy[None, :, :]) ** 2).sum(-1)
                   + (floor_height * (floors[:, None] - ap_floor[None, :])) ** 2 + 1.0)
    other_building = buildings[:, None] != ap_building[None, :]
    rssi = (-30.0 - 30.0 * np.log10(dist) - 6.0 * np.abs(floors[:, None] - ap_floor[None, :])
            - 15.0 * other_building)
    rssi = rssi + rng.normal(0, noise_db, rssi.shape)
    rssi = np.where(rssi < missing_dbm, np.nan, rssi)
    meta = DatasetMeta(n_aps=n_aps, n_floors=n_floors, n_buildings=n_buildings, missing_sentinel=100.0,
                       coordinate_units="meters", floor_labels=list(range(n_floors)),
                       building_labels=list(range(n_buildings)),
                       ap_names=[f"WAP{i + 1:03d}" for i in range(n_aps)],
                       rssi_min=float(np.nanmin(rssi)), rssi_max=float(np.nanmax(rssi)))
    return RssiDataset(rssi, xy, floors.astype(np.intp), buildings.astype(np.intp), meta)


def write_csv(path, dataset: RssiDataset, sentinel: float = 100.0) -> None:
    """Write a dataset in UJI-style columns (WAPxxx, LONGITUDE, LATITUDE, FLOOR, BUILDINGID)."""
    names = dataset.meta.ap_names or [f"WAP{i + 1:03d}" for i in range(dataset.meta.n_aps)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*names, "LONGITUDE", "LATITUDE", "FLOOR", "BUILDINGID"])
        for i in range(len(dataset)):
            vals = [repr(sentinel) if np.isnan(v) else repr(float(v)) for v in dataset.rssi[i]]
            w.writerow([*vals, repr(float(dataset.positions[i, 0])), repr(float(dataset.positions[i, 1])),
                        dataset.meta.floor_labels[dataset.floors[i]],
                        dataset.meta.building_labels[dataset.buildings[i]]])
