"""Localization metrics, distance-error CDFs, grid sweeps and the noise-robustness statistic."""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .augmentation import AugmentConfig, augment_batch, stack_views

log = logging.getLogger(__name__)


@dataclass
class EvalReport:
    building_accuracy: float
    floor_accuracy: float
    mean_location_error: float
    cdf: list[tuple[float, float]]
    n_samples: int
    config: dict = field(default_factory=dict)
    seed: int | None = None

    def __post_init__(self):
        for name in ("building_accuracy", "floor_accuracy"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    @property
    def errors(self) -> np.ndarray:
        return np.array([e for e, _ in self.cdf])

    def percentile_error(self, q: float) -> float:
        """Smallest error whose CDF value reaches ``q`` (0 < q <= 1)."""
        for err, p in self.cdf:
            if p >= q - 1e-12:
                return err
        return self.cdf[-1][0]

    def to_dict(self) -> dict:
        return {
            "building_accuracy": self.building_accuracy,
            "floor_accuracy": self.floor_accuracy,
            "mean_location_error": self.mean_location_error,
            "median_location_error": self.percentile_error(0.5) if self.cdf else None,
            "p75_location_error": self.percentile_error(0.75) if self.cdf else None,
            "n_samples": self.n_samples,
            "config": self.config,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write(self, json_path, cdf_path=None) -> None:
        with open(json_path, "w") as fh:
            fh.write(self.to_json() + "\n")
        if cdf_path is not None:
            write_cdf_csv(cdf_path, self.cdf)


def distance_cdf(errors) -> list[tuple[float, float]]:
    """Sorted errors paired with the fraction k/N of samples at or below them."""
    errors = np.sort(np.asarray(errors, dtype=float))
    n = errors.size
    return [(float(e), (k + 1) / n) for k, e in enumerate(errors)]


def write_cdf_csv(path, cdf: Sequence[tuple[float, float]]) -> None:
    with open(path, "w") as fh:
        fh.write("error_m,percentile\n")
        for e, p in cdf:
            fh.write(f"{e!r},{p!r}\n")


def evaluate_predictions(pred_positions, pred_floors, pred_buildings, true_positions, true_floors,
                         true_buildings, config: Mapping | None = None, seed: int | None = None) -> EvalReport:
    """Score predictions; floor/building inputs may be class indices or (N, C) logits."""
    pred_positions = np.asarray(pred_positions, dtype=float)
    true_positions = np.asarray(true_positions, dtype=float)
    if pred_positions.shape != true_positions.shape or pred_positions.ndim != 2 or pred_positions.shape[1] != 2:
        raise ValueError(f"position arrays must both be (N, 2): {pred_positions.shape} vs {true_positions.shape}")
    n = pred_positions.shape[0]
    if n == 0:
        raise ValueError("cannot evaluate an empty test set")

    def labels(a):
        a = np.asarray(a)
        return a.argmax(axis=1) if a.ndim == 2 else a.astype(np.intp)

    errors = np.sqrt(((pred_positions - true_positions) ** 2).sum(axis=1))
    return EvalReport(
        building_accuracy=float(np.mean(labels(pred_buildings) == np.asarray(true_buildings))),
        floor_accuracy=float(np.mean(labels(pred_floors) == np.asarray(true_floors))),
        mean_location_error=float(errors.mean()),
        cdf=distance_cdf(errors),
        n_samples=n,
        config=dict(config or {}),
        seed=seed,
    )


def evaluate(X, positions, floors, buildings, net, scaler, config: Mapping | None = None,
             seed: int | None = None) -> EvalReport:
    from .training import predict

    pos, fl, bl = predict(net, X, scaler)
    return evaluate_predictions(pos, fl, bl, positions, floors, buildings, config=config, seed=seed)


# -- sweeps ------------------------------------------------------------------

def cell_seed(base_seed: int, cell_index: int) -> int:
    return int(np.random.SeedSequence([int(base_seed), int(cell_index)]).generate_state(1)[0])


@dataclass
class SweepResult:
    rows: list[dict]

    @property
    def failed(self) -> list[dict]:
        return [r for r in self.rows if r.get("error")]

    def to_json(self) -> str:
        return json.dumps({"rows": self.rows}, indent=2, sort_keys=True)

    def write_csv(self, path) -> None:
        metric_keys = ["building_accuracy", "floor_accuracy", "mean_location_error"]
        coord_keys = sorted({k for r in self.rows for k in r["coords"]})
        with open(path, "w") as fh:
            fh.write(",".join([*coord_keys, "seed", *metric_keys, "error"]) + "\n")
            for r in self.rows:
                report = r.get("report") or {}
                cells = [str(r["coords"].get(k, "")) for k in coord_keys] + [str(r["seed"])]
                cells += [repr(report[k]) if k in report else "" for k in metric_keys]
                cells.append((r.get("error") or "").replace(",", ";").replace("\n", " "))
                fh.write(",".join(cells) + "\n")


def sweep(grid: Mapping[str, Sequence], run_cell: Callable[[dict, int], EvalReport],
          base_seed: int = 0) -> SweepResult:
    """Run ``run_cell(coords, seed)`` for every point of the Cartesian grid.

    A failing cell records its error and the sweep continues.
    """
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ValueError("sweep grid must have at least one value on every axis")
    axes = list(grid)
    rows = []
    for i, values in enumerate(itertools.product(*(grid[a] for a in axes))):
        coords = dict(zip(axes, values))
        seed = cell_seed(base_seed, i)
        try:
            report = run_cell(coords, seed)
            rows.append({"coords": coords, "seed": seed, "report": report.to_dict(), "error": None})
        except Exception as exc:  # noqa: BLE001 - recorded per cell
            log.warning("sweep cell %s failed: %s", coords, exc)
            rows.append({"coords": coords, "seed": seed, "report": None,
                         "error": f"{type(exc).__name__}: {exc}"})
    return SweepResult(rows)


# -- noise robustness --------------------------------------------------------

def paired_cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cosine similarity of two (N, D) arrays."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    return (a * b).sum(axis=1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))


def noise_robustness(net, X, augment: AugmentConfig, levels: Sequence[float] = (0.0, 0.05, 0.1),
                     kind: str = "p_depolarizing") -> list[dict]:
    """Mean cos-sim between strong and weak embeddings at each noise level.

    The same per-row seeds are used at every level, so the only change
    between levels is the channel probability. ``shift`` is measured
    against the first level.
    """
    if kind not in ("p_bitflip", "p_phaseflip", "p_depolarizing", "p_readout"):
        raise ValueError(f"unknown noise kind {kind!r}")
    X = np.asarray(X, dtype=float)
    out, base = [], None
    for p in levels:
        noise = replace(augment.noise, **{kind: float(p)})
        cfg = replace(augment, noise=noise)
        strong, weak = stack_views(augment_batch(X, cfg, key=(0,)))
        sims = paired_cosine(net.embed(strong).data, net.embed(weak).data)
        mean = float(sims.mean())
        base = mean if base is None else base
        out.append({"kind": kind, "level": float(p), "mean_cos_sim": mean, "shift": abs(mean - base)})
    return out


def perturbation_statistics(c_st: np.ndarray, c_wt: np.ndarray, std: float, n_draws: int,
                            rng: np.random.Generator) -> dict:
    """Monte-Carlo check that zero-mean perturbations of ``c_st`` leave similarity unbiased.

    Reports the mean of dot(eps, c_wt), the mean change in cosine similarity,
    and the second-order bias predicted by a Taylor expansion.
    """
    c_st = np.asarray(c_st, float)
    c_wt = np.asarray(c_wt, float)
    eps = rng.normal(0.0, std, (n_draws, c_st.size))
    dots = eps @ c_wt
    base = float(paired_cosine(c_st[None], c_wt[None])[0])
    noisy = paired_cosine(c_st[None] + eps, np.broadcast_to(c_wt, eps.shape))
    ns = std / np.linalg.norm(c_st)
    d = c_st.size
    # E[cos] - cos = cos * s^2 * (1 - d) / 2 + O(s^4) for isotropic eps
    predicted = base * ns ** 2 * (1.0 - d) / 2.0
    return {
        "mean_dot": float(dots.mean()),
        "dot_bound": 3.0 * std * np.sqrt(d) / np.sqrt(n_draws),
        "mean_delta_cos": float(noisy.mean() - base),
        "delta_cos_se": float(noisy.std(ddof=1) / np.sqrt(n_draws)),
        "relative_std": float(ns),
        "predicted_bias": float(predicted),
        "base_cos": base,
    }
