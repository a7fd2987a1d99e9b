"""Strong (quantum-measurement) and weak (Gaussian) views of RSSI vectors.

The strong view encodes each AP reading as an Rx rotation angle, passes the
qubit through the configured noise channel, estimates the angle back from a
finite number of measurement shots and maps it to the RSSI scale. The weak
view is additive Gaussian noise.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .quantum import NoiseSpec, noisy_excited_probability, sample_noisy_counts

HALF_PI = np.pi / 2


class RangeError(ValueError):
    """An input lies outside the domain the mapping is defined on."""


@dataclass(frozen=True)
class AugmentConfig:
    """Knobs for both augmentation paths.

    ``sigma_eta`` is the post-measurement Gaussian jitter of the strong view;
    ``sigma_weak`` is the noise scale of the weak view. Both are in
    normalized RSSI units.
    """

    n_shots: int = 1
    sigma_eta: float = 0.05
    sigma_weak: float = 0.05
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    enforce_delta_clamp: bool = True
    seed: int = 0

    def __post_init__(self):
        if int(self.n_shots) != self.n_shots or self.n_shots < 1:
            raise ValueError(f"n_shots must be an integer >= 1, got {self.n_shots}")
        if self.sigma_eta < 0 or self.sigma_weak < 0:
            raise ValueError("standard deviations must be non-negative")
        if isinstance(self.noise, dict):
            object.__setattr__(self, "noise", NoiseSpec(**self.noise))


@dataclass
class AugmentedPair:
    strong: np.ndarray
    weak: np.ndarray
    theta: np.ndarray
    theta_prime: np.ndarray
    per_ap_delta: np.ndarray
    per_ap_Delta: np.ndarray
    eta: np.ndarray


def rssi_to_angle(x_i, max_x):
    """Map a scaled RSSI reading in [0, max_x] to a rotation angle in [0, pi]."""
    max_x = float(max_x)
    if not max_x > 0:
        raise ValueError(f"max_x must be positive, got {max_x}")
    x = np.asarray(x_i, dtype=float)
    if np.any(x < 0) or np.any(x > max_x):
        raise RangeError(f"RSSI values must lie in [0, {max_x}]")
    theta = x * np.pi / max_x
    return float(theta) if theta.ndim == 0 else theta


def estimate_augmented_angle(ones, n_shots: int):
    """Angle whose excited-state probability equals the observed shot frequency."""
    ones = np.asarray(ones)
    if n_shots < 1:
        raise ValueError(f"n_shots must be >= 1, got {n_shots}")
    if np.any(ones < 0) or np.any(ones > n_shots):
        raise ValueError(f"counts must lie in [0, {n_shots}]")
    theta = 2.0 * np.arcsin(np.sqrt(ones / n_shots))
    return float(theta) if theta.ndim == 0 else theta


def clamp_delta(theta_prime, theta):
    """Pull ``theta_prime`` to within pi/2 of ``theta``."""
    delta = np.clip(np.asarray(theta_prime, float) - np.asarray(theta, float), -HALF_PI, HALF_PI)
    out = np.asarray(theta, float) + delta
    return float(out) if out.ndim == 0 else out


def angle_to_rssi(theta_prime, max_x):
    out = np.asarray(theta_prime, dtype=float) * float(max_x) / np.pi
    return float(out) if out.ndim == 0 else out


def strong_augment(x, cfg: AugmentConfig, rng: np.random.Generator, max_x: float | None = None):
    """Quantum-measurement view of one RSSI vector.

    Returns ``(strong, per_ap_delta, per_ap_Delta)``; use
    :func:`strong_augment_detail` for the angles and jitter as well.
    """
    d = strong_augment_detail(x, cfg, rng, max_x)
    return d.strong, d.per_ap_delta, d.per_ap_Delta


def strong_augment_detail(x, cfg: AugmentConfig, rng: np.random.Generator,
                          max_x: float | None = None) -> AugmentedPair:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise ValueError(f"expected a non-empty 1-D RSSI vector, got shape {x.shape}")
    scale = float(x.max()) if max_x is None else float(max_x)
    n = x.size
    if scale <= 0:
        warnings.warn("all-zero RSSI vector: strong view reduces to Gaussian jitter", RuntimeWarning,
                      stacklevel=2)
        theta = np.zeros(n)
        theta_prime = np.zeros(n)
        delta = np.zeros(n)
        eta = rng.normal(0.0, cfg.sigma_eta, n) if cfg.sigma_eta > 0 else np.zeros(n)
        strong = x + eta
    else:
        theta = rssi_to_angle(x, scale)
        p1 = noisy_excited_probability(theta, cfg.noise)
        ones = sample_noisy_counts(p1, int(cfg.n_shots), cfg.noise.p_readout, rng)
        measured = estimate_augmented_angle(ones, int(cfg.n_shots))
        delta = measured - theta
        if cfg.enforce_delta_clamp:
            delta = np.clip(delta, -HALF_PI, HALF_PI)
        theta_prime = theta + delta
        eta = rng.normal(0.0, cfg.sigma_eta, n) if cfg.sigma_eta > 0 else np.zeros(n)
        strong = theta_prime * scale / np.pi + eta
    return AugmentedPair(strong=strong, weak=np.empty(0), theta=theta, theta_prime=theta_prime,
                         per_ap_delta=delta, per_ap_Delta=strong - x, eta=eta)


def weak_augment(x, sigma_weak: float, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("expected a non-empty RSSI vector")
    if sigma_weak < 0:
        raise ValueError(f"sigma_weak must be non-negative, got {sigma_weak}")
    if sigma_weak == 0:
        return x.copy()
    return x + rng.normal(0.0, sigma_weak, x.shape)


def sample_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent stream for one sample, derived from the run seed and a key path."""
    return np.random.default_rng([int(seed), *(int(k) for k in key)])


def augment_pair(x, cfg: AugmentConfig, rng: np.random.Generator) -> AugmentedPair:
    pair = strong_augment_detail(x, cfg, rng)
    pair.weak = weak_augment(x, cfg.sigma_weak, rng)
    return pair


def augment_batch(X, cfg: AugmentConfig, key: Sequence[int] = (), indices: Sequence[int] | None = None):
    """Augment every row of ``X`` with its own derived RNG stream.

    Row ``r`` uses the stream ``(cfg.seed, *key, indices[r])`` so the result
    does not depend on batch composition or evaluation order.
    """
    X = np.asarray(X, dtype=float)
    if indices is None:
        indices = range(X.shape[0])
    pairs = [augment_pair(row, cfg, sample_rng(cfg.seed, *key, idx)) for row, idx in zip(X, indices)]
    return pairs


def stack_views(pairs: Sequence[AugmentedPair]) -> tuple[np.ndarray, np.ndarray]:
    return np.stack([p.strong for p in pairs]), np.stack([p.weak for p in pairs])


AUDIT_COLUMNS = ("sample", "ap", "theta", "theta_prime", "delta", "Delta")


def write_audit_csv(path, pairs: Sequence[AugmentedPair]) -> int:
    """One row per (sample, AP). Returns the number of rows written."""
    rows = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(AUDIT_COLUMNS)
        for s, p in enumerate(pairs):
            for a in range(p.strong.size):
                writer.writerow([s, a, repr(float(p.theta[a])), repr(float(p.theta_prime[a])),
                                 repr(float(p.per_ap_delta[a])), repr(float(p.per_ap_Delta[a]))])
                rows += 1
    return rows


class QuantumAugmenter(TransformerMixin, BaseEstimator):
    """Transformer producing the strong quantum-measurement view of each row.

    Stateless apart from input validation; ``transform`` is deterministic
    for a fixed ``random_state`` and ``stream``.

    Parameters
    ----------
    n_shots : int
        Measurements per qubit used to estimate the augmented angle.
    sigma_eta : float
        Std-dev of the Gaussian jitter added after reconstruction.
    p_bitflip, p_phaseflip, p_depolarizing, p_readout : float
        Noise-channel and readout-flip probabilities.
    enforce_delta_clamp : bool
        Clip the angle deviation to +-pi/2.
    random_state : int
    stream : int
        Extra key mixed into the per-row seeds, e.g. an epoch counter.
    """

    def __init__(self, n_shots=1, sigma_eta=0.05, p_bitflip=0.0, p_phaseflip=0.0,
                 p_depolarizing=0.0, p_readout=0.0, enforce_delta_clamp=True,
                 random_state=0, stream=0):
        self.n_shots = n_shots
        self.sigma_eta = sigma_eta
        self.p_bitflip = p_bitflip
        self.p_phaseflip = p_phaseflip
        self.p_depolarizing = p_depolarizing
        self.p_readout = p_readout
        self.enforce_delta_clamp = enforce_delta_clamp
        self.random_state = random_state
        self.stream = stream

    def _config(self) -> AugmentConfig:
        noise = NoiseSpec(self.p_bitflip, self.p_phaseflip, self.p_depolarizing, self.p_readout)
        return AugmentConfig(n_shots=self.n_shots, sigma_eta=self.sigma_eta, sigma_weak=0.0,
                             noise=noise, enforce_delta_clamp=self.enforce_delta_clamp,
                             seed=self.random_state)

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self._config()
        self.n_features_in_ = X.shape[1]
        return self

    def augment(self, X) -> list[AugmentedPair]:
        check_is_fitted(self, "n_features_in_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return augment_batch(X, self._config(), key=(self.stream,))

    def transform(self, X):
        return np.stack([p.strong for p in self.augment(X)])


class GaussianAugmenter(TransformerMixin, BaseEstimator):
    """Transformer adding N(0, sigma^2) noise to every entry."""

    def __init__(self, sigma=0.05, random_state=0, stream=0):
        self.sigma = sigma
        self.random_state = random_state
        self.stream = stream

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if self.sigma < 0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = check_array(X, dtype=np.float64)
        return np.stack([weak_augment(row, self.sigma, sample_rng(self.random_state, self.stream, i))
                         for i, row in enumerate(X)])
