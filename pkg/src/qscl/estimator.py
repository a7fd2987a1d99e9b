"""scikit-learn style front end: ``QSCLLocalizer().fit(X, y).predict(X)``."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .augmentation import AugmentConfig
from .encoders import EncoderConfig, Network
from .losses import LossConfig
from .quantum import NoiseSpec
from .training import TrainConfig, finetune, predict, pretrain


class QSCLLocalizer(RegressorMixin, BaseEstimator):
    """Contrastively pretrained RSSI localizer.

    ``X`` holds preprocessed RSSI rows (values in [0, 1], one column per AP).
    ``y`` is (N, 4): x, y, floor index, building index. Rows passed as
    ``X_unlabeled`` to :meth:`fit` join the contrastive pool; labeled rows
    are always part of it.

    ``predict`` returns (N, 2) positions; ``score`` is the negative mean
    Euclidean error, so larger is better as sklearn expects.
    """

    def __init__(self, n_shots=1, sigma_eta=0.05, sigma_weak=0.05, p_depolarizing=0.0,
                 enforce_delta_clamp=True, channels=64, pooled_len=16, heads=4, proj_dim=64,
                 head_input="features", tau=0.1, lambda_reg=1.0, lambda_class=1.0, lr=1e-3,
                 batch_size=64, epochs=100, finetune_epochs=100, finetune_lr=1e-3,
                 freeze_encoder=False, pretrain=True, random_state=0):
        self.n_shots = n_shots
        self.sigma_eta = sigma_eta
        self.sigma_weak = sigma_weak
        self.p_depolarizing = p_depolarizing
        self.enforce_delta_clamp = enforce_delta_clamp
        self.channels = channels
        self.pooled_len = pooled_len
        self.heads = heads
        self.proj_dim = proj_dim
        self.head_input = head_input
        self.tau = tau
        self.lambda_reg = lambda_reg
        self.lambda_class = lambda_class
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.finetune_epochs = finetune_epochs
        self.finetune_lr = finetune_lr
        self.freeze_encoder = freeze_encoder
        self.pretrain = pretrain
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        aug = AugmentConfig(n_shots=self.n_shots, sigma_eta=self.sigma_eta, sigma_weak=self.sigma_weak,
                            noise=NoiseSpec(p_depolarizing=self.p_depolarizing),
                            enforce_delta_clamp=self.enforce_delta_clamp, seed=self.random_state)
        return TrainConfig(tau=self.tau, lr=self.lr, batch_size=self.batch_size, epochs=self.epochs,
                           seed=self.random_state, finetune_epochs=self.finetune_epochs,
                           finetune_lr=self.finetune_lr, freeze_encoder=self.freeze_encoder, augment=aug)

    @staticmethod
    def _split_targets(y):
        y = np.asarray(y, dtype=float)
        if y.ndim != 2 or y.shape[1] != 4:
            raise ValueError(f"y must be (N, 4) [x, y, floor, building], got shape {y.shape}")
        labels = y[:, 2:]
        if np.any(labels < 0) or np.any(labels != np.round(labels)):
            raise ValueError("floor and building columns must hold non-negative integer indices")
        return y[:, :2], labels[:, 0].astype(np.intp), labels[:, 1].astype(np.intp)

    def fit(self, X, y, X_unlabeled=None):
        X, y = check_X_y(X, y, multi_output=True, dtype=np.float64)
        positions, floors, buildings = self._split_targets(y)
        cfg = self._train_config()
        enc = EncoderConfig(input_dim=X.shape[1], channels=self.channels, pooled_len=self.pooled_len,
                            heads=self.heads, proj_dim=self.proj_dim, head_input=self.head_input,
                            n_floors=int(floors.max()) + 1, n_buildings=int(buildings.max()) + 1,
                            seed=self.random_state)
        net = Network(enc)
        self.pretrain_history_ = []
        if self.pretrain:
            pool = X
            if X_unlabeled is not None:
                extra = check_array(X_unlabeled, dtype=np.float64)
                if extra.shape[1] != X.shape[1]:
                    raise ValueError(f"X_unlabeled has {extra.shape[1]} features, expected {X.shape[1]}")
                pool = np.vstack([extra, X])
            self.pretrain_history_ = pretrain(pool, net, cfg)
        loss_cfg = LossConfig(tau=self.tau, lambda_reg=self.lambda_reg, lambda_class=self.lambda_class)
        self.finetune_history_, self.scaler_ = finetune(X, positions, floors, buildings, net, cfg, loss_cfg)
        self.network_ = net
        self.n_features_in_ = X.shape[1]
        return self

    def _check(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def _predict_all(self, X):
        X = self._check(X)
        return predict(self.network_, X, self.scaler_)

    def predict(self, X):
        return self._predict_all(X)[0]

    def predict_floor(self, X):
        return self._predict_all(X)[1]

    def predict_building(self, X):
        return self._predict_all(X)[2]

    def transform(self, X):
        """Unit-norm contrastive embeddings, (N, proj_dim)."""
        return self.network_.embed(self._check(X)).data

    def score(self, X, y, sample_weight=None):
        X = self._check(X)
        positions = np.asarray(y, dtype=float)
        if positions.ndim == 2 and positions.shape[1] == 4:
            positions = positions[:, :2]
        err = np.sqrt(((self.predict(X) - positions) ** 2).sum(axis=1))
        return -float(np.average(err, weights=sample_weight))
