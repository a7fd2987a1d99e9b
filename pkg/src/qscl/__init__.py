"""Contrastive WiFi-RSSI localization with quantum-measurement augmentation."""

__version__ = "0.1.0"

from .augmentation import AugmentConfig, GaussianAugmenter, QuantumAugmenter, augment_pair  # noqa: E402
from .encoders import EncoderConfig, Network  # noqa: E402
from .estimator import QSCLLocalizer  # noqa: E402
from .losses import LossConfig, bidirectional_loss  # noqa: E402
from .quantum import NoiseSpec  # noqa: E402
from .training import TrainConfig, finetune, pretrain  # noqa: E402

__all__ = ["AugmentConfig", "EncoderConfig", "GaussianAugmenter", "LossConfig", "Network", "NoiseSpec",
           "QSCLLocalizer", "QuantumAugmenter", "TrainConfig", "augment_pair", "bidirectional_loss",
           "finetune", "pretrain"]
