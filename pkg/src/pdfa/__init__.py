"""Direct feedback alignment with a simulated noisy optical projection, plus a
Renyi / (epsilon, delta) differential-privacy accountant for the noisy updates."""

__version__ = "0.1.0"

from .clipping import ClipConfig
from .estimator import DFAClassifier
from .network import Network
from .privacy import MechanismBounds, PrivacyReport, audit_report
from .training import Algorithm, Seeds, TrainConfig, Trainer, train

__all__ = [
    "Algorithm", "ClipConfig", "DFAClassifier", "MechanismBounds", "Network", "PrivacyReport",
    "Seeds", "TrainConfig", "Trainer", "audit_report", "train",
]
