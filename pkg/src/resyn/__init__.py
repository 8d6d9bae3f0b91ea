"""Detect unexpected objects and adversarial inputs for semantic segmentation
by resynthesizing the image from its predicted labels and scoring the
discrepancies."""
from .datamodel import ANOMALY, IGNORE, NORMAL, TOY, CITYSCAPES, LabelSpec, Sample
from .errors import CapabilityError, ConfigError, DataError, ResynError

__version__ = "0.1.0"

__all__ = [
    "ANOMALY", "IGNORE", "NORMAL", "TOY", "CITYSCAPES", "LabelSpec", "Sample",
    "CapabilityError", "ConfigError", "DataError", "ResynError",
]
