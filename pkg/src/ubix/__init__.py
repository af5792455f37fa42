"""Uncertainty-based instance exclusion for multiple-instance learning."""

from ubix.core import (
    BagLogits,
    BagPrediction,
    ValidationError,
    bag_predict,
    bag_probability,
    instance_probability,
    mil_pool,
    softmax,
)
from ubix.exclusion import InferenceMode, UbixParams, calibrate, infer
from ubix.uncertainty import UncertaintyMeasure, uncertainty

__all__ = [
    "BagLogits",
    "BagPrediction",
    "InferenceMode",
    "UbixParams",
    "UncertaintyMeasure",
    "ValidationError",
    "bag_predict",
    "bag_probability",
    "calibrate",
    "infer",
    "instance_probability",
    "mil_pool",
    "softmax",
    "uncertainty",
]

__version__ = "0.1.0"
