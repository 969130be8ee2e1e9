"""Multi-sensor sequential change detection with an unknown propagation order.

The package simulates a network of sensors whose measurement distribution
shifts one sensor at a time, in a random order, and provides stopping rules
that declare the change at a fusion center: a single-chart posterior test
that averages over all orders, a bank of per-order charts, and a cheap
variant driven by an online estimate of the order.  Centralized, quantized
(uniform-sampling) and level-crossing channels are supported, together with
a Monte Carlo harness for delay/false-alarm tradeoff curves and a small
value-iteration reference solver.
"""

from .model import (
    ChangePattern,
    ChangeScenario,
    DensityPair,
    GaussianShift,
    ModelParams,
)
from .quantizer import MessagePmfPair, QuantizerSpec
from .stats import ChainCoeffs, SuffStats
from .detectors import Detector, DetectorConfig
from .harness import TradeoffPoint, TrialResult

__all__ = [
    "ChangePattern",
    "ChangeScenario",
    "ChainCoeffs",
    "DensityPair",
    "Detector",
    "DetectorConfig",
    "GaussianShift",
    "MessagePmfPair",
    "ModelParams",
    "QuantizerSpec",
    "SuffStats",
    "TradeoffPoint",
    "TrialResult",
]

__version__ = "0.1.0"
