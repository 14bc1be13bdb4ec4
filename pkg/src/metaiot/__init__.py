"""Simulation, design and anomaly detection toolkit for chipless split-ring-resonator sensors."""

from . import channel, circuit, expint, harness, neuralnet, optimizer, sensing
from .errors import MetaIoTError

__all__ = ["channel", "circuit", "expint", "harness", "neuralnet", "optimizer", "sensing",
           "MetaIoTError"]
__version__ = "0.1.0"
