"""Calibrated signed/blocked message passing for GCNs, with CSBM theory checks."""

__version__ = "0.1.0"
