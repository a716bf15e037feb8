"""Capacity scaling of arbitrary wireless networks: hierarchical relaying,
cooperative multi-hop, cut-set bounds and scaling-exponent experiments."""

__version__ = "0.1.0"
