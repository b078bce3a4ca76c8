"""Learned microarchitecture simulation on a desk-scale toy core."""

__version__ = "0.1.0"
