"""Hyperfine structure, optical pumping and inverse problems for Eu:YSO-type ions."""

__version__ = "0.1.0"
