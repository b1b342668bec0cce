"""Robust spatial Gaussian-mixture background adjustment and tail calibration."""
__version__ = "0.1.0"
