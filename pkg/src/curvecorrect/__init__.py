"""Recover de-biased learning curves from selectively published accuracies."""

from .stats_core import CurveParams

__all__ = ["CurveParams"]
__version__ = "0.1.0"
