"""Confounder-aware lesion segmentation at desk scale.

Gaussian self-modeling of confusion factors, boundary-uncertainty losses,
backdoor-intervention feature fusion, and an exact discrete adjustment
oracle, all on a minimal reverse-mode tensor substrate.
"""

__version__ = "0.1.0"
