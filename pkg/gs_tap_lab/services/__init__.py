"""
Services module for GS-TAP Lab
"""
from . import fixedpoint, gibbs, experiments, reporting

__all__ = ["fixedpoint", "gibbs", "experiments", "reporting"]
