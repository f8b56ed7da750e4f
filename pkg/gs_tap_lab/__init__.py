"""
GS-TAP Lab - numerical laboratory for the Ghatak-Sherrington spin glass
"""
from .config import TOOL_VERSION
from .models import ModelParams, OrderParams
from .quadrature import build_rule, expect
from .services.fixedpoint import solve, contraction_certificate, beta_tilde
from .services.gibbs import enumerate_states, mcmc_run, generate_disorder
from .cli import main

__version__ = TOOL_VERSION
__all__ = [
    "ModelParams",
    "OrderParams",
    "build_rule",
    "expect",
    "solve",
    "contraction_certificate",
    "beta_tilde",
    "enumerate_states",
    "mcmc_run",
    "generate_disorder",
    "main",
]
