"""
Bayesian CycleGAN desk-scale engine and theory oracle.
"""

__version__ = "0.1.0"
