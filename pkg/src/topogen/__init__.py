"""Guided-diffusion topology generation with a supporting FEA/SIMP stack."""

__version__ = "0.1.0"
