"""Desk-scale sentence scoring with sliding, causal, masked and Bi-LM scorers."""

__version__ = "0.1.0"
