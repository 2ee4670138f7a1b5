"""Optimization, training loop and evaluation."""
