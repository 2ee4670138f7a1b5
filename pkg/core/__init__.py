"""Core module for configuration, logging, tensors and checkpoints."""
