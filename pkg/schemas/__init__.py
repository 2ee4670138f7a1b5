"""Schemas module for corpus and training validation."""
