"""Ingestion module: corpus loading, vocabulary and segmentation."""
