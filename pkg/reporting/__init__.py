"""Attention heatmaps and operation-count benchmarks."""
