"""Multimodal city-grid traffic-accident risk classification with dynamic-weight fusion."""

__version__ = "0.1.0"
