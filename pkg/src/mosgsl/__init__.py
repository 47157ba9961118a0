"""Motif-driven subgraph structure learning for graph classification."""

__version__ = "0.1.0"
