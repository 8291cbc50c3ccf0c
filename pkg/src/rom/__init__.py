"""Relational object matching: learned object features, attentional GNN
refinement, Sinkhorn partial assignment, and keypoint-score fusion."""

__version__ = "0.1.0"
