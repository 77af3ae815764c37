"""Part-structure inference, segmentation refinement, and structure-aware
retrieval for labeled point clouds."""

__version__ = "0.1.0"
