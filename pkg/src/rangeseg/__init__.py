"""Range-view LiDAR segmentation toolkit: projection, class statistics,
augmentation, loss kernels, mask-classification head, post-processing and
evaluation."""

__version__ = "0.1.0"
