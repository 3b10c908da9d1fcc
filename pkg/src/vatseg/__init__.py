"""Segmentation of visceral and subcutaneous adipose tissue in water-fat MRI.

The package carries its own small reverse-mode autodiff engine, the 2D U-Net
and 3D V-Net built on it, the training and cross-validation harness, input
formatting, a synthetic phantom generator and the evaluation metrics.
"""

__version__ = "0.1.0"
