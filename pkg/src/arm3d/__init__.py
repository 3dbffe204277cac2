"""Attention-based relation module for 3D object detection, with a
synthetic desk-scale detector harness, trainable end to end in double
precision with exact reverse-mode gradients."""

__version__ = "0.1.0"
